"""Class-activation heat maps and the pointing-inside-the-box hit test."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError
from .neural_core import Tensor, ops


@dataclass
class BBox:
    """Axis-aligned box: x/y is the top-left corner (x = column, y = row)."""

    x: int
    y: int
    w: int
    h: int

    def validate(self, hw: tuple[int, int]) -> None:
        h, w = hw
        if self.w < 1 or self.h < 1:
            raise ConfigError(f"degenerate box {self}")
        if self.x < 0 or self.y < 0 or self.x + self.w > w or self.y + self.h > h:
            raise ConfigError(f"box {self} exceeds a {h}x{w} image")

    def contains(self, row: int, col: int) -> bool:
        return self.y <= row < self.y + self.h and self.x <= col < self.x + self.w

    def shifted(self, dx: int, dy: int) -> "BBox":
        return BBox(self.x + dx, self.y + dy, self.w, self.h)

    def as_list(self) -> list[int]:
        return [int(self.x), int(self.y), int(self.w), int(self.h)]


@dataclass
class HeatMap:
    """A [0, 1] activation map tied to one image and one label."""

    values: np.ndarray
    label_index: int
    image_id: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def cam_raw(features: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Linear part of the class-activation map: sum_c w_c * features_c.

    Linear in both arguments; clamping and normalization happen in cam().
    """
    f = np.asarray(features, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if f.ndim != 3 or w.ndim != 1 or f.shape[0] != w.shape[0]:
        raise ShapeError(
            f"cam needs (C, H, W) features and (C,) weights, got {f.shape} and {w.shape}"
        )
    return np.tensordot(w, f, axes=1)


def cam(features: np.ndarray, weights: np.ndarray, label_index: int = 0, image_id: int = 0) -> HeatMap:
    """Weighted channel sum, negatives clamped to zero, max-normalized.

    An identically nonpositive map comes back all-zero.
    """
    raw = np.maximum(cam_raw(features, weights), 0.0)
    peak = raw.max()
    if peak > 0.0:
        raw = raw / peak
    return HeatMap(raw, label_index, image_id)


def upsample_heatmap(hm: HeatMap, out_hw: tuple[int, int]) -> HeatMap:
    """Bilinear (corner-aligned) upsample to image resolution."""
    oh, ow = int(out_hw[0]), int(out_hw[1])
    h, w = hm.values.shape
    if oh < h or ow < w:
        raise ConfigError(f"target {oh}x{ow} is smaller than the map {h}x{w}")
    grid = ops.resize_bilinear(Tensor(hm.values[None, None]), (oh, ow)).values[0, 0]
    return HeatMap(np.clip(grid, 0.0, 1.0), hm.label_index, hm.image_id)


def localization_hit(hm: HeatMap, box: BBox) -> bool:
    """True when the map's argmax (first occurrence, row-major) is in the box.

    The map must already be at image resolution, i.e. the box and map share
    a coordinate frame.
    """
    box.validate(hm.values.shape)
    r, c = np.unravel_index(int(np.argmax(hm.values)), hm.values.shape)
    return box.contains(int(r), int(c))


def write_pgm(path, hm: HeatMap) -> None:
    """Binary PGM (P5, maxval 255); intensities are round(v * 255)."""
    v = np.asarray(hm.values, dtype=np.float64)
    if v.ndim != 2:
        raise ShapeError(f"heat map must be 2-D, got {v.shape}")
    data = np.clip(np.rint(v * 255.0), 0, 255).astype(np.uint8)
    h, w = v.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def write_sidecar(path, hm: HeatMap, box: BBox | None, hit: bool | None, prob: float | None = None) -> None:
    """JSON companion to a PGM: ids, argmax, box, and the hit verdict."""
    r, c = np.unravel_index(int(np.argmax(hm.values)), hm.values.shape)
    payload = {
        "image_id": hm.image_id,
        "label_index": hm.label_index,
        "argmax": [int(r), int(c)],
        "box": None if box is None else box.as_list(),
        "hit": hit,
        "prob": prob,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")


@dataclass
class LocalizationReport:
    """Pointing-game tally over one label of a dataset."""

    label_index: int
    positives: int
    classified: int
    hits: int

    @property
    def hit_rate(self) -> float | None:
        return None if self.classified == 0 else self.hits / self.classified


def export_heatmaps(
    model,
    dataset,
    label_index: int,
    out_dir,
    crop: int | None = None,
    limit: int | None = None,
) -> list[Path]:
    """Write PGM heat maps plus JSON sidecars for positives of one label.

    Exports the first ``limit`` positive samples (dataset order), hit or
    miss; returns the PGM paths.
    """
    from .cross_attention import feature_maps, forward_probs
    from .synth_data import crop_batch

    if not 0 <= label_index < dataset.label_count:
        raise ConfigError(f"label index {label_index} out of range")
    if crop is None:
        crop = dataset.default_crop
    offset = (dataset.hw - crop) // 2
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    weights = model.classifier.weight.values[label_index]
    positives = [(i, s) for i, s in enumerate(dataset.samples) if s.labels[label_index]]
    if limit is not None:
        positives = positives[:limit]
    paths: list[Path] = []
    for idx, sample in positives:
        imgs = Tensor(crop_batch([sample], crop))
        prob = float(forward_probs(model, imgs, training=False).values[0, label_index])
        feats = feature_maps(model, imgs).values[0]
        hm = upsample_heatmap(cam(feats, weights, label_index, idx), (crop, crop))
        box = sample.boxes.get(label_index)
        shifted = None if box is None else box.shifted(-offset, -offset)
        hit = None if shifted is None else localization_hit(hm, shifted)
        stem = out_dir / f"sample{idx:05d}_label{label_index}"
        pgm = stem.with_suffix(".pgm")
        write_pgm(pgm, hm)
        write_sidecar(stem.with_suffix(".json"), hm, shifted, hit, prob)
        paths.append(pgm)
    return paths


def localization_score(
    model,
    dataset,
    label_index: int,
    crop: int | None = None,
    threshold: float = 0.5,
    batch_size: int = 64,
) -> LocalizationReport:
    """Hit rate among correctly classified positives of one label.

    A positive counts as classified when its predicted probability exceeds
    ``threshold``; each classified positive scores a hit when the upsampled
    CAM argmax lands inside its (crop-shifted) box.
    """
    from .cross_attention import feature_maps, forward_probs
    from .synth_data import crop_batch

    if not 0 <= label_index < dataset.label_count:
        raise ConfigError(f"label index {label_index} out of range")
    if crop is None:
        crop = dataset.default_crop
    offset = (dataset.hw - crop) // 2
    weights = model.classifier.weight.values[label_index]
    positives = [
        (i, s) for i, s in enumerate(dataset.samples) if s.labels[label_index]
    ]
    classified = 0
    hits = 0
    for start in range(0, len(positives), batch_size):
        part = positives[start : start + batch_size]
        imgs = Tensor(crop_batch([s for _, s in part], crop))
        probs = forward_probs(model, imgs, training=False).values[:, label_index]
        feats = feature_maps(model, imgs).values
        for (idx, sample), p, f in zip(part, probs, feats):
            if p <= threshold:
                continue
            classified += 1
            box = sample.boxes.get(label_index)
            if box is None:
                continue
            hm = upsample_heatmap(cam(f, weights, label_index, idx), (crop, crop))
            if localization_hit(hm, box.shifted(-offset, -offset)):
                hits += 1
    return LocalizationReport(label_index, len(positives), classified, hits)
