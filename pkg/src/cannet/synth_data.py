"""Synthetic multi-label glyph dataset with controlled class imbalance.

Each label index owns a glyph family (square, disk, plus, ring, diagonal
cross, bars; families cycle past six labels).  Labels are independent
Bernoulli draws with configurable prevalences, so rare labels are rare by
construction.  Positive labels render their glyph at a random position with
random size and intensity on a canvas ``hw + 8`` pixels wide; training
crops ``hw`` at random offsets, evaluation crops the center.  Glyphs stay
at least 8 px from every canvas edge, which keeps them fully visible in
every possible crop.  Uniform additive noise covers the canvas, and every
rendered glyph gets a tight bounding box in canvas coordinates.

Samples carry a ``group_id`` (1-3 samples per group); splits are assigned
at group granularity so correlated samples never straddle splits.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError, ShapeError
from .localization import BBox
from .neural_core.tensor import _read_exact

DATASET_MAGIC = b"CAND"
DATASET_VERSION = 1

# Canvas exceeds the crop by this much; placement keeps glyphs this far
# from the canvas edge so no crop can cut one off.
CANVAS_PAD = 8
GLYPH_SIZE = (8, 16)
GLYPH_INTENSITY = (0.55, 0.95)
# per-family brightness factor: plus signs and rings are deliberately faint
# so the scarcer labels are also the hardest to see
FAMILY_CONTRAST = (1.0, 1.0, 0.65, 0.8, 1.0, 1.0)
# every image carries unlabeled faint clutter: filled disks that mimic rings
# minus the hole, and diagonal crosses that mimic plus signs rotated 45
# degrees, so the faint labels cannot be called from brightness alone
CLUTTER_FAMILIES = (1, 4)
CLUTTER_CONTRAST = 0.4
CLUTTER_SIZE = (6, 11)
MAX_CLUTTER = 2
MAX_GROUP = 3


@dataclass(eq=False)
class Sample:
    image: np.ndarray  # float32, (1, H, W), values in [0, 1]
    labels: np.ndarray  # uint8, (L,)
    boxes: dict[int, BBox]
    group_id: int


@dataclass(eq=False)
class Dataset:
    samples: list[Sample]
    label_names: list[str]
    pos_counts: np.ndarray
    neg_counts: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def label_count(self) -> int:
        return len(self.label_names)

    @property
    def hw(self) -> int:
        """Canvas extent (square images)."""
        return self.samples[0].image.shape[1]

    @property
    def default_crop(self) -> int:
        return self.hw - CANVAS_PAD

    def __len__(self) -> int:
        return len(self.samples)


def _counts(samples: list[Sample], label_count: int) -> tuple[np.ndarray, np.ndarray]:
    pos = np.zeros(label_count, dtype=np.int64)
    for s in samples:
        pos += s.labels
    return pos, len(samples) - pos


def _glyph_mask(family: int, size: int) -> np.ndarray:
    """Boolean stencil for one glyph family, tight-cropped to its extent."""
    fam = family % 6
    idx = np.arange(size, dtype=np.float64)
    rr, cc = np.meshgrid(idx, idx, indexing="ij")
    center = (size - 1) / 2.0
    if fam == 0:  # filled square
        mask = np.ones((size, size), dtype=bool)
    elif fam == 1:  # filled disk
        mask = (rr - center) ** 2 + (cc - center) ** 2 <= (size / 2.0) ** 2
    elif fam == 2:  # plus sign
        arm = max(2, size // 3)
        lo, hi = center - arm / 2.0, center + arm / 2.0
        mask = ((rr >= lo) & (rr <= hi)) | ((cc >= lo) & (cc <= hi))
    elif fam == 3:  # ring
        d2 = (rr - center) ** 2 + (cc - center) ** 2
        mask = (d2 <= (size / 2.0) ** 2) & (d2 >= (size / 4.0) ** 2)
    elif fam == 4:  # diagonal cross
        t = max(1.0, size / 6.0)
        mask = (np.abs(rr - cc) <= t) | (np.abs(rr + cc - (size - 1)) <= t)
    else:  # horizontal bars
        band = max(1, size // 4)
        mask = (rr.astype(np.int64) // band) % 2 == 0
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return mask[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]


def generate(
    seed: int,
    n_samples: int,
    hw: int = 64,
    prevalences=(0.5, 0.2, 0.05, 0.02),
    noise_level: float = 0.3,
) -> Dataset:
    """Deterministically synthesize a dataset; same arguments, same bits."""
    if n_samples < 1:
        raise ConfigError(f"n_samples must be >= 1, got {n_samples}")
    if hw < 32:
        raise ConfigError(f"image extent must be >= 32, got {hw}")
    prev = np.asarray(prevalences, dtype=np.float64)
    if prev.ndim != 1 or prev.size < 1:
        raise ConfigError("prevalences must be a nonempty vector")
    if np.any(prev <= 0.0) or np.any(prev >= 1.0):
        raise ConfigError(f"prevalences must lie strictly in (0, 1), got {prev.tolist()}")
    if not 0.0 <= noise_level <= 1.0:
        raise ConfigError(f"noise level must be in [0, 1], got {noise_level}")
    canvas = hw + CANVAS_PAD
    label_count = prev.size
    rng = np.random.default_rng(seed)
    samples: list[Sample] = []
    group_id = -1
    group_left = 0
    for _ in range(n_samples):
        if group_left == 0:
            group_id += 1
            group_left = int(rng.integers(1, MAX_GROUP + 1))
        group_left -= 1
        labels = (rng.random(label_count) < prev).astype(np.uint8)
        img = np.zeros((canvas, canvas), dtype=np.float64)
        boxes: dict[int, BBox] = {}
        for lab in np.flatnonzero(labels):
            size = int(rng.integers(GLYPH_SIZE[0], GLYPH_SIZE[1] + 1))
            intensity = rng.uniform(*GLYPH_INTENSITY) * FAMILY_CONTRAST[int(lab) % 6]
            mask = _glyph_mask(int(lab), size)
            mh, mw = mask.shape
            row = int(rng.integers(CANVAS_PAD, canvas - CANVAS_PAD - mh + 1))
            col = int(rng.integers(CANVAS_PAD, canvas - CANVAS_PAD - mw + 1))
            region = img[row : row + mh, col : col + mw]
            np.maximum(region, mask * intensity, out=region)
            boxes[int(lab)] = BBox(x=col, y=row, w=mw, h=mh)
        for _ in range(int(rng.integers(1, MAX_CLUTTER + 1))):
            fam = CLUTTER_FAMILIES[int(rng.integers(0, len(CLUTTER_FAMILIES)))]
            size = int(rng.integers(CLUTTER_SIZE[0], CLUTTER_SIZE[1] + 1))
            intensity = rng.uniform(*GLYPH_INTENSITY) * CLUTTER_CONTRAST
            mask = _glyph_mask(fam, size)
            mh, mw = mask.shape
            row = int(rng.integers(CANVAS_PAD, canvas - CANVAS_PAD - mh + 1))
            col = int(rng.integers(CANVAS_PAD, canvas - CANVAS_PAD - mw + 1))
            region = img[row : row + mh, col : col + mw]
            np.maximum(region, mask * intensity, out=region)
        img += rng.uniform(0.0, noise_level, (canvas, canvas))
        np.clip(img, 0.0, 1.0, out=img)
        samples.append(
            Sample(
                image=img[None].astype(np.float32),
                labels=labels,
                boxes=boxes,
                group_id=group_id,
            )
        )
    pos, neg = _counts(samples, label_count)
    return Dataset(
        samples=samples,
        label_names=[f"label_{i}" for i in range(label_count)],
        pos_counts=pos,
        neg_counts=neg,
        provenance={
            "seed": seed,
            "n_samples": n_samples,
            "hw": hw,
            "prevalences": prev.tolist(),
            "noise_level": noise_level,
        },
    )


def split(dataset: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    """Group-disjoint train/val/test partition.

    Groups are shuffled with the given seed and dealt out proportionally to
    the fractions; a sample's split is its group's split, so no group
    straddles two splits.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,):
        raise ConfigError(f"fractions must be (train, val, test), got {fractions}")
    if np.any(fr <= 0.0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ConfigError(f"fractions must be positive and sum to 1, got {fr.tolist()}")
    groups = list(dict.fromkeys(s.group_id for s in dataset.samples))
    if len(groups) < 3:
        raise ConfigError(f"need at least 3 groups to make 3 splits, got {len(groups)}")
    order = np.random.default_rng(seed).permutation(len(groups))
    shuffled = [groups[i] for i in order]
    n_train = int(fr[0] * len(groups))
    n_val = int(fr[1] * len(groups))
    n_train = max(1, min(n_train, len(groups) - 2))
    n_val = max(1, min(n_val, len(groups) - n_train - 1))
    assignment: dict[int, int] = {}
    for pos, g in enumerate(shuffled):
        assignment[g] = 0 if pos < n_train else (1 if pos < n_train + n_val else 2)
    parts: tuple[list[Sample], list[Sample], list[Sample]] = ([], [], [])
    for s in dataset.samples:
        parts[assignment[s.group_id]].append(s)
    names = ("train", "val", "test")
    out = []
    for name, part in zip(names, parts):
        pos, neg = _counts(part, dataset.label_count)
        out.append(
            Dataset(
                samples=part,
                label_names=list(dataset.label_names),
                pos_counts=pos,
                neg_counts=neg,
                provenance={**dataset.provenance, "split": name, "split_seed": seed},
            )
        )
    return tuple(out)


def save(dataset: Dataset, path) -> None:
    """Fixed binary layout; see load() for the inverse."""
    hw = dataset.hw
    label_count = dataset.label_count
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<IIIII", DATASET_VERSION, len(dataset.samples), label_count, hw, hw))
        for s in dataset.samples:
            fh.write(struct.pack("<I", s.group_id))
            fh.write(s.labels.astype(np.uint8).tobytes())
            fh.write(struct.pack("<I", len(s.boxes)))
            for lab in sorted(s.boxes):
                b = s.boxes[lab]
                fh.write(struct.pack("<5I", lab, b.x, b.y, b.w, b.h))
            fh.write(s.image.astype("<f4", copy=False).tobytes())


def load(path) -> Dataset:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "dataset magic")
        if magic != DATASET_MAGIC:
            raise DataFormatError(f"bad dataset magic {magic!r}")
        version, n, label_count, h, w = struct.unpack(
            "<IIIII", _read_exact(fh, 20, "dataset header")
        )
        if version != DATASET_VERSION:
            raise DataFormatError(
                f"unsupported dataset version {version} (expected {DATASET_VERSION})"
            )
        if h != w:
            raise DataFormatError(f"images must be square, header says {h}x{w}")
        samples: list[Sample] = []
        for i in range(n):
            (group_id,) = struct.unpack("<I", _read_exact(fh, 4, f"group id of sample {i}"))
            labels = np.frombuffer(
                _read_exact(fh, label_count, f"labels of sample {i}"), dtype=np.uint8
            ).copy()
            if np.any(labels > 1):
                raise DataFormatError(f"sample {i} has a label byte outside {{0, 1}}")
            (n_boxes,) = struct.unpack("<I", _read_exact(fh, 4, f"box count of sample {i}"))
            boxes: dict[int, BBox] = {}
            for _ in range(n_boxes):
                lab, x, y, bw, bh = struct.unpack(
                    "<5I", _read_exact(fh, 20, f"box of sample {i}")
                )
                if lab >= label_count:
                    raise DataFormatError(f"sample {i} has a box for label {lab} >= {label_count}")
                boxes[int(lab)] = BBox(int(x), int(y), int(bw), int(bh))
            img = np.frombuffer(
                _read_exact(fh, 4 * h * w, f"image of sample {i}"), dtype="<f4"
            ).reshape(1, h, w).astype(np.float32)
            samples.append(Sample(image=img, labels=labels, boxes=boxes, group_id=int(group_id)))
        trailing = fh.read(1)
        if trailing:
            raise DataFormatError(f"unexpected trailing bytes at offset {fh.tell() - 1}")
    pos, neg = _counts(samples, label_count)
    return Dataset(
        samples=samples,
        label_names=[f"label_{i}" for i in range(label_count)],
        pos_counts=pos,
        neg_counts=neg,
        provenance={"path": str(path)},
    )


def same_payload(a: Dataset, b: Dataset) -> bool:
    """Bitwise equality of everything the file format stores."""
    if len(a) != len(b) or a.label_count != b.label_count:
        return False
    for sa, sb in zip(a.samples, b.samples):
        if sa.group_id != sb.group_id:
            return False
        if not np.array_equal(sa.labels, sb.labels):
            return False
        if sorted(sa.boxes) != sorted(sb.boxes):
            return False
        if any(sa.boxes[k] != sb.boxes[k] for k in sa.boxes):
            return False
        if sa.image.dtype != sb.image.dtype or not np.array_equal(sa.image, sb.image):
            return False
    return True


def crop_batch(samples: list[Sample], crop: int, offsets: np.ndarray | None = None) -> np.ndarray:
    """Stack samples into a float64 (B, 1, crop, crop) block.

    ``offsets`` holds per-sample (row, col) crop origins; None means center
    crop.
    """
    if not samples:
        raise ShapeError("empty batch")
    canvas = samples[0].image.shape[1]
    if not 1 <= crop <= canvas:
        raise ConfigError(f"crop {crop} incompatible with canvas {canvas}")
    if offsets is None:
        off = (canvas - crop) // 2
        offsets = np.full((len(samples), 2), off, dtype=np.int64)
    offsets = np.asarray(offsets)
    if offsets.shape != (len(samples), 2):
        raise ShapeError(f"offsets must be ({len(samples)}, 2), got {offsets.shape}")
    if np.any(offsets < 0) or np.any(offsets > canvas - crop):
        raise ConfigError("crop offsets fall outside the canvas")
    out = np.empty((len(samples), 1, crop, crop), dtype=np.float64)
    for i, (s, (r, c)) in enumerate(zip(samples, offsets)):
        out[i] = s.image[:, r : r + crop, c : c + crop]
    return out


def labels_matrix(samples: list[Sample]) -> np.ndarray:
    return np.stack([s.labels for s in samples]).astype(np.float64)
