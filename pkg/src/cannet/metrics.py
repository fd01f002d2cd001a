"""Per-label AUROC and whole-dataset evaluation reports."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cross_attention import forward_probs
from .errors import ConfigError, ShapeError
from .neural_core import Tensor


def auroc(scores, labels) -> float | None:
    """Area under the ROC curve by the rank-sum (Mann-Whitney) identity.

    Ties receive midranks, i.e. half credit per tied positive-negative
    pair.  Returns None when either class is absent, where the quantity is
    undefined.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or y.shape != s.shape:
        raise ShapeError(f"scores and labels must be equal-length vectors, got {s.shape}, {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ConfigError("labels must be exactly 0 or 1")
    pos = int(y.sum())
    neg = s.size - pos
    if pos == 0 or neg == 0:
        return None
    _, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    midranks = (ends - counts) + (counts + 1) / 2.0
    ranks = midranks[inverse]
    u = ranks[y == 1].sum() - pos * (pos + 1) / 2.0
    return float(u / (pos * neg))


@dataclass
class EvalReport:
    """Per-label AUROC plus the unweighted mean over defined labels."""

    label_names: list[str]
    per_label_auroc: list[float | None]
    mean_auroc: float
    pos_counts: list[int]
    neg_counts: list[int]

    @property
    def undefined_labels(self) -> list[int]:
        return [i for i, v in enumerate(self.per_label_auroc) if v is None]

    def to_json_dict(self) -> dict:
        mean = None if math.isnan(self.mean_auroc) else self.mean_auroc
        return {
            "labels": list(self.label_names),
            "auroc": list(self.per_label_auroc),
            "mean": mean,
            "undefined": self.undefined_labels,
            "counts": {"pos": list(self.pos_counts), "neg": list(self.neg_counts)},
        }

    @staticmethod
    def from_json_dict(d: dict) -> "EvalReport":
        mean = d["mean"]
        return EvalReport(
            label_names=list(d["labels"]),
            per_label_auroc=list(d["auroc"]),
            mean_auroc=float("nan") if mean is None else float(mean),
            pos_counts=list(d["counts"]["pos"]),
            neg_counts=list(d["counts"]["neg"]),
        )

    def to_table(self) -> str:
        """Plain-text table: one row per label, then the average row."""
        width = max([len(n) for n in self.label_names] + [len("Average")])
        lines = [f"{'Label':<{width}}  {'AUROC':>7}  {'Pos':>6}  {'Neg':>6}"]
        for name, v, p, n in zip(
            self.label_names, self.per_label_auroc, self.pos_counts, self.neg_counts
        ):
            cell = "  n/a  " if v is None else f"{v:7.4f}"
            lines.append(f"{name:<{width}}  {cell}  {p:>6}  {n:>6}")
        mean = "  n/a  " if math.isnan(self.mean_auroc) else f"{self.mean_auroc:7.4f}"
        lines.append(f"{'Average':<{width}}  {mean}")
        return "\n".join(lines)


def summarize(label_names, score_matrix, label_matrix) -> EvalReport:
    """Build a report from stacked scores and binary labels, both (N, L)."""
    scores = np.asarray(score_matrix, dtype=np.float64)
    labels = np.asarray(label_matrix)
    if scores.ndim != 2 or scores.shape != labels.shape:
        raise ShapeError(f"expected matching (N, L) matrices, got {scores.shape}, {labels.shape}")
    if scores.shape[1] != len(label_names):
        raise ShapeError(
            f"{len(label_names)} label names for {scores.shape[1]} score columns"
        )
    per_label = [auroc(scores[:, i], labels[:, i]) for i in range(scores.shape[1])]
    defined = [v for v in per_label if v is not None]
    mean = float(np.mean(defined)) if defined else float("nan")
    pos = labels.sum(axis=0).astype(int)
    neg = (labels.shape[0] - pos).astype(int)
    return EvalReport(list(label_names), per_label, mean, pos.tolist(), neg.tolist())


def evaluate(model, dataset, crop: int | None = None, batch_size: int = 64) -> EvalReport:
    """Score every sample (center crop, eval mode) and compute per-label AUROC."""
    from .synth_data import crop_batch, labels_matrix

    if not dataset.samples:
        raise ConfigError("cannot evaluate an empty dataset")
    if crop is None:
        crop = dataset.default_crop
    chunks = []
    samples = dataset.samples
    for start in range(0, len(samples), batch_size):
        part = samples[start : start + batch_size]
        imgs = Tensor(crop_batch(part, crop))
        chunks.append(forward_probs(model, imgs, training=False).values)
    scores = np.vstack(chunks)
    labels = labels_matrix(samples)
    return summarize(dataset.label_names, scores, labels)
