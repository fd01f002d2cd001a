"""Training objectives: balance loss, attention loss, and their combination.

The balance loss is a class-frequency-weighted focal BCE.  Per element,

    -w_pos * (1 - p)^gamma * y * log(p)  -  w_neg * p^gamma * (1 - y) * log(1 - p)

summed over labels and averaged over the batch, with log arguments clamped
to epsilon.  Weights come from label frequencies: w_pos = N / (P + N) and
w_neg = P / (P + N), so the rare side of each label carries more weight and
w_pos + w_neg = 1.

The attention loss compares the two backbones' pathogenic attention maps
(channel-summed raw feature maps, resized to a common extent,
max-normalized per sample) by their per-sample Euclidean distance, averaged
over the batch.  The combined objective is alpha * L_att + L_bal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .neural_core import Tensor, as_tensor, ops


@dataclass
class LossConfig:
    """Hyperparameters for the combined objective.

    ``w_pos``/``w_neg`` may be scalars or per-label arrays; the default 0.5
    makes the balance loss a plain (halved) BCE when gamma is also 0.
    """

    gamma: float = 2.0
    alpha: float = 0.01
    w_pos: np.ndarray | float = 0.5
    w_neg: np.ndarray | float = 0.5
    epsilon: float = 1e-12

    def validate(self) -> None:
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise ConfigError(f"gamma must be finite and >= 0, got {self.gamma}")
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise ConfigError(f"alpha must be finite and >= 0, got {self.alpha}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        wp = np.asarray(self.w_pos, dtype=np.float64)
        wn = np.asarray(self.w_neg, dtype=np.float64)
        if wp.shape != wn.shape:
            raise ConfigError(f"weight shapes differ: {wp.shape} vs {wn.shape}")
        if np.any(wp < 0) or np.any(wp > 1) or np.any(wn < 0) or np.any(wn > 1):
            raise ConfigError("balance weights must lie in [0, 1]")
        if np.any(np.abs(wp + wn - 1.0) > 1e-9):
            raise ConfigError("balance weights must sum to 1 per label")


def balance_weights(pos_counts, neg_counts) -> tuple[np.ndarray, np.ndarray]:
    """Per-label (w_pos, w_neg) from training-set label frequencies."""
    p = np.asarray(pos_counts, dtype=np.float64)
    n = np.asarray(neg_counts, dtype=np.float64)
    if p.shape != n.shape or p.ndim != 1:
        raise ShapeError(f"count vectors must be 1-D and equal length, got {p.shape}, {n.shape}")
    if np.any(p < 0) or np.any(n < 0):
        raise ConfigError("label counts must be nonnegative")
    total = p + n
    if np.any(total < 1):
        raise ConfigError("every label needs at least one example to derive weights")
    return n / total, p / total


def _check_probs_labels(probs: Tensor, labels) -> Tensor:
    labels = as_tensor(labels)
    if probs.ndim != 2 or labels.shape != probs.shape:
        raise ShapeError(
            f"expected matching (N, L) probabilities and labels, got "
            f"{probs.shape} and {labels.shape}"
        )
    lv = labels.values
    if not np.all((lv == 0.0) | (lv == 1.0)):
        raise ConfigError("labels must be exactly 0 or 1")
    return labels


def bce_loss(probs: Tensor, labels, epsilon: float = 1e-12) -> Tensor:
    """Plain multi-label BCE: summed over labels, averaged over the batch."""
    probs = as_tensor(probs)
    labels = _check_probs_labels(probs, labels)
    n = probs.shape[0]
    log_p = ops.log(probs, epsilon)
    log_q = ops.log(1.0 - probs, epsilon)
    total = ops.reduce_sum(labels * log_p + (1.0 - labels) * log_q)
    return -(total / float(n))


def balance_loss(probs: Tensor, labels, cfg: LossConfig) -> Tensor:
    """Weighted focal BCE; reduces to bce_loss / 2 when gamma=0 and w=0.5."""
    probs = as_tensor(probs)
    labels = _check_probs_labels(probs, labels)
    n = probs.shape[0]
    y = labels
    log_p = ops.log(probs, cfg.epsilon)
    log_q = ops.log(1.0 - probs, cfg.epsilon)
    pos = as_tensor(cfg.w_pos) * y * log_p
    neg = as_tensor(cfg.w_neg) * (1.0 - y) * log_q
    if cfg.gamma != 0.0:
        pos = pos * ops.pow_const(1.0 - probs, cfg.gamma)
        neg = neg * ops.pow_const(probs, cfg.gamma)
    total = ops.reduce_sum(pos + neg)
    return -(total / float(n))


def pathogenic_map(features: Tensor, target_hw: tuple[int, int]) -> Tensor:
    """Channel-summed, resized, per-sample max-normalized attention map.

    A map whose maximum is zero (or negative, possible for raw pre-activation
    features) is left unnormalized rather than divided, so an all-zero map
    stays all-zero.
    """
    features = as_tensor(features)
    if features.ndim != 4:
        raise ShapeError(f"pathogenic_map expects NCHW features, got {features.shape}")
    summed = ops.reduce_sum(features, axis=1, keepdims=True)
    summed = ops.resize_bilinear(summed, target_hw)
    peak = ops.per_sample_max(summed)
    denom = ops.masked_fill(peak, peak.values > 0.0, 1.0)
    return summed / denom


def attention_loss(
    features_a: Tensor, features_b: Tensor, target_hw: tuple[int, int] | None = None
) -> Tensor:
    """Mean per-sample L2 distance between the two pathogenic maps.

    The common extent defaults to the smaller of the two inputs' spatial
    extents, axis by axis.
    """
    features_a, features_b = as_tensor(features_a), as_tensor(features_b)
    if features_a.ndim != 4 or features_b.ndim != 4:
        raise ShapeError("attention_loss expects NCHW feature maps")
    if features_a.shape[0] != features_b.shape[0]:
        raise ShapeError(
            f"batch sizes differ: {features_a.shape[0]} vs {features_b.shape[0]}"
        )
    if target_hw is None:
        target_hw = (
            min(features_a.shape[2], features_b.shape[2]),
            min(features_a.shape[3], features_b.shape[3]),
        )
    map_a = pathogenic_map(features_a, target_hw)
    map_b = pathogenic_map(features_b, target_hw)
    diff = map_a - map_b
    sq = ops.reduce_sum(diff * diff, axis=(1, 2, 3))
    return ops.reduce_mean(ops.sqrt(sq))


def combined_loss(
    probs: Tensor,
    labels,
    features_a: Tensor,
    features_b: Tensor,
    cfg: LossConfig,
) -> Tensor:
    """alpha * L_att + L_bal.

    With alpha = 0 the attention term is skipped outright, so the result
    (values and gradients) is identical to balance_loss alone.
    """
    bal = balance_loss(probs, labels, cfg)
    if cfg.alpha == 0.0:
        return bal
    att = attention_loss(features_a, features_b)
    return att * cfg.alpha + bal
