"""Dual-backbone classifier with cross-attention feature fusion.

Two independent convolutional backbones encode the same image.  Their
last-block raw feature maps (pre-activation) are kept for the attention
loss; the activated maps pass through per-backbone 1x1 transition convs
that project both onto ``tran_N = min(C_A, C_B)`` channels, and the two
projected stacks are fused elementwise (hadamard product by default, add
and max as ablations).  The classifier head sees the fused stack, or the
fused stack concatenated with both projected stacks, through global
average pooling, dropout, and a dense layer with per-label sigmoids.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, ShapeError
from .neural_core import LayerParams, Tensor, conv_layer, dense_layer, init_conv, init_dense, ops


class FusionMode(str, Enum):
    HADAMARD = "hadamard"
    ADD = "add"
    MAX = "max"


@dataclass
class CanModel:
    backbone_a: list[LayerParams]
    backbone_b: list[LayerParams]
    transition_a: LayerParams
    transition_b: LayerParams
    classifier: LayerParams
    fusion_mode: FusionMode = FusionMode.HADAMARD
    dropout_rate: float = 0.2
    concat_all: bool = True

    @property
    def tran_channels(self) -> int:
        return self.transition_a.out_channels

    @property
    def label_count(self) -> int:
        return self.classifier.out_channels

    def parameters(self) -> list[Tensor]:
        out: list[Tensor] = []
        for layer in (*self.backbone_a, *self.backbone_b, self.transition_a, self.transition_b, self.classifier):
            out.extend(layer.tensors())
        return out

    def param_count(self) -> int:
        return sum(t.size for t in self.parameters())


@dataclass
class SingleModel:
    """One backbone straight into the pooled classifier head."""

    backbone: list[LayerParams]
    classifier: LayerParams
    dropout_rate: float = 0.2

    @property
    def label_count(self) -> int:
        return self.classifier.out_channels

    def parameters(self) -> list[Tensor]:
        out: list[Tensor] = []
        for layer in (*self.backbone, self.classifier):
            out.extend(layer.tensors())
        return out

    def param_count(self) -> int:
        return sum(t.size for t in self.parameters())


def build_backbone(
    widths: list[int], rng: np.random.Generator, in_channels: int = 1, kernel: int = 3
) -> list[LayerParams]:
    """Conv stack: every block is conv(k, pad k//2) and, except for the last,
    relu + 2x2 max pool follow structurally in the forward pass."""
    if not widths:
        raise ConfigError("backbone needs at least one conv block")
    if any(w < 1 for w in widths):
        raise ConfigError(f"conv widths must be positive, got {widths}")
    layers = []
    c_prev = in_channels
    for w in widths:
        layers.append(init_conv(c_prev, w, kernel, rng, stride=1, padding=kernel // 2))
        c_prev = w
    return layers


def build_can_model(
    widths_a: list[int],
    widths_b: list[int],
    label_count: int,
    rng_a: np.random.Generator,
    rng_b: np.random.Generator,
    rng_head: np.random.Generator,
    fusion_mode: FusionMode = FusionMode.HADAMARD,
    dropout_rate: float = 0.2,
    concat_all: bool = True,
    kernel: int = 3,
    in_channels: int = 1,
) -> CanModel:
    if len(widths_a) != len(widths_b):
        raise ConfigError(
            "backbones must have equal depth so their feature maps share "
            f"spatial extents, got {len(widths_a)} vs {len(widths_b)} blocks"
        )
    if label_count < 1:
        raise ConfigError(f"label_count must be >= 1, got {label_count}")
    fusion_mode = FusionMode(fusion_mode)
    tran_n = min(widths_a[-1], widths_b[-1])
    backbone_a = build_backbone(widths_a, rng_a, in_channels, kernel)
    backbone_b = build_backbone(widths_b, rng_b, in_channels, kernel)
    transition_a = init_conv(widths_a[-1], tran_n, 1, rng_head)
    transition_b = init_conv(widths_b[-1], tran_n, 1, rng_head)
    head_width = 3 * tran_n if concat_all else tran_n
    classifier = init_dense(head_width, label_count, rng_head)
    return CanModel(
        backbone_a,
        backbone_b,
        transition_a,
        transition_b,
        classifier,
        fusion_mode=fusion_mode,
        dropout_rate=dropout_rate,
        concat_all=concat_all,
    )


def build_single_model(
    widths: list[int],
    label_count: int,
    rng: np.random.Generator,
    rng_head: np.random.Generator,
    dropout_rate: float = 0.2,
    kernel: int = 3,
    in_channels: int = 1,
) -> SingleModel:
    if label_count < 1:
        raise ConfigError(f"label_count must be >= 1, got {label_count}")
    backbone = build_backbone(widths, rng, in_channels, kernel)
    classifier = init_dense(widths[-1], label_count, rng_head)
    return SingleModel(backbone, classifier, dropout_rate=dropout_rate)


def backbone_forward(layers: list[LayerParams], x: Tensor) -> Tensor:
    """Run the conv stack, returning the last block's raw (pre-relu) maps.

    Interior blocks are conv -> relu -> 2x2 max pool; the final conv output
    is returned unactivated so the attention loss can see it, and global
    average pooling later serves as the stack's last pooling stage.
    """
    for i, layer in enumerate(layers):
        x = conv_layer(x, layer)
        if i < len(layers) - 1:
            x = ops.relu(x)
            x = ops.max_pool2d(x, 2)
    return x


def transition(features: Tensor, params: LayerParams) -> Tensor:
    """1x1 conv projecting activated backbone features to the shared width."""
    if not params.is_conv or params.kernel_size != 1:
        raise ConfigError("transition layer must be a 1x1 conv")
    if features.ndim != 4 or features.shape[1] != params.in_channels:
        raise ShapeError(
            f"transition expects (N, {params.in_channels}, H, W), got {features.shape}"
        )
    return conv_layer(features, params)


def fuse(f_a: Tensor, f_b: Tensor, mode: FusionMode) -> Tensor:
    """Elementwise fusion of the two projected feature stacks."""
    if f_a.shape != f_b.shape:
        raise ShapeError(f"fusion inputs must match, got {f_a.shape} vs {f_b.shape}")
    mode = FusionMode(mode)
    if mode is FusionMode.HADAMARD:
        return ops.mul(f_a, f_b)
    if mode is FusionMode.ADD:
        return ops.add(f_a, f_b)
    return ops.maximum(f_a, f_b)


def assemble(f_ca: Tensor, f_a: Tensor, f_b: Tensor, concat_all: bool) -> Tensor:
    """Channel-concatenate [fused | A | B], or pass the fused stack through."""
    if not concat_all:
        return f_ca
    if not (f_ca.shape == f_a.shape == f_b.shape):
        raise ShapeError(
            f"assemble inputs must match, got {f_ca.shape}, {f_a.shape}, {f_b.shape}"
        )
    return ops.concat([f_ca, f_a, f_b], axis=1)


def _can_features(model: CanModel, images: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    raw_a = backbone_forward(model.backbone_a, images)
    raw_b = backbone_forward(model.backbone_b, images)
    if raw_a.shape[2:] != raw_b.shape[2:]:
        raise ShapeError(
            f"backbones disagree on spatial extents: {raw_a.shape} vs {raw_b.shape}"
        )
    f_a = transition(ops.relu(raw_a), model.transition_a)
    f_b = transition(ops.relu(raw_b), model.transition_b)
    f_ca = fuse(f_a, f_b, model.fusion_mode)
    feats = assemble(f_ca, f_a, f_b, model.concat_all)
    return feats, raw_a, raw_b


def can_forward(
    model: CanModel,
    images: Tensor,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor, Tensor]:
    """Full forward pass.

    Returns per-label probabilities (N, L) plus both backbones' raw
    last-block feature maps for the attention loss.
    """
    feats, raw_a, raw_b = _can_features(model, images)
    pooled = ops.global_avg_pool(feats)
    dropped = ops.dropout(pooled, model.dropout_rate, training, rng)
    probs = ops.sigmoid(dense_layer(dropped, model.classifier))
    return probs, raw_a, raw_b


def single_forward(
    model: SingleModel,
    images: Tensor,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """Single-backbone forward: probabilities and raw last-block maps."""
    raw = backbone_forward(model.backbone, images)
    pooled = ops.global_avg_pool(ops.relu(raw))
    dropped = ops.dropout(pooled, model.dropout_rate, training, rng)
    probs = ops.sigmoid(dense_layer(dropped, model.classifier))
    return probs, raw


def forward_probs(model, images: Tensor, training: bool = False, rng=None) -> Tensor:
    """Dispatch on model kind; returns probabilities only."""
    if isinstance(model, CanModel):
        return can_forward(model, images, training, rng)[0]
    return single_forward(model, images, training, rng)[0]


def feature_maps(model, images: Tensor) -> Tensor:
    """The pre-GAP feature stack the classifier consumes (eval mode).

    For the dual model that is the assembled post-fusion stack; for the
    single model, the activated last-block maps.  Class-activation maps are
    weighted sums over these channels.
    """
    if isinstance(model, CanModel):
        return _can_features(model, images)[0]
    return ops.relu(backbone_forward(model.backbone, images))
