"""Dual-backbone cross-attention network for imbalanced multi-label images.

Two small convolutional backbones extract features side by side; a
cross-attention block fuses them (element-wise product by default), an
attention loss pulls their pathogenic maps together, and a class-balanced
focal objective handles rare labels.  Everything runs on a from-scratch
reverse-mode autodiff core with compiled kernels (numpy fallback included).
"""

from . import (
    bench,
    checkpoint,
    cli,
    cross_attention,
    errors,
    localization,
    losses,
    metrics,
    neural_core,
    synth_data,
    trainer,
)
from .cross_attention import (
    CanModel,
    FusionMode,
    SingleModel,
    build_can_model,
    build_single_model,
    can_forward,
    forward_probs,
    single_forward,
)
from .errors import CanError, ConfigError, DataFormatError, DivergenceError, ShapeError
from .losses import (
    LossConfig,
    attention_loss,
    balance_loss,
    balance_weights,
    bce_loss,
    combined_loss,
)
from .metrics import EvalReport, auroc, evaluate
from .neural_core import Graph, Tensor, backward, record
from .synth_data import Dataset, Sample
from .trainer import RunConfig, TrainResult, ablate, train, warmup

__version__ = "0.1.0"

__all__ = [
    "CanError",
    "CanModel",
    "ConfigError",
    "DataFormatError",
    "Dataset",
    "DivergenceError",
    "EvalReport",
    "FusionMode",
    "Graph",
    "LossConfig",
    "RunConfig",
    "Sample",
    "ShapeError",
    "SingleModel",
    "Tensor",
    "TrainResult",
    "ablate",
    "attention_loss",
    "auroc",
    "backward",
    "balance_loss",
    "balance_weights",
    "bce_loss",
    "bench",
    "build_can_model",
    "build_single_model",
    "can_forward",
    "checkpoint",
    "cli",
    "combined_loss",
    "cross_attention",
    "errors",
    "evaluate",
    "forward_probs",
    "localization",
    "losses",
    "metrics",
    "neural_core",
    "record",
    "single_forward",
    "synth_data",
    "train",
    "trainer",
    "warmup",
]
