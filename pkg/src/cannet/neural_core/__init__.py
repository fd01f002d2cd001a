"""Tensor type, recorded-tape autodiff, layer parameters, and kernels."""

from . import kernels, ops
from .layers import LayerParams, conv_layer, dense_layer, init_conv, init_dense
from .tensor import (
    Graph,
    Tensor,
    as_tensor,
    backward,
    finite_diff_grad,
    load_tensor,
    read_tensor,
    record,
    save_tensor,
    write_tensor,
)

__all__ = [
    "Graph",
    "LayerParams",
    "Tensor",
    "as_tensor",
    "backward",
    "conv_layer",
    "dense_layer",
    "finite_diff_grad",
    "init_conv",
    "init_dense",
    "kernels",
    "load_tensor",
    "ops",
    "read_tensor",
    "record",
    "save_tensor",
    "write_tensor",
]
