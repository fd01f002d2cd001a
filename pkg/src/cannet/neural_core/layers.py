"""Learnable layer parameters and their initialization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ..errors import ShapeError
from . import ops
from .tensor import Tensor


@dataclass
class LayerParams:
    """Weights for one conv or dense layer.

    Conv weight is (C_out, C_in, k, k); dense weight is (out_dim, in_dim).
    Stride and padding only apply to the conv interpretation.
    """

    weight: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0

    @property
    def is_conv(self) -> bool:
        return self.weight.ndim == 4

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel_size(self) -> int:
        if not self.is_conv:
            raise ShapeError("kernel_size of a dense layer")
        return self.weight.shape[2]

    def tensors(self) -> Iterator[Tensor]:
        yield self.weight
        yield self.bias

    def count(self) -> int:
        return self.weight.size + self.bias.size


def init_conv(
    c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1, padding: int = 0
) -> LayerParams:
    """Kaiming-uniform weights (relu gain, so var = 2/fan_in), zero bias."""
    bound = np.sqrt(6.0 / (c_in * k * k))
    weight = Tensor(rng.uniform(-bound, bound, (c_out, c_in, k, k)), requires_grad=True)
    bias = Tensor(np.zeros(c_out), requires_grad=True)
    return LayerParams(weight, bias, stride=stride, padding=padding)


def init_dense(d_in: int, d_out: int, rng: np.random.Generator) -> LayerParams:
    bound = 1.0 / np.sqrt(d_in)
    weight = Tensor(rng.uniform(-bound, bound, (d_out, d_in)), requires_grad=True)
    bias = Tensor(np.zeros(d_out), requires_grad=True)
    return LayerParams(weight, bias)


def conv_layer(x: Tensor, p: LayerParams) -> Tensor:
    return ops.conv2d(x, p.weight, p.bias, stride=p.stride, padding=p.padding)


def dense_layer(x: Tensor, p: LayerParams) -> Tensor:
    return ops.dense(x, p.weight, p.bias)
