"""Kernel backend selection.

Two interchangeable implementations of the hot conv/pool kernels exist: a
compiled extension (``_cykernels``) and a numpy fallback.  Benchmarks on
these model shapes (see ``can bench``) show the compiled pooling kernels
are several times faster, while the numpy conv rides BLAS and wins at
larger channel counts; the default ``mixed`` backend therefore composes
the faster implementation per kernel.  ``CAN_KERNELS=py|cy|mixed|auto``
overrides, and :func:`use_backend` switches at runtime (the benchmark uses
this to time each in one process).  Without the extension everything falls
back to pure numpy.
"""

from __future__ import annotations

import os
from contextlib import contextmanager
from types import SimpleNamespace

from ...errors import ConfigError
from . import numpy_backend

try:
    from . import _cykernels
except ImportError:  # pure-python install: extension never built
    _cykernels = None

HAVE_COMPILED = _cykernels is not None

_BACKENDS = {"py": numpy_backend}
if HAVE_COMPILED:
    _BACKENDS["cy"] = _cykernels
    _BACKENDS["mixed"] = SimpleNamespace(
        conv2d_forward=numpy_backend.conv2d_forward,
        conv2d_backward_input=numpy_backend.conv2d_backward_input,
        conv2d_backward_params=numpy_backend.conv2d_backward_params,
        maxpool_forward=_cykernels.maxpool_forward,
        maxpool_backward=_cykernels.maxpool_backward,
    )


def _resolve(name: str):
    if name == "auto":
        name = "mixed" if HAVE_COMPILED else "py"
    if name not in ("py", "cy", "mixed"):
        raise ConfigError(f"unknown kernel backend {name!r} (expected py, cy, mixed, or auto)")
    if name not in _BACKENDS:
        raise ConfigError("compiled kernel backend requested but the extension is not built")
    return name, _BACKENDS[name]


_active_name, _active = _resolve(os.environ.get("CAN_KERNELS", "auto"))


def backend_name() -> str:
    return _active_name


def use_backend(name: str) -> None:
    """Select the kernel backend for subsequent calls."""
    global _active_name, _active
    _active_name, _active = _resolve(name)


@contextmanager
def backend(name: str):
    """Temporarily switch backends."""
    prev = _active_name
    use_backend(name)
    try:
        yield
    finally:
        use_backend(prev)


def conv2d_forward(x, w, b, stride, pad):
    return _active.conv2d_forward(x, w, b, stride, pad)


def conv2d_backward_input(dout, w, in_hw, stride, pad):
    return _active.conv2d_backward_input(dout, w, in_hw, stride, pad)


def conv2d_backward_params(x, dout, k, stride, pad):
    return _active.conv2d_backward_params(x, dout, k, stride, pad)


def maxpool_forward(x, k, stride):
    return _active.maxpool_forward(x, k, stride)


def maxpool_backward(dout, arg, in_hw):
    return _active.maxpool_backward(dout, arg, in_hw)
