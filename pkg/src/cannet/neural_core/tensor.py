"""Dense float64 tensors, a recorded operation tape, and reverse-mode backward.

Every operation in :mod:`.ops` appends an :class:`OpRecord` to the active
:class:`Graph` (entered via :func:`record`) whenever its output needs a
gradient.  :func:`backward` then walks the tape once in reverse, accumulating
gradients additively across fan-out, and leaves ``d loss / d t`` on ``t.grad``
for every ``requires_grad`` tensor reachable from the loss.

All arithmetic is float64 throughout; there is no dtype parameter anywhere.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from dataclasses import dataclass
from typing import BinaryIO, Callable, Sequence

import numpy as np

from ..errors import DataFormatError, ShapeError


class Tensor:
    """An n-dimensional float64 array plus an optional gradient buffer."""

    __slots__ = ("values", "grad", "requires_grad")

    def __init__(self, values, requires_grad: bool = False):
        # np.ascontiguousarray would promote 0-d to 1-d; asarray keeps scalars
        v = np.asarray(values, dtype=np.float64)
        if v.ndim and not v.flags["C_CONTIGUOUS"]:
            v = np.ascontiguousarray(v)
        self.values: np.ndarray = v
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic dunders are attached by cannet.neural_core.ops at import
    # time so that this module stays free of op definitions.


def as_tensor(x) -> Tensor:
    """Wrap arrays and scalars as constant tensors; pass tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


@dataclass
class OpRecord:
    """One recorded operation: inputs, output, and its vector-Jacobian rule.

    ``backward`` maps the output gradient to one gradient array (or None)
    per input, in input order.
    """

    name: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Graph:
    """Execution-ordered tape of recorded operations."""

    def __init__(self):
        self.ops: list[OpRecord] = []

    def __len__(self) -> int:
        return len(self.ops)

    def clear(self) -> None:
        self.ops.clear()


_ACTIVE: list[Graph] = []


@contextmanager
def record(graph: Graph):
    """Make ``graph`` the recording target within the block.

    Recording is not thread-safe; training is single-threaded by design.
    """
    _ACTIVE.append(graph)
    try:
        yield graph
    finally:
        _ACTIVE.pop()


def active_graph() -> Graph | None:
    return _ACTIVE[-1] if _ACTIVE else None


def apply_op(name, inputs, out_values, backward) -> Tensor:
    """Create the output tensor of an op and record it if a tape is active."""
    out = Tensor(out_values, requires_grad=any(t.requires_grad for t in inputs))
    graph = active_graph()
    if graph is not None and out.requires_grad:
        graph.ops.append(OpRecord(name, tuple(inputs), out, backward))
    return out


def backward(loss: Tensor, graph: Graph) -> None:
    """Reverse sweep: populate ``.grad`` on every tensor the loss depends on.

    ``loss`` must be a scalar produced under ``record(graph)``.  Gradients
    from multiple consumers of the same tensor are summed.  Repeated calls
    accumulate into existing ``.grad`` buffers.
    """
    if loss.values.shape != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.values.shape}")
    pending: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    leaves: dict[int, Tensor] = {id(loss): loss}
    for op in reversed(graph.ops):
        g_out = pending.pop(id(op.output), None)
        leaves.pop(id(op.output), None)
        if g_out is None:
            continue
        _deposit(op.output, g_out)
        for t, g in zip(op.inputs, op.backward(g_out)):
            if g is None or not t.requires_grad:
                continue
            if g.shape != t.values.shape:
                raise ShapeError(
                    f"backward rule of {op.name} produced gradient shape "
                    f"{g.shape} for input shape {t.values.shape}"
                )
            prev = pending.get(id(t))
            pending[id(t)] = g if prev is None else prev + g
            leaves[id(t)] = t
    for key, t in leaves.items():
        _deposit(t, pending[key])


def _deposit(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def finite_diff_grad(
    f: Callable[[Tensor], "Tensor | float"], x: Tensor, eps: float = 1e-3
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    ``f`` is re-evaluated with ``x`` perturbed in place, so it must read
    ``x`` afresh on every call.
    """

    def value() -> float:
        out = f(x)
        return out.item() if isinstance(out, Tensor) else float(out)

    flat = x.values.ravel()
    g = np.empty(flat.size, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = value()
        flat[i] = orig - eps
        fm = value()
        flat[i] = orig
        g[i] = (fp - fm) / (2.0 * eps)
    return g.reshape(x.values.shape)


# --- flat tensor blobs -------------------------------------------------
#
# Layout: magic "CANT", u32 rank, u32 extent per axis, then the float64
# values row-major.  Everything little-endian.

TENSOR_MAGIC = b"CANT"


def write_tensor(fh: BinaryIO, values: np.ndarray) -> None:
    # np.ascontiguousarray would promote 0-d to 1-d; asarray keeps rank 0
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    fh.write(TENSOR_MAGIC)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.astype("<f8", copy=False).tobytes())


def read_tensor(fh: BinaryIO) -> np.ndarray:
    magic = _read_exact(fh, 4, "tensor magic")
    if magic != TENSOR_MAGIC:
        raise DataFormatError(f"bad tensor magic {magic!r} at offset {fh.tell() - 4}")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4, "tensor rank"))
    if rank > 32:
        raise DataFormatError(f"implausible tensor rank {rank}")
    shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "tensor extents"))
    count = 1
    for s in shape:
        count *= s
    raw = _read_exact(fh, 8 * count, "tensor values")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def save_tensor(path, values: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, values)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise DataFormatError(
            f"truncated file: wanted {n} bytes for {what} at offset "
            f"{fh.tell() - len(data)}, got {len(data)}"
        )
    return data
