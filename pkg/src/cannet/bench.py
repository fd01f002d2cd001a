"""Benchmark the compiled kernels against the pure-numpy fallback.

Times each hot kernel on model-sized inputs with both backends and checks
that the outputs agree to float64 round-off, so a wrong-but-fast kernel
cannot slip through.  Used by ``can bench``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .neural_core import kernels


@dataclass
class BenchCase:
    name: str
    run: Callable[[object], tuple[np.ndarray, ...]]


@dataclass
class BenchRow:
    name: str
    numpy_s: float
    compiled_s: float | None
    max_abs_diff: float | None

    @property
    def speedup(self) -> float | None:
        if self.compiled_s is None or self.compiled_s == 0:
            return None
        return self.numpy_s / self.compiled_s


def _conv_case(name, rng, n, c_in, c_out, hw, kernel, padding):
    x = rng.standard_normal((n, c_in, hw, hw))
    w = rng.standard_normal((c_out, c_in, kernel, kernel))
    b = rng.standard_normal(c_out)
    out_hw = hw + 2 * padding - kernel + 1
    dout = rng.standard_normal((n, c_out, out_hw, out_hw))

    def run(K):
        y = K.conv2d_forward(x, w, b, 1, padding)
        dx = K.conv2d_backward_input(dout, w, (hw, hw), 1, padding)
        dw, db = K.conv2d_backward_params(x, dout, kernel, 1, padding)
        return y, dx, dw, db

    return BenchCase(name, run)


def _pool_case(name, rng, n, c, hw, kernel, stride):
    x = rng.standard_normal((n, c, hw, hw))
    out_hw = (hw - kernel) // stride + 1
    dout = rng.standard_normal((n, c, out_hw, out_hw))

    def run(K):
        y, arg = K.maxpool_forward(x, kernel, stride)
        dx = K.maxpool_backward(dout, arg, (hw, hw))
        return y, dx

    return BenchCase(name, run)


def default_cases(rng: np.random.Generator | None = None) -> list[BenchCase]:
    """Kernel workloads shaped like one batch through the default model."""
    rng = rng or np.random.default_rng(0)
    return [
        _conv_case("conv 16x1x64x64 k3 -> 8ch", rng, 16, 1, 8, 64, 3, 1),
        _conv_case("conv 16x8x32x32 k3 -> 16ch", rng, 16, 8, 16, 32, 3, 1),
        _conv_case("conv 16x16x16x16 k3 -> 24ch", rng, 16, 16, 24, 16, 3, 1),
        _conv_case("transition 16x24x16x16 k1", rng, 16, 24, 24, 16, 1, 0),
        _pool_case("maxpool 16x8x64x64 2x2", rng, 16, 8, 64, 2, 2),
        _pool_case("maxpool 16x16x32x32 2x2", rng, 16, 16, 32, 2, 2),
    ]


def _time(fn, repeats: int) -> tuple[float, tuple[np.ndarray, ...]]:
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def run_bench(
    cases: list[BenchCase] | None = None, repeats: int = 3, rng=None
) -> list[BenchRow]:
    cases = cases if cases is not None else default_cases(rng)
    rows = []
    py = kernels._BACKENDS["py"]
    cy = kernels._BACKENDS.get("cy")
    for case in cases:
        t_py, out_py = _time(lambda: case.run(py), repeats)
        if cy is None:
            rows.append(BenchRow(case.name, t_py, None, None))
            continue
        t_cy, out_cy = _time(lambda: case.run(cy), repeats)
        diff = max(
            float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))
            if a.size
            else 0.0
            for a, b in zip(out_py, out_cy)
        )
        rows.append(BenchRow(case.name, t_py, t_cy, diff))
    return rows


def format_table(rows: list[BenchRow]) -> str:
    width = max(len(r.name) for r in rows)
    header = f"{'Case':<{width}}  {'numpy (ms)':>10}  {'compiled (ms)':>13}  {'speedup':>7}  {'max|diff|':>9}"
    lines = [header, "-" * len(header)]
    for r in rows:
        if r.compiled_s is None:
            lines.append(f"{r.name:<{width}}  {r.numpy_s * 1e3:>10.2f}  {'n/a':>13}  {'n/a':>7}  {'n/a':>9}")
        else:
            lines.append(
                f"{r.name:<{width}}  {r.numpy_s * 1e3:>10.2f}  {r.compiled_s * 1e3:>13.2f}  "
                f"{r.speedup:>6.1f}x  {r.max_abs_diff:>9.1e}"
            )
    if not kernels.HAVE_COMPILED:
        lines.append("compiled backend unavailable; showing numpy fallback only")
    return "\n".join(lines)
