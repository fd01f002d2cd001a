"""Build script for the compiled convolution/pooling kernels.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile only costs speed.  ``pip install -e .
--no-build-isolation`` builds it in place.
"""

import subprocess

from Cython.Build import cythonize
from setuptools import Extension, setup


def _compile_args() -> list[str]:
    """-O3 everywhere; add -march=native only when the compiler takes it."""
    args = ["-O3"]
    try:
        probe = subprocess.run(
            ["cc", "-march=native", "-E", "-x", "c", "/dev/null", "-o", "/dev/null"],
            capture_output=True,
            timeout=30,
        )
        if probe.returncode == 0:
            args.append("-march=native")
    except (OSError, subprocess.TimeoutExpired):
        pass
    return args


extensions = [
    Extension(
        "cannet.neural_core.kernels._cykernels",
        sources=["src/cannet/neural_core/kernels/_cykernels.pyx"],
        extra_compile_args=_compile_args(),
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
)
