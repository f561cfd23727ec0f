"""Kernel backend selection.

The convolution kernels in relightkit.kernels exist twice: a vectorized
numpy path (im2col + BLAS matmul) and a numba @njit path (direct loops).
Both produce the same results up to float accumulation order.

The startup default comes from the RELIGHT_KERNELS environment variable
("numpy" or "numba").  Unset, the numpy path is used: on the single-core
hosts this package targets, BLAS-backed matmul measures 2-5x faster than
the JIT loops (run `relightkit bench --compare-backends` to check your
machine).  `use()` switches at runtime, e.g. for benchmarking.
"""

import os
import warnings

from .errors import ConfigError

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

BACKENDS = ("numpy", "numba")

_ENV_VAR = "RELIGHT_KERNELS"


def _initial() -> str:
    name = os.environ.get(_ENV_VAR, "").strip().lower()
    if not name:
        return "numpy"
    if name not in BACKENDS:
        warnings.warn(f"{_ENV_VAR}={name!r} not recognised, using numpy")
        return "numpy"
    if name == "numba" and not HAVE_NUMBA:
        warnings.warn(f"{_ENV_VAR}=numba but numba is not importable, using numpy")
        return "numpy"
    return name


_active = _initial()


def current() -> str:
    """Name of the active kernel backend."""
    return _active


def available() -> tuple[str, ...]:
    return BACKENDS if HAVE_NUMBA else ("numpy",)


def use(name: str) -> None:
    """Select the kernel backend at runtime ("numpy" or "numba")."""
    global _active
    if name not in BACKENDS:
        raise ConfigError(f"unknown backend {name!r}, expected one of {BACKENDS}")
    if name == "numba" and not HAVE_NUMBA:
        raise ConfigError("numba backend requested but numba is not importable")
    _active = name


class use_temporarily:
    """Context manager: switch backend inside a `with` block."""

    def __init__(self, name: str):
        self.name = name
        self._saved = None

    def __enter__(self):
        self._saved = current()
        use(self.name)
        return self

    def __exit__(self, *exc):
        use(self._saved)
        return False
