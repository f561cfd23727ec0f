"""relightkit: image relighting with a stacked multi-scale encoder/decoder network.

The package is pure numpy at its core.  Hot convolution kernels have two
interchangeable implementations (vectorized numpy and numba JIT loops);
see relightkit.backend for selection.
"""

__version__ = "0.1.0"

from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DimensionError,
    FormatError,
    NumericsError,
    RelightError,
)

__all__ = [
    "__version__",
    "RelightError",
    "FormatError",
    "DimensionError",
    "ConfigError",
    "DataError",
    "CheckpointError",
    "NumericsError",
]
