"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: usage problems exit 1, data/file
problems exit 2, runtime/numeric failures exit 3.
"""


class RelightError(Exception):
    """Base class for all toolkit errors."""


class FormatError(RelightError, ValueError):
    """An image or file does not have the expected layout (e.g. channel count)."""


class DimensionError(RelightError, ValueError):
    """Array dimensions violate an operation's precondition."""


class ConfigError(RelightError, ValueError):
    """Inconsistent architecture/training configuration."""


class DataError(RelightError):
    """Dataset discovery or pairing failed."""


class CheckpointError(RelightError):
    """A checkpoint archive is corrupt, truncated, or of an unknown version."""


class NumericsError(RelightError):
    """A numeric invariant broke at runtime (non-finite loss, singular geometry)."""


class UsageError(RelightError):
    """Bad command-line invocation (internal to the CLI)."""
