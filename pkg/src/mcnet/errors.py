"""
Exceptions raised by mcnet.

All exceptions derive from :class:`MCNetError`. Problems with a value that
was handed in (a shape, a config key, a corrupt file) additionally derive
from :class:`ValueError`, so callers that only know the builtin hierarchy
still catch them.
"""


class MCNetError(Exception):
    """Base class of every mcnet exception."""


class ShapeError(MCNetError, ValueError):
    """Operands of a tensor operation have incompatible shapes."""


class ConfigError(MCNetError, ValueError):
    """A configuration value or key is invalid."""


class UsageError(MCNetError, ValueError):
    """The command line asked for something that cannot be done."""


class SceneError(MCNetError, ValueError):
    """A synthetic scene cannot be rendered with the given spec."""


class NonFiniteError(MCNetError, ValueError):
    """A loss or gradient contains NaN or Inf."""


class TrainingDivergedError(MCNetError, RuntimeError):
    """Training produced too many consecutive non-finite iterations."""


class GradCheckFailure(MCNetError, AssertionError):
    """Analytic and numeric gradients disagree beyond the tolerance."""


class CheckpointError(MCNetError, ValueError):
    """A checkpoint file cannot be decoded."""


class CheckpointMagicError(CheckpointError):
    """The file does not start with the checkpoint magic bytes."""


class CheckpointVersionError(CheckpointError):
    """The checkpoint was written with an unsupported format version."""


class CheckpointTruncatedError(CheckpointError):
    """The checkpoint ends before all announced data was read."""


class ConfigMismatchError(CheckpointError):
    """The checkpoint was produced for a different model configuration."""
