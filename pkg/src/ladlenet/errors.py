"""Exception hierarchy shared by the library and the command line.

The CLI maps each family onto a stable exit code (see ``ladlenet.cli``).
"""


class LadleNetError(Exception):
    """Base class for every error raised deliberately by this package."""


class ConfigError(LadleNetError, ValueError):
    """A configuration value violates one of its invariants."""


class DataError(LadleNetError):
    """Dataset layout, manifest or image decoding problem."""


class NumericError(LadleNetError, FloatingPointError):
    """Training produced a non-finite value and was aborted."""

    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class CheckpointError(LadleNetError):
    """Checkpoint or weights file is missing, truncated or unreadable."""


class FingerprintError(CheckpointError):
    """Checkpoint was written for a different model/loss configuration."""


class ShapeError(LadleNetError, ValueError):
    """Tensor shape does not satisfy the network's input contract."""
