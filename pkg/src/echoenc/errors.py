"""Exception hierarchy shared by all echoenc modules.

The CLI maps these onto its exit codes, so library code raises the most
specific class that applies.
"""


class EchoError(Exception):
    """Base class for every error raised by echoenc."""


class InvalidInputError(EchoError, ValueError):
    """A signal, spectrogram or band does not satisfy an operation's preconditions."""


class ConfigError(EchoError, ValueError):
    """Inconsistent or unknown configuration values."""


class UsageError(EchoError, RuntimeError):
    """An API was called in a state or with arguments it does not support."""


class DataIOError(EchoError, OSError):
    """A data file could not be read or written."""


class NumericError(EchoError, ArithmeticError):
    """Training produced a non-finite value."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class CheckpointError(EchoError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass
