"""Exception types raised by the public API.

Every error that callers are expected to catch lives here so that the CLI
and the HTTP service can map them to exit codes / status codes in one place.
"""


class RefsegError(Exception):
    """Base class for all package errors."""


class EmptyExpression(RefsegError):
    """Raised when a referring expression is empty after trimming."""


class BackendUnavailable(RefsegError):
    """Raised when the pretrained text backend is requested but its
    dependency or weights cannot be loaded."""


class ShapeMismatch(RefsegError):
    """Raised when tensor shapes disagree with the configured dimensions."""


class BadImageShape(RefsegError):
    """Raised for images whose spatial size the encoder cannot ingest."""


class AllTokensMasked(RefsegError):
    """Raised when a text sequence contains no valid (unpadded) token."""


class GenerationRetryExceeded(RefsegError):
    """Raised when the synthetic generator cannot place lesions or build a
    uniquely-resolving expression within the retry budget."""


class MalformedRecord(RefsegError):
    """Raised when a dataset annotation record cannot be parsed."""


class MissingFile(RefsegError):
    """Raised when a dataset record points at a file that does not exist."""


class EmptyEvaluation(RefsegError):
    """Raised when an evaluation is requested over zero samples."""


class NonFiniteLoss(RefsegError):
    """Raised when the training loss becomes NaN or infinite."""


class CheckpointFormatError(RefsegError):
    """Raised when a checkpoint archive is missing the format tag or has an
    incompatible version."""


class ConfigError(RefsegError):
    """Raised for unparseable or inconsistent configuration values."""
