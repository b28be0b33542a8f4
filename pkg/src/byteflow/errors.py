"""Exception types shared across the package."""


class ByteflowError(Exception):
    """Base class for all byteflow errors."""


class NonFinite(ByteflowError):
    """A value that must be finite is NaN or infinite."""


class NonPositiveDefinite(ByteflowError):
    """Cholesky factorization hit a nonpositive pivot."""


class BadShape(ByteflowError):
    """Array dimensions do not match what the operation requires."""


class InvalidK(ByteflowError):
    """Requested boundary count is outside [1, T]."""


class MissingRepresentations(ByteflowError):
    """A representation-based strategy was given no representations."""


class OutOfVocab(ByteflowError):
    """Byte symbol id outside the 258-symbol vocabulary."""


class SequenceTooLong(ByteflowError):
    """Input sequence exceeds the configured maximum length."""


class NonFiniteGradient(ByteflowError):
    """An optimizer step saw a NaN/Inf gradient; carries the tensor name."""


class EmptyCorpus(ByteflowError):
    """No bytes available to evaluate or train on."""


class ConfigError(ByteflowError):
    """Malformed configuration file or invalid option combination."""
