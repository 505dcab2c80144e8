"""Exception hierarchy shared by all modules."""


class PadicNetError(Exception):
    """Base class for library errors."""


class DomainError(PadicNetError, ValueError):
    """Arguments outside an operation's domain (bad level, prime mismatch, ...)."""


class CapacityError(PadicNetError, ValueError):
    """Requested level would exceed the configured coefficient cap."""


class NumericError(PadicNetError, ArithmeticError):
    """A numerical procedure failed (non-PSD covariance, no bracket, ...)."""


class InfeasibleError(PadicNetError):
    """A state labeling has an index with no admissible label."""


class FormatError(PadicNetError, ValueError):
    """Malformed input file; the message carries the location when known."""
