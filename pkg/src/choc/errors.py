"""Exception types shared across the package."""


class ChocError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(ChocError):
    """Inconsistent objects were combined (grid/time mismatch, bad run config)."""


class ShapeError(ChocError):
    """An array argument has the wrong shape or length."""


class DomainError(ChocError):
    """A scalar argument is outside its mathematical domain."""


class PreconditionError(ChocError):
    """A documented precondition of an operation is violated.

    Carries the offending measured value in ``value`` when applicable.
    """

    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


class BlowUpError(ChocError):
    """The time integration produced a non-finite or runaway state.

    Attributes
    ----------
    step : int
        Index of the step at which the blow-up was detected.
    max_abs : float
        Largest absolute state value at detection time.
    """

    def __init__(self, step, max_abs):
        super().__init__(
            f"state blow-up at step {step}: max |y| = {max_abs:.3e}"
        )
        self.step = step
        self.max_abs = max_abs


class SnapshotFormatError(ChocError):
    """A field snapshot file is malformed (magic, version, or payload)."""


class ConfigParseError(ConfigurationError):
    """A run-config file failed to parse; carries a line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
