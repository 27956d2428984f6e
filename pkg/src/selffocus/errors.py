"""Exception hierarchy shared by all modules."""


class SelfFocusError(Exception):
    """Base class for every error raised by the package."""


class TruncationTooSmall(SelfFocusError, ValueError):
    pass


class InvalidSpacing(SelfFocusError, ValueError):
    pass


class InvalidShape(SelfFocusError, ValueError):
    pass


class GridMismatch(SelfFocusError, ValueError):
    """Arithmetic attempted between fields living on different grids."""


class InvalidProblem(SelfFocusError, ValueError):
    pass


class NotInU(SelfFocusError, ValueError):
    """The weighted integral of Q|u|^p is not positive."""

    def __init__(self, message, part=None):
        super().__init__(message)
        self.part = part


class ZeroField(SelfFocusError, ValueError):
    pass


class SignPartMissing(SelfFocusError, ValueError):
    pass


class NotNodal(SelfFocusError, ValueError):
    pass


class FrameMismatch(SelfFocusError, ValueError):
    pass


class InitNotInU(SelfFocusError, ValueError):
    pass


class Diverged(SelfFocusError, RuntimeError):
    pass


class SignPartLost(SelfFocusError, RuntimeError):
    pass


class NewtonDiverged(SelfFocusError, RuntimeError):
    pass


class NegativeInput(SelfFocusError, ValueError):
    pass


class AxisNotGridCompatible(SelfFocusError, ValueError):
    pass


class DegenerateField(SelfFocusError, ValueError):
    pass


class InsufficientTail(SelfFocusError, ValueError):
    pass


class WrongRegime(SelfFocusError, ValueError):
    pass


class ParseError(SelfFocusError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(SelfFocusError, ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
