"""Exception hierarchy shared by all modules."""


class SafeSwitchError(Exception):
    pass


class DimensionError(SafeSwitchError, ValueError):
    pass


class NoSolutionError(SafeSwitchError):
    """Raised when a Lyapunov/Riccati problem has no (stabilizing) solution."""


class ConvergenceError(SafeSwitchError):
    def __init__(self, message, residual=None):
        super().__init__(message if residual is None else f"{message} (residual {residual:.3e})")
        self.residual = residual


class NotPositiveDefiniteError(SafeSwitchError, ValueError):
    pass


class ModelFormatError(SafeSwitchError, ValueError):
    def __init__(self, message, line=None, field=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.field = field


class GenerationError(SafeSwitchError):
    pass


class AssumptionError(SafeSwitchError):
    """A certificate was requested but a stability assumption does not hold."""


class TraceUnavailableError(SafeSwitchError):
    pass
