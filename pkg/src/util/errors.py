"""
Exceptions shared by the solvers and the command line.
"""


class ConfigError(ValueError):
    """
    Raised when a configuration file or a mesh specification is invalid.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DomainError(ValueError):
    """
    Raised when an argument lies outside the set where the operation is
    defined (negative multiplier, inadmissible interpolation exponent, ...).
    """

    pass


class NumericalError(ArithmeticError):
    """
    Raised when an iterative method fails or a NaN shows up.
    """

    def __init__(self, message: str, residual: float | None = None):
        self.residual = residual
        if residual is not None:
            message = f"{message} (residual {residual:.3e})"
        super().__init__(message)


class StabilityError(NumericalError):
    """
    Raised when a time step exceeds the positivity-preserving bound.
    """

    pass


class DegenerateProblemError(NumericalError):
    """
    Raised when the signal operator is singular (no consumption and no
    boundary exchange).
    """

    pass


class BracketViolation(RuntimeError):
    """
    The mass bracket of the stationary multiplier is guaranteed by the
    c-bounds. If it fails, the elliptic solver is broken.
    """

    pass
