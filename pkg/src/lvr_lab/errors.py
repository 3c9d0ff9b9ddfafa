"""Exception hierarchy shared by every lvr_lab module."""


class LvrLabError(Exception):
    """Base class for all errors raised by lvr_lab."""

    code = "error"


class DomainError(LvrLabError, ValueError):
    """An input lies outside the domain of the requested operation."""

    code = "domain"


class NonSmoothPoint(LvrLabError, ValueError):
    """A derivative was requested where the pool value function has a kink."""

    code = "non_smooth"


class NonConvergence(LvrLabError, ArithmeticError):
    """A numerical solver failed to reach its tolerance."""

    code = "non_convergence"


class FactorizationError(LvrLabError, ArithmeticError):
    """A covariance matrix could not be factorized."""

    code = "factorization"


class ConfigError(LvrLabError, ValueError):
    code = "config"


class ParseError(ConfigError):
    """Malformed input file. ``line`` is 1-based when known."""

    code = "parse"

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ValidationError(ConfigError):
    code = "validation"

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
