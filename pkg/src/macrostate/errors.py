"""Exception hierarchy."""


class MacrostateError(Exception):
    """Base class for all library errors."""


class DimensionError(MacrostateError, ValueError):
    """Operator shapes do not match, or a model exceeds the dimension cap."""


class InvariantError(MacrostateError, ValueError):
    """An input violates a type invariant (non-Hermitian, negative spectrum, ...)."""


class NumericalError(MacrostateError, ArithmeticError):
    """A numerical procedure failed to deliver its contract."""


class NonRealizableError(NumericalError):
    """Targets lie outside the set reachable by Gibbs states of the observables."""


class ConvergenceError(NumericalError):
    """An iterative solver exhausted its iteration budget."""


class SingularMatrixError(NumericalError):
    """A Kubo covariance matrix is singular beyond the ridge fallback."""


class ConfigError(MacrostateError, ValueError):
    """A scenario configuration is malformed; ``field`` names the dotted path."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
