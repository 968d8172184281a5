"""Exception hierarchy shared by all modules."""


class GevError(Exception):
    """Base class for every error raised by onlinegev."""


class DimensionError(GevError, ValueError):
    """Operand shapes do not conform."""


class ValidationError(GevError, ValueError):
    """An input violates a documented precondition."""


class NotPSDError(ValidationError):
    """A matrix expected to be positive semidefinite has a negative eigenvalue."""


class SingularBError(GevError):
    """B is rank deficient; use the singular-B routines in ``landscape``."""


class NotApplicableError(GevError):
    """The requested check does not apply to this problem (e.g. B full rank)."""


class IllPosedError(GevError):
    """Eigengap failure or an unbounded objective."""


class DecompositionError(GevError):
    """A block needed by the singular-B decomposition is not invertible."""


class SizeError(GevError):
    """Enumeration would exceed the configured cap."""


class TheoryViolationError(GevError, AssertionError):
    """A numerically observed property contradicts the landscape theory."""


class DivergenceError(GevError, RuntimeError):
    """SGHA iterates blew up.

    ``k`` is the iteration at which the blow-up was detected and
    ``last_record`` the most recent finite trajectory record, if any.
    """

    def __init__(self, message, k=None, last_record=None):
        super().__init__(message)
        self.k = k
        self.last_record = last_record


class UndefinedRatioError(GevError, ZeroDivisionError):
    """A ratio process was evaluated with a zero denominator coordinate."""


class DomainError(GevError, ValueError):
    """Argument outside the domain of a closed-form solution."""


class UnstableModeError(GevError, ValueError):
    """An O-U mode with non-positive mean reversion has no stationary law."""


class NotASaddleError(GevError, ValueError):
    """The requested starting equilibrium is the stable one."""
