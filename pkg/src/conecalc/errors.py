"""Exception hierarchy shared by all modules."""


class ConeCalcError(Exception):
    """Base class for every error raised by conecalc."""


class RepresentationError(ConeCalcError, ValueError):
    """A measure, triple or function spec is malformed."""


class DomainError(ConeCalcError, ValueError):
    """An operation was called outside its domain (integrability, alpha range, ...)."""


class EvaluationError(ConeCalcError, ArithmeticError):
    """A numerical evaluation produced a non-finite value or exhausted its budget."""


class EstimationError(ConeCalcError, ArithmeticError):
    """A limit or extrapolation did not converge."""


class CapabilityError(ConeCalcError, NotImplementedError):
    """The requested input is valid but not supported by the analytic route."""


class PreconditionError(DomainError):
    """A certified precondition failed; the failing certificate is attached."""

    def __init__(self, message: str, certificate=None):
        super().__init__(message)
        self.certificate = certificate
