"""Exception hierarchy shared by all modules."""


class CombQfiError(Exception):
    """Base class for package errors."""


class StructureError(CombQfiError, ValueError):
    """Inconsistent spaces, labels, shapes or dimensions."""


class ValidationError(CombQfiError, ValueError):
    """An input does not satisfy a required mathematical property."""


class NotPSDError(ValidationError):
    """An operator expected to be positive semidefinite is not."""


class GaugeError(CombQfiError):
    """Ensemble vectors cannot be differenced consistently across parameter values."""


class ConstantRankError(CombQfiError):
    """The comb family changes rank across the parameter domain."""


class SolverError(CombQfiError):
    """A semidefinite program did not reach an optimal, certified solution."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution
