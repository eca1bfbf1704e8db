"""Exception taxonomy shared across the package."""


class ProbgradError(Exception):
    """Base class for all package-specific errors."""


class InputError(ProbgradError, ValueError):
    """Malformed or inconsistent input (shape mismatch, bad flag, ...)."""


class UnsupportedOrderError(InputError):
    """A kernel derivative beyond the smoothness of the kernel was requested."""


class KernelEvaluationError(ProbgradError):
    """A kernel or Gram evaluation produced a non-finite value."""


class SingularInformationError(ProbgradError):
    """The Gram matrix could not be factorized, even with maximal jitter."""


class DomainError(InputError):
    """Argument outside the admissible domain (e.g. nonpositive parameters)."""


class CoercivityError(DomainError):
    """A conductivity field lost positivity."""


class InterpolationError(InputError):
    """An information location lies outside the solver grid."""


class InvalidSelectorError(InputError):
    """A basis selector points at an excluded (Dirichlet) node."""


class SingularSystemError(ProbgradError):
    """A discrete linear system could not be solved."""


class StiffnessError(ProbgradError):
    """Adaptive step size underflowed; the system is too stiff for the solver."""


class BudgetExhausted(ProbgradError):
    """Control-flow signal: the Gram dimension budget would be exceeded."""
