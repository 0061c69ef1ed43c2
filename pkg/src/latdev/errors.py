"""Exception hierarchy.

Everything numeric or structural that can go wrong raises a subclass of
:class:`LatdevError`, so callers (and the CLI) can distinguish usage
problems from numeric failures with a single except clause.
"""


class LatdevError(Exception):
    """Base class for all package errors."""


class InvalidLaw(LatdevError):
    """Law construction violated an invariant (mass, ordering, parameter range)."""


class DegenerateDistribution(LatdevError):
    """Single-atom support where a non-constant law is required."""


class TruncationInfeasible(LatdevError):
    """Requested tail bound cannot be certified with a finite table."""


class DomainViolation(LatdevError):
    """Transform argument outside the certified finiteness domain."""


class TargetOutsideRange(LatdevError):
    """Tilt target not attainable: outside the open range of the CGF derivative."""


class NonConvergence(LatdevError):
    """Iterative solve exhausted its budget.

    Carries diagnostics: residual norm and last iterate.
    """

    def __init__(self, message, residual=None, iterate=None):
        super().__init__(message)
        self.residual = residual
        self.iterate = iterate


class SpanNotOne(LatdevError):
    """Operation requires lattice span 1."""


class MeanMismatch(LatdevError):
    """Point-probability target does not sit at the distribution mean."""


class QuadratureUnresolved(LatdevError):
    """Quadrature failed its internal agreement or realness check."""


class ZeroProbabilityEvent(LatdevError):
    """Conditioning event has probability zero."""


class StateBudgetExceeded(LatdevError):
    """Exact DP state space larger than the caller-set budget."""


class AlternatingCancellation(LatdevError):
    """Alternating sum lost too many digits and no exact fallback applies."""


class MaxRejectionsExceeded(LatdevError):
    """Rejection sampler hit its attempt cap.

    ``acceptance_rate`` holds the rate achieved before giving up.
    """

    def __init__(self, message, acceptance_rate=None):
        super().__init__(message)
        self.acceptance_rate = acceptance_rate


class DegenerateResidual(LatdevError):
    """Mark is (affinely) determined by the lattice variable: residual variance 0."""


class MarkDomainViolation(LatdevError):
    """Mark transform has a one-sided Laplace domain where a full line is required."""
