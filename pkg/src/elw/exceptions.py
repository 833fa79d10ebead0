"""Exception hierarchy.

Everything raised on purpose by this package derives from :class:`ELWError`,
so callers that run many replicates can catch one type. Input-shape problems
additionally derive from :class:`ValueError`.
"""


class ELWError(Exception):
    """Base class for package errors."""


class SolverError(ELWError):
    """The empirical-likelihood dual could not be solved."""


class NonFiniteError(ELWError, ValueError):
    pass


class InfeasibleLambda(SolverError, ValueError):
    """Some ``1 + lambda' U_i`` is not positive."""


class ConvergenceFailure(SolverError):
    pass


class HullViolation(SolverError):
    """The zero vector is not inside the convex hull of the constraint rows."""


class SingularHessian(SolverError):
    pass


class ZeroMeanDirection(SolverError):
    pass


class SingularCovariance(SolverError):
    pass


class ShapeMismatch(ELWError, ValueError):
    pass


class RankDeficient(ELWError):
    pass


class OneClass(ELWError, ValueError):
    pass


class EmptyConstraints(ELWError, ValueError):
    pass


class BadColumn(ELWError, ValueError):
    pass


class SingularD(ELWError):
    """Plug-in model-value covariance is singular even after a ridge."""


class TooManyFailures(ELWError):
    pass


class AllReplicatesFailed(ELWError):
    pass


class BadMoments(ELWError, ValueError):
    pass


class ParseError(ELWError, ValueError):
    pass


class SchemaMismatch(ELWError, ValueError):
    pass


class ConfigError(ELWError, ValueError):
    def __init__(self, message, path="$"):
        super().__init__(f"{path}: {message}")
        self.path = path


class SeparationWarning(UserWarning):
    """Logistic fit hit (quasi-)complete separation; coefficients are unreliable."""
