"""Exception types raised across the package."""


class CvMatchError(ValueError):
    """Base class for all errors raised by cvmatch."""


class DimensionError(CvMatchError):
    """Vector or matrix shapes do not line up."""


class InsufficientPoolError(CvMatchError):
    """A nearest-neighbor query asked for more matches than the pool can supply."""


class NoTreatedError(CvMatchError):
    """An estimator was handed a match set with no treated (query) units."""


class SingularDesignError(CvMatchError):
    """A regression design matrix is rank deficient."""


class InsufficientDataError(CvMatchError):
    """Too few observations to fit the requested regression."""


class InvalidMarginalError(CvMatchError):
    """The marginal treatment probability is outside (0, 1)."""


class InfeasibleStratificationError(CvMatchError):
    """A treatment arm is smaller than the requested number of folds."""


class InfeasibleKError(CvMatchError):
    """The requested number of neighbors exceeds some training pool."""


class UndefinedStatisticError(CvMatchError):
    """A test statistic has a zero or degenerate denominator."""


class SeparationWarning(UserWarning):
    """Logit fit hit complete or quasi-complete separation."""
