"""Exception hierarchy shared across the package."""


class RieszSelectError(Exception):
    """Base class for all package errors."""


class ParseError(RieszSelectError):
    """A CSV row could not be parsed."""


class SchemaError(RieszSelectError):
    """Column roles are missing, duplicated, or unknown."""


class ConsistencyError(RieszSelectError):
    """Data violates a structural invariant (missingness, degenerate columns)."""


class ConfigError(RieszSelectError):
    """A configuration object is incomplete or out of range."""


class StratificationError(RieszSelectError):
    """A (treatment, selection) cell is too small to stratify into folds."""


class SingularNodeError(RieszSelectError):
    """A node system stayed singular at the maximum ridge level."""


class TrainError(RieszSelectError):
    """A learner could not be trained on the given fold."""


class SeparationError(RieszSelectError):
    """Logistic fitting diverged (perfect separation without penalty)."""


class DimensionError(RieszSelectError):
    """Query covariates do not match the trained dimension."""


class DomainError(RieszSelectError):
    """A sensitivity parameter is outside its admissible range."""


class NumericalError(RieszSelectError):
    """A computation produced non-finite intermediate values."""


class GroupError(RieszSelectError):
    """A covariate group is empty, invalid, or exhausts the covariate set."""


class McError(RieszSelectError):
    """Too many Monte-Carlo replications failed in one cell."""
