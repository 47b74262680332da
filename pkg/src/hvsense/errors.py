"""Exception hierarchy shared by the solvers and the signal pipeline."""


class SensingError(Exception):
    """Base class for failures to sense a hidden vehicle."""


class InsufficientPathsError(SensingError):
    """Too few observations to even assemble a linear system."""


class InfeasibleError(SensingError):
    """Fewer paths than the feasibility bound of the chosen solver."""


class EmptyNullSpaceError(SensingError):
    """The left null space is empty, so the orientation cannot be discriminated."""


class NoConsistentOrientationError(SensingError):
    """No heading makes the observations geometrically consistent."""


class DegenerateConfigurationError(SensingError):
    """The distance system is rank deficient at the chosen heading."""


class UnobservableDimensionError(SensingError):
    """The cluster labelling leaves the vehicle length or width unobservable."""


class ConfigurationError(ValueError):
    """Invalid estimator or experiment configuration."""
