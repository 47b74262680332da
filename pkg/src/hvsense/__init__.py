"""Sensing hidden vehicles from single-bounce multipath V2V transmissions."""

from .errors import (
    ConfigurationError,
    DegenerateConfigurationError,
    EmptyNullSpaceError,
    InfeasibleError,
    InsufficientPathsError,
    NoConsistentOrientationError,
    SensingError,
    UnobservableDimensionError,
)
from .geometry import (
    SINGLE,
    SPEED_OF_LIGHT,
    ClusterLayout,
    PathGeometry,
    PathObservation,
    Pose,
    Scene,
    forward_observe,
    observe,
    path_origin,
    tdoa,
)

__version__ = "0.1.0"
