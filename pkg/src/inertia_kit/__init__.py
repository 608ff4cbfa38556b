"""Ground-truth IMU bias derivation, learned bias prediction and
dead-reckoning evaluation for head-mounted inertial sensors."""

from . import calib, dataio, evaluate, geom, gtbias, preint, simkit
from .errors import (
    ConfigError,
    DataQualityError,
    InertiaKitError,
    InvalidInputError,
    NumericalError,
)
from .streams import BiasEstimate, ImuStream, PoseStream, VelocityStream

__version__ = "0.1.0"

__all__ = [
    "BiasEstimate", "ConfigError", "DataQualityError", "ImuStream", "InertiaKitError", "InvalidInputError",
    "NumericalError", "PoseStream", "VelocityStream", "calib", "dataio", "evaluate", "geom", "gtbias",
    "preint", "simkit",
]
