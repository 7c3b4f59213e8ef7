"""Quaternion attitude estimation: transformer estimator with physics-informed
training, rigid-body IMU simulator, and an EKF baseline."""

__version__ = "0.1.0"

from .quat import EulerAngles, Quaternion
from .rigid_body import BodyState, InertiaFactor, SensorCalibration
from .simulate import ImuSample, NoiseSpec, Trajectory

__all__ = [
    "EulerAngles",
    "Quaternion",
    "BodyState",
    "InertiaFactor",
    "SensorCalibration",
    "ImuSample",
    "NoiseSpec",
    "Trajectory",
    "__version__",
]
