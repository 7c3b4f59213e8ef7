"""Multiplicative extended Kalman filter baseline for attitude from IMU data.

Error-state formulation with a 6-dimensional covariance: a small-angle
attitude error composed multiplicatively on the right of the reference
quaternion, plus an additive gyro bias error.  The accelerometer update
treats the normalized reading as a measurement of the gravity direction
in the body frame, which observes roll and pitch (never yaw) and the two
matching bias components.

Updates are gated when the accel magnitude strays from gravity, so
dynamic acceleration does not corrupt the tilt estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import quat
from .quat import EulerAngles, Quaternion
from .rigid_body import GRAVITY
from .simulate import NoiseSpec, Trajectory

ACCEL_GATE = 0.5  # m/s^2; reject updates when | |a| - g | exceeds this


@dataclass(frozen=True)
class EkfTuning:
    """Process/measurement noise densities and initial covariance."""

    gyro_noise_std: float = 0.01  # rad/s, white
    bias_walk_std: float = 1e-4  # rad/s/sqrt(s)
    accel_noise_std: float = 0.1  # m/s^2, white
    init_att_std: float = 0.1  # rad
    init_bias_std: float = 0.05  # rad/s

    @staticmethod
    def from_noise_spec(noise: NoiseSpec) -> "EkfTuning":
        return EkfTuning(
            gyro_noise_std=max(noise.gyro_noise_std, 1e-4),
            accel_noise_std=max(noise.accel_noise_std, 1e-3),
        )


@dataclass
class EkfState:
    q: Quaternion
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    P: np.ndarray = field(default_factory=lambda: np.diag([0.01] * 3 + [0.0025] * 3))

    @staticmethod
    def initial(q: Quaternion | None = None, tuning: EkfTuning = EkfTuning()) -> "EkfState":
        P = np.diag([tuning.init_att_std**2] * 3 + [tuning.init_bias_std**2] * 3)
        return EkfState(q or Quaternion.identity(), np.zeros(3), P)


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _small_rotation(theta: np.ndarray) -> Quaternion:
    angle = float(np.linalg.norm(theta))
    if angle < 1e-12:
        return Quaternion(1.0, 0.5 * theta[0], 0.5 * theta[1], 0.5 * theta[2])
    axis = theta / angle
    s = math.sin(angle / 2.0)
    return Quaternion(math.cos(angle / 2.0), s * axis[0], s * axis[1], s * axis[2])


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def predict(state: EkfState, gyro: np.ndarray, dt: float, tuning: EkfTuning = EkfTuning()) -> EkfState:
    """Propagate with the bias-corrected gyro; grow covariance by process noise."""
    gyro = np.asarray(gyro, dtype=np.float64)
    omega = gyro - state.gyro_bias
    q_new = quat.normalize(quat.multiply(state.q, _small_rotation(omega * dt)))

    F = np.eye(6)
    F[0:3, 0:3] = np.eye(3) - _skew(omega) * dt
    F[0:3, 3:6] = -np.eye(3) * dt
    Q = np.zeros((6, 6))
    Q[0:3, 0:3] = (tuning.gyro_noise_std**2 * dt) * np.eye(3)
    Q[3:6, 3:6] = (tuning.bias_walk_std**2 * dt) * np.eye(3)

    P = _symmetrize(F @ state.P @ F.T + Q)
    return EkfState(q_new, state.gyro_bias.copy(), P)


def update(state: EkfState, accel: np.ndarray, tuning: EkfTuning = EkfTuning()) -> EkfState:
    """Gravity-direction measurement update from one accelerometer sample.

    The gain is projected off the gravity axis before use: rotation about
    that axis (and the matching gyro-bias component) is exactly
    unobservable from gravity, but linearization-point noise would
    otherwise leak spurious information into it, collapsing its variance
    while the estimate random-walks.  Blocked directions keep their prior.
    """
    accel = np.asarray(accel, dtype=np.float64)
    a_norm = float(np.linalg.norm(accel))
    if abs(a_norm - GRAVITY) > ACCEL_GATE or a_norm < 1e-9:
        return state

    measured_dir = accel / a_norm
    predicted_dir = quat.rotate_inverse(state.q, np.array([0.0, 0.0, -1.0]))
    innovation = measured_dir - predicted_dir

    H = np.zeros((3, 6))
    H[:, 0:3] = _skew(predicted_dir)
    R = (tuning.accel_noise_std / GRAVITY) ** 2 * np.eye(3)

    S = H @ state.P @ H.T + R
    K = state.P @ H.T @ np.linalg.inv(S)
    off_axis = np.eye(3) - np.outer(predicted_dir, predicted_dir)
    K[0:3] = off_axis @ K[0:3]
    K[3:6] = off_axis @ K[3:6]
    dx = K @ innovation

    q_new = quat.normalize(quat.multiply(state.q, _small_rotation(dx[0:3])))
    bias_new = state.gyro_bias + dx[3:6]

    # Joseph form keeps the blocked directions' variance intact
    IKH = np.eye(6) - K @ H
    P = IKH @ state.P @ IKH.T + K @ R @ K.T
    # reset: the multiplicative correction rotated the body frame the error
    # state lives in; transport P into the corrected frame
    G = np.eye(6)
    G[0:3, 0:3] = np.eye(3) - _skew(0.5 * dx[0:3])
    P = _symmetrize(G @ P @ G.T)
    return EkfState(q_new, bias_new, P)


def _tilt_from_accel(accel: np.ndarray) -> Quaternion:
    """Coarse roll/pitch alignment from a single gravity observation."""
    ax, ay, az = accel
    roll = math.atan2(-ay, -az)
    pitch = math.atan2(ax, math.hypot(ay, az))
    return quat.from_euler(EulerAngles(roll, pitch, 0.0))


@dataclass
class EkfRun:
    """Per-sample filter outputs over a trajectory."""

    q: np.ndarray  # (n, 4)
    gyro_bias: np.ndarray  # (n, 3)
    final_state: EkfState


def run(traj: Trajectory, tuning: EkfTuning | None = None) -> EkfRun:
    """Filter a full trajectory: tilt-align from the first accel, then
    predict on each gyro sample and update on each (gated) accel sample."""
    if traj.gyro is None:
        raise ValueError("trajectory has no measurements to filter")
    if tuning is None:
        tuning = EkfTuning.from_noise_spec(traj.meta.noise) if traj.meta.noise else EkfTuning()

    n = len(traj)
    dt = traj.dt
    state = EkfState.initial(_tilt_from_accel(traj.accel[0]), tuning)
    state = update(state, traj.accel[0], tuning)

    qs = np.empty((n, 4))
    biases = np.empty((n, 3))
    qs[0] = state.q.as_array()
    biases[0] = state.gyro_bias
    for i in range(1, n):
        # trapezoidal rate over the interval; the interval-start sample alone
        # leaves an O(dt) commutation drift under multi-axis motion
        omega_mid = 0.5 * (traj.gyro[i - 1] + traj.gyro[i])
        state = predict(state, omega_mid, dt, tuning)
        state = update(state, traj.accel[i], tuning)
        qs[i] = state.q.as_array()
        biases[i] = state.gyro_bias
    return EkfRun(qs, biases, state)
