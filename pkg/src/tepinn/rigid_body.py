"""Rigid-body rotational dynamics, RK4 propagation, and IMU correction models.

The inertia tensor is carried as a lower-triangular Cholesky factor L with
I = L L^T, so any factor with a positive diagonal yields a symmetric
positive-definite inertia by construction.  Angular acceleration solves
through the factor (two triangular substitutions) instead of forming an
explicit inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quat
from .quat import Quaternion

GRAVITY = 9.81  # m/s^2, world frame is z-up with gravity along -z


class SingularInertiaError(ValueError):
    """Inertia factor has a (near-)zero diagonal entry."""


@dataclass(frozen=True)
class InertiaFactor:
    """Lower-triangular factor L of the inertia tensor I = L L^T."""

    L: np.ndarray

    def __post_init__(self):
        L = np.array(self.L, dtype=np.float64)
        if L.shape != (3, 3):
            raise ValueError(f"inertia factor must be 3x3, got {L.shape}")
        L = np.tril(L)
        object.__setattr__(self, "L", L)

    @staticmethod
    def identity() -> "InertiaFactor":
        return InertiaFactor(np.eye(3))

    @staticmethod
    def from_diagonal(dx: float, dy: float, dz: float) -> "InertiaFactor":
        if min(dx, dy, dz) <= 0.0:
            raise SingularInertiaError("principal inertias must be positive")
        return InertiaFactor(np.diag(np.sqrt([dx, dy, dz])))

    @staticmethod
    def from_matrix(inertia: np.ndarray) -> "InertiaFactor":
        return InertiaFactor(np.linalg.cholesky(np.asarray(inertia, dtype=np.float64)))

    def matrix(self) -> np.ndarray:
        """Reconstructed inertia tensor I = L L^T."""
        return self.L @ self.L.T


@dataclass(frozen=True)
class SensorCalibration:
    """Gyro/accelerometer biases and scale-factor matrices.

    The correction model subtracts both the bias and S times the raw
    reading, so (I - S) must be invertible; a spectral radius below 1 is
    checked at construction.
    """

    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_scale: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    accel_scale: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))

    def __post_init__(self):
        for name in ("gyro_bias", "accel_bias"):
            v = np.array(getattr(self, name), dtype=np.float64).reshape(3)
            object.__setattr__(self, name, v)
        for name in ("gyro_scale", "accel_scale"):
            m = np.array(getattr(self, name), dtype=np.float64)
            if m.shape != (3, 3):
                raise ValueError(f"{name} must be 3x3, got {m.shape}")
            rho = np.max(np.abs(np.linalg.eigvals(m)))
            if rho >= 1.0:
                raise ValueError(f"{name} spectral radius {rho:.3f} >= 1")
            object.__setattr__(self, name, m)


@dataclass(frozen=True)
class BodyState:
    """Orientation plus body-frame angular velocity."""

    q: Quaternion
    omega: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", np.array(self.omega, dtype=np.float64).reshape(3))


def _solve_factored(L: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    # Solves (L L^T) x = rhs with forward then backward substitution.
    if min(L[0, 0], L[1, 1], L[2, 2]) < 1e-9:
        raise SingularInertiaError("inertia factor diagonal below 1e-9")
    y0 = rhs[0] / L[0, 0]
    y1 = (rhs[1] - L[1, 0] * y0) / L[1, 1]
    y2 = (rhs[2] - L[2, 0] * y0 - L[2, 1] * y1) / L[2, 2]
    x2 = y2 / L[2, 2]
    x1 = (y1 - L[2, 1] * x2) / L[1, 1]
    x0 = (y0 - L[1, 0] * x1 - L[2, 0] * x2) / L[0, 0]
    return np.array([x0, x1, x2])


def angular_acceleration(inertia: InertiaFactor, omega, tau) -> np.ndarray:
    """Euler's rotational equations: solve I w' = tau - w x (I w)."""
    omega = np.asarray(omega, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    I_omega = inertia.matrix() @ omega
    rhs = tau - np.cross(omega, I_omega)
    return _solve_factored(inertia.L, rhs)


def _state_derivative(q_arr: np.ndarray, omega: np.ndarray, inertia: InertiaFactor, tau):
    q = Quaternion.from_array(q_arr)
    dq = quat.kinematics_derivative(q, omega)
    domega = angular_acceleration(inertia, omega, tau)
    return dq, domega


def rk4_step(state: BodyState, inertia: InertiaFactor, tau, dt: float) -> BodyState:
    """Classic fourth-order Runge-Kutta step over the coupled (q, omega) system.

    The torque is held constant over the step.  The quaternion is
    re-normalized afterwards so repeated stepping cannot drift off the
    unit sphere.
    """
    tau = np.asarray(tau, dtype=np.float64)
    q0 = state.q.as_array()
    w0 = state.omega

    k1q, k1w = _state_derivative(q0, w0, inertia, tau)
    k2q, k2w = _state_derivative(q0 + 0.5 * dt * k1q, w0 + 0.5 * dt * k1w, inertia, tau)
    k3q, k3w = _state_derivative(q0 + 0.5 * dt * k2q, w0 + 0.5 * dt * k2w, inertia, tau)
    k4q, k4w = _state_derivative(q0 + dt * k3q, w0 + dt * k3w, inertia, tau)

    q_new = q0 + (dt / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    w_new = w0 + (dt / 6.0) * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
    return BodyState(quat.normalize(Quaternion.from_array(q_new)), w_new)


def correct_gyro(raw, cal: SensorCalibration) -> np.ndarray:
    """Remove bias and scale-factor error: w - b_g - S_g w."""
    raw = np.asarray(raw, dtype=np.float64)
    return raw - cal.gyro_bias - cal.gyro_scale @ raw


def correct_accel(raw, cal: SensorCalibration) -> np.ndarray:
    """Remove bias and scale-factor error: a - b_a - S_a a."""
    raw = np.asarray(raw, dtype=np.float64)
    return raw - cal.accel_bias - cal.accel_scale @ raw


def gravity_in_body(q: Quaternion, g: float = GRAVITY) -> np.ndarray:
    """World gravity (0, 0, -g) expressed in the body frame of ``q``."""
    return quat.rotate_inverse(q, np.array([0.0, 0.0, -g]))
