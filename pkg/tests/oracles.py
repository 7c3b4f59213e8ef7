"""Independent oracles used across the test suite.

Everything here is built from first principles (matrix representations,
axis-angle forms, finite differences) and never calls the code paths it
is used to check.
"""

import numpy as np


def left_product_matrix(p: np.ndarray) -> np.ndarray:
    """4x4 matrix M(p) such that M(p) @ q equals the Hamilton product p*q."""
    w, x, y, z = p
    return np.array(
        [
            [w, -x, -y, -z],
            [x, w, -z, y],
            [y, z, w, -x],
            [z, -y, x, w],
        ]
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix (body-to-world) of a unit quaternion, sandwich form."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_euler_zyx(R: np.ndarray) -> tuple[float, float, float]:
    """Roll/pitch/yaw of a body-to-world rotation matrix, ZYX sequence."""
    roll = np.arctan2(R[2, 1], R[2, 2])
    pitch = -np.arcsin(np.clip(R[2, 0], -1.0, 1.0))
    yaw = np.arctan2(R[1, 0], R[0, 0])
    return float(roll), float(pitch), float(yaw)


def euler_zyx_to_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    return Rz @ Ry @ Rx


def axis_angle_quat(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    h = angle / 2.0
    return np.concatenate([[np.cos(h)], np.sin(h) * axis])


def random_unit_quats(rng: np.random.Generator, n: int) -> np.ndarray:
    q = rng.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def constant_rate_quat(omega, t: float, q0=None) -> np.ndarray:
    """Closed-form attitude after rotating at constant body rate omega."""
    omega = np.asarray(omega, dtype=float)
    speed = np.linalg.norm(omega)
    if speed == 0.0:
        dq = np.array([1.0, 0.0, 0.0, 0.0])
    else:
        dq = axis_angle_quat(omega / speed, speed * t)
    if q0 is None:
        return dq
    return left_product_matrix(np.asarray(q0, dtype=float)) @ dq
