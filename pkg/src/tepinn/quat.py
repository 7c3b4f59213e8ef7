"""Quaternion algebra, kinematics, conversions, and error metrics.

Conventions used throughout the package:

- Scalar-first storage ``(w, x, y, z)``, Hamilton product.
- A unit quaternion rotates body-frame vectors into the world frame;
  the conjugate rotation maps world to body.
- Euler angles follow the aerospace ZYX sequence: yaw about z, then
  pitch about the new y, then roll about the twice-rotated x.  Pitch is
  confined to [-pi/2, pi/2]; roll and yaw to (-pi, pi].
- ``q`` and ``-q`` encode the same rotation (double cover).  Losses and
  metrics must consume sign-aligned pairs; see :func:`sign_align`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class ZeroNormError(ValueError):
    """Quaternion magnitude too small to normalize."""


class NonZeroYawError(ValueError):
    """Euler triple has a yaw component where only roll/pitch are allowed."""


@dataclass(frozen=True)
class Quaternion:
    """Immutable unit-or-general quaternion, scalar part first."""

    w: float
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    @staticmethod
    def from_array(a) -> "Quaternion":
        return Quaternion(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    @staticmethod
    def identity() -> "Quaternion":
        return Quaternion(1.0, 0.0, 0.0, 0.0)

    def norm(self) -> float:
        return math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def __neg__(self) -> "Quaternion":
        return Quaternion(-self.w, -self.x, -self.y, -self.z)


class EulerAngles(NamedTuple):
    """ZYX Euler angles in radians: roll about x, pitch about y, yaw about z."""

    roll: float
    pitch: float
    yaw: float


def multiply(p: Quaternion, q: Quaternion) -> Quaternion:
    """Hamilton product ``p * q``.  Not normalized."""
    return Quaternion(
        p.w * q.w - p.x * q.x - p.y * q.y - p.z * q.z,
        p.w * q.x + p.x * q.w + p.y * q.z - p.z * q.y,
        p.w * q.y - p.x * q.z + p.y * q.w + p.z * q.x,
        p.w * q.z + p.x * q.y - p.y * q.x + p.z * q.w,
    )


def normalize(q: Quaternion) -> Quaternion:
    """Scale to unit norm.  Raises :class:`ZeroNormError` below 1e-12."""
    n = q.norm()
    if n < 1e-12:
        raise ZeroNormError(f"cannot normalize quaternion with norm {n:.3e}")
    return Quaternion(q.w / n, q.x / n, q.y / n, q.z / n)


def to_euler(q: Quaternion) -> EulerAngles:
    """Convert a unit quaternion to ZYX Euler angles.

    The pitch argument is clamped to [-1, 1] before the arcsine so that
    rounding overshoot near gimbal lock returns a valid representative
    instead of NaN.
    """
    w, x, y, z = q.w, q.x, q.y, q.z
    roll = math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    sp = 2.0 * (w * y - z * x)
    pitch = math.asin(max(-1.0, min(1.0, sp)))
    yaw = math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    return EulerAngles(roll, pitch, yaw)


def from_euler(e: EulerAngles) -> Quaternion:
    """Convert yaw-free Euler angles back to a quaternion.

    Only defined for yaw = 0; this is the yaw-zeroed specialization of
    the ZYX sequence (pitch about y composed after roll about x), and it
    deliberately rejects anything else rather than silently falling back
    to a general three-angle formula.  The z-component sign is the one
    that makes to_euler(from_euler(e)) == e; with the opposite sign the
    product picks up a spurious yaw of about roll*pitch/2.
    """
    if abs(e.yaw) > 1e-12:
        raise NonZeroYawError(f"yaw must be zero, got {e.yaw!r}")
    ch, sh = math.cos(e.roll / 2.0), math.sin(e.roll / 2.0)
    cp, sp = math.cos(e.pitch / 2.0), math.sin(e.pitch / 2.0)
    return Quaternion(ch * cp, sh * cp, ch * sp, -sh * sp)


def pure(v) -> Quaternion:
    """Embed a 3-vector as a pure quaternion (zero scalar part)."""
    return Quaternion(0.0, float(v[0]), float(v[1]), float(v[2]))


def kinematics_derivative(q: Quaternion, omega) -> np.ndarray:
    """Quaternion rate ``dq/dt = 0.5 * q * (0, omega)`` for body rates.

    The result is a tangent 4-vector, intentionally not normalized.
    """
    d = multiply(q, pure(omega))
    return 0.5 * d.as_array()


def rotate(q: Quaternion, v) -> np.ndarray:
    """Rotate a body-frame vector into the world frame: ``q * (0,v) * q̄``."""
    r = multiply(multiply(q, pure(v)), q.conjugate())
    return np.array([r.x, r.y, r.z], dtype=np.float64)


def rotate_inverse(q: Quaternion, v) -> np.ndarray:
    """Rotate a world-frame vector into the body frame: ``q̄ * (0,v) * q``."""
    r = multiply(multiply(q.conjugate(), pure(v)), q)
    return np.array([r.x, r.y, r.z], dtype=np.float64)


def geodesic_error(q_est: Quaternion, q_true: Quaternion) -> float:
    """Rotation angle between two unit quaternions, in [0, pi].

    Sign-invariant under the double cover: ``geodesic_error(q, -q) == 0``
    exactly.  Equivalent to 2*arccos(|<q_est, q_true>|) but evaluated in
    an atan2 form that stays exact at both ends of the range, where the
    arccos of a rounded dot product loses eight digits.
    """
    a = q_est.as_array()
    b = q_true.as_array()
    d_minus = float(np.linalg.norm(a - b))
    d_plus = float(np.linalg.norm(a + b))
    if d_minus < d_plus:
        return 4.0 * math.atan2(d_minus, d_plus)
    return 4.0 * math.atan2(d_plus, d_minus)


def sign_align(q: Quaternion, reference: Quaternion) -> Quaternion:
    """Return ``q`` or ``-q``, whichever lies in the reference hemisphere."""
    dot = q.w * reference.w + q.x * reference.x + q.y * reference.y + q.z * reference.z
    return -q if dot < 0.0 else q
