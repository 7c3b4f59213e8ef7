"""Data-driven and physics-based training losses.

All terms are mean squares, built from autodiff ops so gradients reach
the encoder, the sensor calibration, and the inertia factor:

- data: component-mean squared error between predicted and ground-truth
  quaternions (the truth must be sign-aligned to the prediction first,
  otherwise the double cover makes the loss discontinuous);
- acc: squared mismatch between gravity as implied by the predicted
  attitude and the bias/scale-corrected accelerometer reading;
- gyro: squared mismatch between the body rate implied by differencing
  consecutive predicted quaternions and the corrected gyro reading;
- dynamics: squared residual of the rotational equations of motion,
  with the rate derivative taken by central differences.

Central differences are used for every time derivative: second-order
accurate, so the residual floor on smooth data shrinks by ~16x per
halving of the sample interval.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .quat import Quaternion
from .rigid_body import GRAVITY, InertiaFactor, SensorCalibration


class LengthMismatchError(ValueError):
    """Paired sequences have different lengths."""


class TooShortError(ValueError):
    """Sequence too short for a central-difference residual."""


@dataclass(frozen=True)
class LossWeights:
    acc: float = 0.1
    gyro: float = 0.1
    dynamics: float = 0.01
    weight_decay: float = 1e-4

    def __post_init__(self):
        if min(self.acc, self.gyro, self.dynamics, self.weight_decay) < 0:
            raise ValueError("loss weights must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "acc": self.acc,
            "gyro": self.gyro,
            "dynamics": self.dynamics,
            "weight_decay": self.weight_decay,
        }

    @staticmethod
    def from_dict(d: dict) -> "LossWeights":
        return LossWeights(**d)


@dataclass(frozen=True)
class LossBreakdown:
    """Raw (unweighted) term values plus the weighted total."""

    data: float
    acc: float
    gyro: float
    dynamics: float
    weight_decay: float
    total: float

    CSV_FIELDS = ("data", "acc", "gyro", "dynamics", "wd", "total")

    def csv_row(self) -> str:
        return ",".join(
            format(v, ".12g")
            for v in (self.data, self.acc, self.gyro, self.dynamics, self.weight_decay, self.total)
        )


@dataclass
class CalibrationNodes:
    """Sensor calibration as graph nodes (trainable or frozen)."""

    gyro_bias: Node
    accel_bias: Node
    gyro_scale: Node
    accel_scale: Node

    @staticmethod
    def trainable() -> "CalibrationNodes":
        return CalibrationNodes(
            gyro_bias=ad.parameter(np.zeros(3)),
            accel_bias=ad.parameter(np.zeros(3)),
            gyro_scale=ad.parameter(np.zeros((3, 3))),
            accel_scale=ad.parameter(np.zeros((3, 3))),
        )

    @staticmethod
    def frozen(cal: SensorCalibration) -> "CalibrationNodes":
        return CalibrationNodes(
            gyro_bias=ad.constant(cal.gyro_bias),
            accel_bias=ad.constant(cal.accel_bias),
            gyro_scale=ad.constant(cal.gyro_scale),
            accel_scale=ad.constant(cal.accel_scale),
        )

    def values(self) -> SensorCalibration:
        return SensorCalibration(
            gyro_bias=self.gyro_bias.value,
            accel_bias=self.accel_bias.value,
            gyro_scale=self.gyro_scale.value,
            accel_scale=self.accel_scale.value,
        )

    def named(self):
        yield "cal.gyro_bias", self.gyro_bias
        yield "cal.accel_bias", self.accel_bias
        yield "cal.gyro_scale", self.gyro_scale
        yield "cal.accel_scale", self.accel_scale


_LOWER_MASK = np.tril(np.ones((3, 3)))


def inertia_node_from_factor(factor: InertiaFactor) -> Node:
    return ad.constant(factor.L)


def _as_node(x, wrap=ad.constant) -> Node:
    return x if isinstance(x, Node) else wrap(np.asarray(x, dtype=np.float64))


def as_quat_matrix(seq) -> np.ndarray:
    """Sequence of Quaternion or (M, 4) array-like to an (M, 4) array."""
    if isinstance(seq, np.ndarray):
        return seq.reshape(-1, 4).astype(np.float64)
    if len(seq) and isinstance(seq[0], Quaternion):
        return np.array([q.as_array() for q in seq])
    return np.asarray(seq, dtype=np.float64).reshape(-1, 4)


def sign_align_rows(reference: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Flip rows of ``target`` that lie in the opposite hemisphere of ``reference``."""
    flips = np.where(np.sum(reference * target, axis=1) < 0.0, -1.0, 1.0)
    return target * flips[:, None]


def correct_gyro_node(raw: np.ndarray | Node, cal: CalibrationNodes) -> Node:
    """In-graph mirror of rigid_body.correct_gyro for (M, 3) rows."""
    raw = _as_node(raw)
    scaled = raw @ ad.transpose(cal.gyro_scale)
    return ad.broadcast_add(ad.sub(raw, scaled), ad.mul_scalar(cal.gyro_bias, -1.0))


def correct_accel_node(raw: np.ndarray | Node, cal: CalibrationNodes) -> Node:
    """In-graph mirror of rigid_body.correct_accel for (M, 3) rows."""
    raw = _as_node(raw)
    scaled = raw @ ad.transpose(cal.accel_scale)
    return ad.broadcast_add(ad.sub(raw, scaled), ad.mul_scalar(cal.accel_bias, -1.0))


def _cols(m: Node, n: int) -> list[Node]:
    return [ad.narrow(m, 1, i, i + 1) for i in range(n)]


def gravity_rows(q: Node, g: float = GRAVITY) -> Node:
    """Body-frame gravity for each unit-quaternion row of ``q``, shape (M, 3)."""
    w, x, y, z = _cols(q, 4)
    ax = ad.mul_scalar(ad.sub(ad.mul(w, y), ad.mul(x, z)), 2.0 * g)
    ay = ad.mul_scalar(ad.add(ad.mul(y, z), ad.mul(w, x)), -2.0 * g)
    az = ad.mul_scalar(ad.add_scalar(ad.mul_scalar(ad.add(ad.mul(x, x), ad.mul(y, y)), 2.0), -1.0), g)
    return ad.concat([ax, ay, az], axis=1)


def _mean_sq_norm(rows: Node) -> Node:
    # mean over rows of the squared row norm
    return ad.div_scalar(ad.total(ad.mul(rows, rows)), rows.value.shape[0])


def data_loss(q_pred: Node, q_true) -> Node:
    """Component-mean squared quaternion error.

    ``q_true`` must already be sign-aligned to the prediction per pair
    (see :func:`sign_align_rows`).
    """
    q_true = as_quat_matrix(q_true)
    if q_pred.value.shape[0] != q_true.shape[0]:
        raise LengthMismatchError(
            f"{q_pred.value.shape[0]} predictions vs {q_true.shape[0]} truths"
        )
    if q_true.shape[0] < 1:
        raise LengthMismatchError("need at least one pair")
    diff = ad.sub(q_pred, ad.constant(q_true))
    return ad.mean(ad.mul(diff, diff))


def acc_loss(q_pred: Node, accel_measured, cal: CalibrationNodes, g: float = GRAVITY) -> Node:
    """Mean squared norm of predicted-vs-measured body gravity, (m/s^2)^2."""
    accel_measured = np.asarray(accel_measured, dtype=np.float64).reshape(-1, 3)
    if q_pred.value.shape[0] != accel_measured.shape[0]:
        raise LengthMismatchError(
            f"{q_pred.value.shape[0]} predictions vs {accel_measured.shape[0]} accel rows"
        )
    diff = ad.sub(gravity_rows(q_pred, g), correct_accel_node(accel_measured, cal))
    return _mean_sq_norm(diff)


def _conj_mul_vec(p: Node, b: Node) -> Node:
    """Vector part of conj(p) * b, row-wise over (M, 4) quaternion matrices."""
    pw, px, py, pz = _cols(p, 4)
    bw, bx, by, bz = _cols(b, 4)
    ox = ad.add(ad.sub(ad.mul(pw, bx), ad.mul(px, bw)), ad.sub(ad.mul(pz, by), ad.mul(py, bz)))
    oy = ad.add(ad.sub(ad.mul(pw, by), ad.mul(py, bw)), ad.sub(ad.mul(px, bz), ad.mul(pz, bx)))
    oz = ad.add(ad.sub(ad.mul(pw, bz), ad.mul(pz, bw)), ad.sub(ad.mul(py, bx), ad.mul(px, by)))
    return ad.concat([ox, oy, oz], axis=1)


def implied_rates_triplet(q_minus: Node, q_mid: Node, q_plus: Node, dt: float) -> Node:
    """Central-difference body rates from prediction triples at spacing dt.

    2 * vec(conj(q_mid) * (q_plus - q_minus) / (2 dt)); the constants fold
    into a single 1/dt factor.  Rows pair up across the three inputs.
    """
    dq = ad.div_scalar(ad.sub(q_plus, q_minus), dt)
    return _conj_mul_vec(q_mid, dq)


def implied_body_rates(q_pred: Node, dt: float) -> Node:
    """Body angular rates implied by differencing predicted quaternions.

    For interior samples: 2 * vec(conj(q_i) * (q_{i+1} - q_{i-1}) / (2 dt)),
    the central-difference form of the kinematic relation.  Shape (M-2, 3).
    """
    m = q_pred.value.shape[0]
    if m < 3:
        raise TooShortError(f"need at least 3 predictions, got {m}")
    return implied_rates_triplet(
        ad.narrow(q_pred, 0, 0, m - 2),
        ad.narrow(q_pred, 0, 1, m - 1),
        ad.narrow(q_pred, 0, 2, m),
        dt,
    )


def gyro_loss(q_pred: Node, gyro_measured, cal: CalibrationNodes, dt: float) -> Node:
    """Mean squared norm of implied-vs-measured body rates, (rad/s)^2."""
    gyro_measured = np.asarray(gyro_measured, dtype=np.float64).reshape(-1, 3)
    m = q_pred.value.shape[0]
    if gyro_measured.shape[0] != m:
        raise LengthMismatchError(f"{m} predictions vs {gyro_measured.shape[0]} gyro rows")
    implied = implied_body_rates(q_pred, dt)
    corrected = correct_gyro_node(gyro_measured[1 : m - 1], cal)
    return _mean_sq_norm(ad.sub(implied, corrected))


def _cross_rows(u: Node, v: Node) -> Node:
    ux, uy, uz = _cols(u, 3)
    vx, vy, vz = _cols(v, 3)
    return ad.concat(
        [
            ad.sub(ad.mul(uy, vz), ad.mul(uz, vy)),
            ad.sub(ad.mul(uz, vx), ad.mul(ux, vz)),
            ad.sub(ad.mul(ux, vy), ad.mul(uy, vx)),
        ],
        axis=1,
    )


def dynamics_loss(omega, inertia, tau, dt: float) -> Node:
    """Mean squared residual of I*dw/dt + w x (I w) - tau, (N*m)^2.

    ``omega`` is an (K, 3) node or array of body rates; ``inertia`` is an
    InertiaFactor or a trainable (3, 3) node holding the lower factor
    (the upper triangle is masked off in-graph).
    """
    omega = _as_node(omega)
    k = omega.value.shape[0]
    if k < 3:
        raise TooShortError(f"need at least 3 rate samples, got {k}")
    L = inertia_node_from_factor(inertia) if isinstance(inertia, InertiaFactor) else inertia
    L = ad.mul(L, ad.constant(_LOWER_MASK))
    inertia_mat = L @ ad.transpose(L)  # symmetric, so row form uses I directly

    omega_mid = ad.narrow(omega, 0, 1, k - 1)
    omega_dot = ad.div_scalar(
        ad.sub(ad.narrow(omega, 0, 2, k), ad.narrow(omega, 0, 0, k - 2)), 2.0 * dt
    )
    momentum = omega_mid @ inertia_mat
    tau = np.asarray(tau, dtype=np.float64).reshape(3)
    residual = ad.broadcast_add(
        ad.add(omega_dot @ inertia_mat, _cross_rows(omega_mid, momentum)),
        ad.constant(-tau),
    )
    return _mean_sq_norm(residual)


def physics_loss(acc: Node, gyro: Node, dynamics: Node, weights: LossWeights) -> Node:
    """Weighted sum of the three physics terms."""
    return ad.add(
        ad.add(ad.mul_scalar(acc, weights.acc), ad.mul_scalar(gyro, weights.gyro)),
        ad.mul_scalar(dynamics, weights.dynamics),
    )


def weight_decay_term(params: Sequence[Node]) -> Node:
    """Sum of squared entries over the given parameter tensors."""
    terms = [ad.total(ad.mul(p, p)) for p in params]
    out = terms[0]
    for t in terms[1:]:
        out = ad.add(out, t)
    return out


def total_loss(
    data: Node,
    acc: Node,
    gyro: Node,
    dynamics: Node,
    weights: LossWeights,
    decay_params: Sequence[Node] = (),
) -> tuple[Node, LossBreakdown]:
    """Combine the data term, weighted physics terms, and L2 regularization."""
    total = ad.add(data, physics_loss(acc, gyro, dynamics, weights))
    if weights.weight_decay > 0.0 and decay_params:
        wd = weight_decay_term(decay_params)
        total = ad.add(total, ad.mul_scalar(wd, weights.weight_decay))
        wd_value = float(wd.value[0])
    else:
        wd_value = 0.0
    breakdown = LossBreakdown(
        data=float(data.value[0]),
        acc=float(acc.value[0]),
        gyro=float(gyro.value[0]),
        dynamics=float(dynamics.value[0]),
        weight_decay=wd_value,
        total=float(total.value[0]),
    )
    return total, breakdown
