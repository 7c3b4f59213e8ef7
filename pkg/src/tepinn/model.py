"""Transformer encoder over IMU windows with a unit-quaternion output head.

Pipeline: a window of gyro+accel rows is projected into the model space,
summed with a sinusoidal encoding of the real timestamps, passed through
post-norm self-attention blocks, and the hidden state at the last
position is mapped to four numbers and normalized onto the unit sphere.
An optional correction stage zeroes the yaw angle of the result so that
unobservable heading drift cannot leak into the estimate.

The whole forward pass is built from autodiff ops, so it is trainable
end to end; the yaw removal used inside the training graph is an
algebraic (trig-free) form of the Euler round trip that stays
differentiable away from gimbal lock.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import quat
from .autodiff import Node
from .quat import EulerAngles, Quaternion, ZeroNormError
from .simulate import ImuSample


class WrongWindowLengthError(ValueError):
    """Input window does not match the configured length."""


class OddModelDimError(ValueError):
    """Sinusoidal encoding needs an even model dimension."""


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 64
    window_len: int = 32
    dropout_rate: float = 0.0
    yaw_correction: bool = True

    def __post_init__(self):
        if self.d_model % 2 != 0:
            raise OddModelDimError(f"d_model must be even, got {self.d_model}")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "d_ff": self.d_ff,
            "window_len": self.window_len,
            "dropout_rate": self.dropout_rate,
            "yaw_correction": self.yaw_correction,
        }

    @staticmethod
    def from_dict(d: dict) -> "EncoderConfig":
        return EncoderConfig(**d)


@dataclass
class LayerParams:
    wq: Node
    bq: Node
    wk: Node
    bk: Node
    wv: Node
    bv: Node
    wo: Node
    bo: Node
    ln1_scale: Node
    ln1_shift: Node
    ff_w1: Node
    ff_b1: Node
    ff_w2: Node
    ff_b2: Node
    ln2_scale: Node
    ln2_shift: Node


@dataclass
class EncoderParams:
    """All trainable tensors of the encoder, as autodiff parameter nodes."""

    w_in: Node
    b_in: Node
    layers: list[LayerParams]
    head_w: Node
    head_b: Node

    @staticmethod
    def init(config: EncoderConfig, rng: np.random.Generator) -> "EncoderParams":
        d, ff = config.d_model, config.d_ff

        def glorot(n_in, n_out):
            std = math.sqrt(2.0 / (n_in + n_out))
            return ad.parameter(std * rng.standard_normal((n_in, n_out)))

        def zeros(n):
            return ad.parameter(np.zeros(n))

        def ones(n):
            return ad.parameter(np.ones(n))

        layers = [
            LayerParams(
                wq=glorot(d, d), bq=zeros(d),
                wk=glorot(d, d), bk=zeros(d),
                wv=glorot(d, d), bv=zeros(d),
                wo=glorot(d, d), bo=zeros(d),
                ln1_scale=ones(d), ln1_shift=zeros(d),
                ff_w1=glorot(d, ff), ff_b1=zeros(ff),
                ff_w2=glorot(ff, d), ff_b2=zeros(d),
                ln2_scale=ones(d), ln2_shift=zeros(d),
            )
            for _ in range(config.n_layers)
        ]
        # Head starts near the identity quaternion (small weights, unit-w bias)
        # so an untrained model predicts a sane attitude.
        head_std = 0.1 * math.sqrt(2.0 / (d + 4))
        return EncoderParams(
            w_in=glorot(6, d),
            b_in=zeros(d),
            layers=layers,
            head_w=ad.parameter(head_std * rng.standard_normal((d, 4))),
            head_b=ad.parameter(np.array([1.0, 0.0, 0.0, 0.0])),
        )

    def named(self):
        yield "w_in", self.w_in
        yield "b_in", self.b_in
        for i, lp in enumerate(self.layers):
            for f in (
                "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                "ln1_scale", "ln1_shift",
                "ff_w1", "ff_b1", "ff_w2", "ff_b2",
                "ln2_scale", "ln2_shift",
            ):
                yield f"layer{i}.{f}", getattr(lp, f)
        yield "head_w", self.head_w
        yield "head_b", self.head_b

    def nodes(self) -> list[Node]:
        return [n for _, n in self.named()]


def build_input(window: Sequence[ImuSample], window_len: int | None = None) -> np.ndarray:
    """Stack a window into an (N, 6) matrix: gyro in columns 0-2, accel in 3-5."""
    if window_len is not None and len(window) != window_len:
        raise WrongWindowLengthError(f"expected window of {window_len}, got {len(window)}")
    out = np.empty((len(window), 6))
    for i, s in enumerate(window):
        out[i, 0:3] = s.gyro
        out[i, 3:6] = s.accel
    return out


@lru_cache(maxsize=8)
def _pe_denominators(d_model: int) -> np.ndarray:
    k = np.arange(d_model // 2)
    return np.power(10000.0, 2.0 * k / d_model)


def positional_encoding(timestamps, d_model: int) -> np.ndarray:
    """Sinusoidal encoding of real timestamps (seconds, not indices).

    Column 2k is sin(t / 10000^(2k/d_model)) and column 2k+1 the matching
    cosine, so each pair shares one frequency.
    """
    if d_model % 2 != 0:
        raise OddModelDimError(f"d_model must be even, got {d_model}")
    t = np.asarray(timestamps, dtype=np.float64).reshape(-1, 1)
    phase = t / _pe_denominators(d_model)
    out = np.empty((t.shape[0], d_model))
    out[:, 0::2] = np.sin(phase)
    out[:, 1::2] = np.cos(phase)
    return out


def _affine(x: Node, scale: Node, shift: Node) -> Node:
    return ad.broadcast_add(ad.broadcast_mul(x, scale), shift)


def _dropout(x: Node, rate: float, rng: np.random.Generator | None) -> Node:
    if rng is None or rate <= 0.0:
        return x
    mask = (rng.random(x.value.shape) >= rate) / (1.0 - rate)
    return ad.mul(x, ad.constant(mask))


def _self_attention(
    h: Node, lp: LayerParams, config: EncoderConfig, block_len: int, attn_sink: list | None
) -> Node:
    """Scaled dot-product attention, applied independently per length-
    ``block_len`` block of rows (each block is one window)."""
    rows, d = h.value.shape
    dh = d // config.n_heads
    scale = math.sqrt(dh)
    q = ad.broadcast_add(h @ lp.wq, lp.bq)
    k = ad.broadcast_add(h @ lp.wk, lp.bk)
    v = ad.broadcast_add(h @ lp.wv, lp.bv)

    blocks = []
    for b0 in range(0, rows, block_len):
        qb = ad.narrow(q, 0, b0, b0 + block_len)
        kb = ad.narrow(k, 0, b0, b0 + block_len)
        vb = ad.narrow(v, 0, b0, b0 + block_len)
        heads = []
        for i in range(config.n_heads):
            lo, hi = i * dh, (i + 1) * dh
            qi = ad.narrow(qb, 1, lo, hi)
            ki = ad.narrow(kb, 1, lo, hi)
            vi = ad.narrow(vb, 1, lo, hi)
            attn = ad.softmax(ad.div_scalar(qi @ ad.transpose(ki), scale))
            if attn_sink is not None:
                attn_sink.append(attn.value)
            heads.append(attn @ vi)
        blocks.append(ad.concat(heads, axis=1))
    merged = blocks[0] if len(blocks) == 1 else ad.concat(blocks, axis=0)
    return ad.broadcast_add(merged @ lp.wo, lp.bo)


def _encoder_stack(
    x_node: Node,
    pos: np.ndarray,
    params: EncoderParams,
    config: EncoderConfig,
    block_len: int,
    dropout_rng: np.random.Generator | None,
    attn_sink: list | None,
) -> Node:
    h = ad.add(ad.broadcast_add(x_node @ params.w_in, params.b_in), ad.constant(pos))
    for lp in params.layers:
        attn = _dropout(
            _self_attention(h, lp, config, block_len, attn_sink), config.dropout_rate, dropout_rng
        )
        z = _affine(ad.layer_norm(ad.add(h, attn)), lp.ln1_scale, lp.ln1_shift)
        ff = ad.broadcast_add(ad.relu(ad.broadcast_add(z @ lp.ff_w1, lp.ff_b1)) @ lp.ff_w2, lp.ff_b2)
        ff = _dropout(ff, config.dropout_rate, dropout_rng)
        h = _affine(ad.layer_norm(ad.add(z, ff)), lp.ln2_scale, lp.ln2_shift)
    return h


def encoder_forward(
    x,
    timestamps,
    params: EncoderParams,
    config: EncoderConfig,
    dropout_rng: np.random.Generator | None = None,
    attn_sink: list | None = None,
) -> Node:
    """Run the encoder stack; returns the (N, d_model) hidden states.

    ``x`` may be an (N, 6) array or an existing graph node.  Dropout is
    active only when a generator is supplied (training); inference is
    deterministic.
    """
    x_node = x if isinstance(x, Node) else ad.constant(x)
    if x_node.value.ndim != 2 or x_node.value.shape[1] != 6:
        raise ad.ShapeMismatchError(f"encoder input must be (N, 6), got {x_node.value.shape}")
    pos = positional_encoding(timestamps, config.d_model)
    return _encoder_stack(
        x_node, pos, params, config, x_node.value.shape[0], dropout_rng, attn_sink
    )


def normalize_rows(q: Node) -> Node:
    """Scale each row of an (M, 4) matrix to unit norm, in-graph."""
    m = q.value.shape[0]
    sq = ad.mul(q, q)
    norms = ad.sqrt(sq @ ad.constant(np.ones((4, 1))))
    if np.any(norms.value < 1e-12):
        raise ZeroNormError("quaternion head output has near-zero norm")
    return ad.div(q, norms @ ad.constant(np.ones((1, 4))))


def quaternion_head(hidden: Node, params: EncoderParams) -> Node:
    """Map the last-position hidden state to a unit quaternion (1, 4) node."""
    last = ad.narrow(hidden, 0, hidden.value.shape[0] - 1, hidden.value.shape[0])
    raw = ad.broadcast_add(last @ params.head_w, params.head_b)
    return normalize_rows(raw)


def yaw_zero(q: Node) -> Node:
    """Remove the yaw component of each unit-quaternion row, in-graph.

    Algebraic form of the Euler round trip: compose with the inverse
    yaw-only rotation recovered rationally from the components.  Output
    may differ from the trig form by overall sign (harmless under
    sign-aligned losses).  Smooth away from gimbal lock and yaw = pi;
    the tiny epsilons only keep gradients finite at those singular sets.
    """
    w = ad.narrow(q, 1, 0, 1)
    x = ad.narrow(q, 1, 1, 2)
    y = ad.narrow(q, 1, 2, 3)
    z = ad.narrow(q, 1, 3, 4)
    ones = ad.constant(np.ones((q.value.shape[0], 1)))

    sin_cos = ad.mul_scalar(ad.add(ad.mul(w, z), ad.mul(x, y)), 2.0)  # sin(yaw)cos(pitch)
    cos_cos = ad.sub(ones, ad.mul_scalar(ad.add(ad.mul(y, y), ad.mul(z, z)), 2.0))
    r = ad.sqrt(ad.add_scalar(ad.add(ad.mul(sin_cos, sin_cos), ad.mul(cos_cos, cos_cos)), 1e-18))

    # half-angle of the yaw rotation
    half_cos = ad.sqrt(ad.add_scalar(ad.div(ad.add(r, cos_cos), ad.mul_scalar(r, 2.0)), 1e-18))
    half_sin = ad.div(sin_cos, ad.sqrt(ad.add_scalar(ad.mul_scalar(ad.mul(r, ad.add(r, cos_cos)), 2.0), 1e-18)))

    return ad.concat(
        [
            ad.add(ad.mul(half_cos, w), ad.mul(half_sin, z)),
            ad.add(ad.mul(half_cos, x), ad.mul(half_sin, y)),
            ad.sub(ad.mul(half_cos, y), ad.mul(half_sin, x)),
            ad.sub(ad.mul(half_cos, z), ad.mul(half_sin, w)),
        ],
        axis=1,
    )


def attitude_correct(q: Quaternion) -> Quaternion:
    """Zero the yaw angle of a unit quaternion, keeping roll and pitch."""
    e = quat.to_euler(q)
    return quat.from_euler(EulerAngles(e.roll, e.pitch, 0.0))


def window_forward(
    x,
    timestamps,
    params: EncoderParams,
    config: EncoderConfig,
    dropout_rng: np.random.Generator | None = None,
) -> Node:
    """Window in, raw (pre-correction) unit quaternion out, as a (1, 4) node."""
    hidden = encoder_forward(x, timestamps, params, config, dropout_rng=dropout_rng)
    return quaternion_head(hidden, params)


def windows_forward(
    xs: Sequence[np.ndarray],
    ts: Sequence[np.ndarray],
    params: EncoderParams,
    config: EncoderConfig,
    dropout_rng: np.random.Generator | None = None,
) -> Node:
    """Encode several equal-length windows as one stacked graph.

    Row-wise stages (projections, layer norm, feed-forward) run on the
    whole stack; attention stays confined to each window's block, so the
    result matches per-window forwards.  Returns the (B, 4) raw unit
    quaternions, one row per window.
    """
    n = config.window_len
    for x in xs:
        if x.shape != (n, 6):
            raise WrongWindowLengthError(f"expected ({n}, 6) windows, got {x.shape}")
    x_node = ad.constant(np.concatenate(xs, axis=0))
    pos = np.concatenate([positional_encoding(t, config.d_model) for t in ts], axis=0)
    hidden = _encoder_stack(x_node, pos, params, config, n, dropout_rng, None)
    last = ad.concat(
        [ad.narrow(hidden, 0, b * n + n - 1, b * n + n) for b in range(len(xs))], axis=0
    )
    raw = ad.broadcast_add(last @ params.head_w, params.head_b)
    return normalize_rows(raw)


def estimate(window: Sequence[ImuSample], params: EncoderParams, config: EncoderConfig) -> Quaternion:
    """Full inference pipeline for one window of IMU samples."""
    x = build_input(window, config.window_len)
    t = np.array([s.t for s in window])
    q_node = window_forward(x, t, params, config)
    q = quat.normalize(Quaternion.from_array(q_node.value[0]))
    return attitude_correct(q) if config.yaw_correction else q
