"""End-to-end training: minibatch loop, Adam updates, constraint projection.

A training item is an anchor sample with three stride-one windows ending
at the anchor's neighbors, so every step sees a short run of consecutive
predictions.  That run is what the physics terms need: the gyro residual
differences it in time, and the accelerometer residual scores each
prediction against its own reading.  The dynamics residual runs over the
middle window's corrected gyro rates.

Two parameter groups with independent learning rates: the encoder
weights, and the physics-side quantities (sensor biases, scale factors,
inertia factor).  Gradients are clipped by global norm, which rescales
but never rotates them.  All randomness is derived from (seed, epoch),
so resuming from a checkpoint replays the exact step sequence.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from . import losses as L
from . import model as tm
from .autodiff import Node
from .losses import CalibrationNodes, LossBreakdown, LossWeights
from .model import EncoderConfig, EncoderParams
from .quat import Quaternion
from .rigid_body import InertiaFactor, SensorCalibration
from .simulate import Trajectory


class EmptyDatasetError(ValueError):
    """No training windows could be extracted from the dataset."""


class NanLossError(FloatingPointError):
    """Training produced a non-finite loss; params were rolled back."""

    def __init__(self, message: str, params: "ModelParams | None" = None):
        super().__init__(message)
        self.params = params


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    lr_network: float = 1e-3
    lr_physics: float = 1e-4
    lr_decay: str = "none"  # "none" or "cosine"
    seed: int = 0
    grad_clip: float = 1.0
    log_every: int = 50
    physics_warmup_frac: float = 0.0  # fraction of steps to ramp physics weights

    def __post_init__(self):
        if self.lr_network < 0 or self.lr_physics < 0:
            raise ValueError("learning rates must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_decay not in ("none", "cosine"):
            raise ValueError(f"unknown lr_decay {self.lr_decay!r}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr_network": self.lr_network,
            "lr_physics": self.lr_physics,
            "lr_decay": self.lr_decay,
            "seed": self.seed,
            "grad_clip": self.grad_clip,
            "log_every": self.log_every,
            "physics_warmup_frac": self.physics_warmup_frac,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(**d)


@dataclass
class ModelParams:
    """Every trainable quantity: encoder weights, calibration, inertia factor."""

    encoder: EncoderParams
    calibration: CalibrationNodes
    inertia_tri: Node  # (3, 3) lower-triangular factor of the inertia tensor

    @staticmethod
    def init(config: EncoderConfig, seed: int) -> "ModelParams":
        rng = np.random.default_rng(seed)
        return ModelParams(
            encoder=EncoderParams.init(config, rng),
            calibration=CalibrationNodes.trainable(),
            inertia_tri=ad.parameter(np.eye(3)),
        )

    def named(self):
        yield from self.encoder.named()
        yield from self.calibration.named()
        yield "inertia.L", self.inertia_tri

    def network_nodes(self) -> list[Node]:
        return self.encoder.nodes()

    def physics_nodes(self) -> list[Node]:
        return [
            self.calibration.gyro_bias,
            self.calibration.accel_bias,
            self.calibration.gyro_scale,
            self.calibration.accel_scale,
            self.inertia_tri,
        ]

    def all_nodes(self) -> list[Node]:
        return self.network_nodes() + self.physics_nodes()

    def inertia(self) -> InertiaFactor:
        return InertiaFactor(self.inertia_tri.value)

    def sensor_calibration(self) -> SensorCalibration:
        return self.calibration.values()

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: node.value.copy() for name, node in self.named()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, node in self.named():
            node.value = np.ascontiguousarray(values[name], dtype=np.float64)


def project_constraints(model: ModelParams) -> None:
    """Clamp parameters back into the physically plausible set, in place.

    The inertia factor keeps a strictly positive diagonal (so I = L L^T
    stays positive definite) and a clean lower triangle; the scale-factor
    matrices are shrunk whenever their spectral radius reaches 0.5.
    Idempotent by construction.
    """
    tri = np.tril(model.inertia_tri.value)
    diag = np.diag(tri).copy()
    np.fill_diagonal(tri, np.maximum(diag, 1e-6))
    model.inertia_tri.value = tri

    for node in (model.calibration.gyro_scale, model.calibration.accel_scale):
        rho = float(np.max(np.abs(np.linalg.eigvals(node.value))))
        if rho >= 0.5:
            node.value = node.value * (0.499 / rho)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class AdamState:
    """Per-parameter first/second moment buffers plus the shared step count."""

    def __init__(self, names: Sequence[str], shapes: dict[str, tuple]):
        self.t = 0
        self.m = {n: np.zeros(shapes[n]) for n in names}
        self.v = {n: np.zeros(shapes[n]) for n in names}

    @staticmethod
    def for_model(model: ModelParams) -> "AdamState":
        shapes = {name: node.value.shape for name, node in model.named()}
        return AdamState(list(shapes), shapes)


_BETA1, _BETA2, _ADAM_EPS = 0.9, 0.999, 1e-8


def _adam_update(state: AdamState, name: str, node: Node, lr: float) -> None:
    g = node.grad if node.grad is not None else np.zeros_like(node.value)
    m = state.m[name] = _BETA1 * state.m[name] + (1.0 - _BETA1) * g
    v = state.v[name] = _BETA2 * state.v[name] + (1.0 - _BETA2) * g * g
    m_hat = m / (1.0 - _BETA1**state.t)
    v_hat = v / (1.0 - _BETA2**state.t)
    node.value = node.value - lr * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)


def clip_gradients(nodes: Sequence[Node], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    sq = 0.0
    for n in nodes:
        if n.grad is not None:
            sq += float(np.sum(n.grad * n.grad))
    norm = math.sqrt(sq)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for n in nodes:
            if n.grad is not None:
                # grad buffers may be shared pass-throughs; never scale in place
                n.grad = n.grad * scale
    return norm


# ---------------------------------------------------------------------------
# training items
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Item:
    traj: int
    anchor: int


def extract_items(trajectories: Sequence[Trajectory], window_len: int, stride: int | None = None) -> list[_Item]:
    """Anchors with room for three consecutive windows plus a lookahead sample."""
    stride = stride or max(1, window_len // 2)
    items = []
    for ti, traj in enumerate(trajectories):
        if traj.gyro is None:
            raise EmptyDatasetError(f"trajectory {ti} has no measurements")
        for a in range(window_len, len(traj) - 1, stride):
            items.append(_Item(ti, a))
    return items


def _window_matrix(traj: Trajectory, end: int, n: int) -> np.ndarray:
    lo = end - n + 1
    return np.concatenate([traj.gyro[lo : end + 1], traj.accel[lo : end + 1]], axis=1)


def _step_terms(
    batch: Sequence[_Item],
    trajectories: Sequence[Trajectory],
    model: ModelParams,
    config: EncoderConfig,
    dropout_rng: np.random.Generator | None,
) -> tuple[Node, Node, Node, Node]:
    """Build one step's loss terms as a single batched graph.

    Each item contributes three stride-one windows ending just before,
    at, and just after its anchor.  Windows are stacked grouped by
    offset ([all -1][all 0][all +1]) so the finite-difference gyro
    residual slices whole groups instead of per-item rows.
    """
    b = len(batch)
    n = config.window_len
    xs, ts, truth_rows, accel_rows, gyro_rows = [], [], [], [], []
    for offset in (-1, 0, 1):
        for item in batch:
            traj = trajectories[item.traj]
            e = item.anchor + offset
            xs.append(_window_matrix(traj, e, n))
            ts.append(traj.times[e - n + 1 : e + 1])
            truth_rows.append(traj.truth_q[e])
            accel_rows.append(traj.accel[e])
            gyro_rows.append(traj.gyro[e])
    dt = trajectories[batch[0].traj].dt

    raw = tm.windows_forward(xs, ts, model.encoder, config, dropout_rng=dropout_rng)  # (3b, 4)

    truth = np.array(truth_rows)
    if config.yaw_correction:
        corrected = tm.yaw_zero(raw)
        truth = np.array(
            [tm.attitude_correct(Quaternion.from_array(row)).as_array() for row in truth]
        )
    else:
        corrected = raw
    truth = L.sign_align_rows(corrected.value, truth)

    data = L.data_loss(corrected, truth)
    acc = L.acc_loss(raw, np.array(accel_rows), model.calibration)

    implied = L.implied_rates_triplet(
        ad.narrow(raw, 0, 0, b), ad.narrow(raw, 0, b, 2 * b), ad.narrow(raw, 0, 2 * b, 3 * b), dt
    )
    gyro_mid = L.correct_gyro_node(np.array(gyro_rows[b : 2 * b]), model.calibration)
    diff = ad.sub(implied, gyro_mid)
    gyro = ad.div_scalar(ad.total(ad.mul(diff, diff)), b)

    mid_gyro_windows = np.concatenate(
        [_window_matrix(trajectories[it.traj], it.anchor, n)[:, 0:3] for it in batch]
    )
    corrected_rates = L.correct_gyro_node(mid_gyro_windows, model.calibration)
    dyn_terms = [
        L.dynamics_loss(
            ad.narrow(corrected_rates, 0, i * n, (i + 1) * n),
            model.inertia_tri,
            np.zeros(3),
            dt,
        )
        for i in range(b)
    ]
    dyn = _mean_node(dyn_terms)
    return data, acc, gyro, dyn


def _mean_node(nodes: list[Node]) -> Node:
    out = nodes[0]
    for n in nodes[1:]:
        out = ad.add(out, n)
    return ad.div_scalar(out, len(nodes)) if len(nodes) > 1 else out


@dataclass
class EpochStats:
    epoch: int
    breakdown: LossBreakdown
    wall_seconds: float


@dataclass
class TrainResult:
    model: ModelParams
    epochs: list[EpochStats]
    steps: list[tuple[int, LossBreakdown]]
    optimizer: AdamState
    final_step: int


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(epoch,)))


def train(
    trajectories: Sequence[Trajectory],
    model: ModelParams,
    cfg: TrainConfig,
    weights: LossWeights = LossWeights(),
    config: EncoderConfig | None = None,
    start_epoch: int = 0,
    optimizer: AdamState | None = None,
    on_epoch: Callable[[EpochStats], None] | None = None,
) -> TrainResult:
    """Run the optimization loop; returns the trained model and loss logs."""
    config = config or EncoderConfig()
    if not trajectories:
        raise EmptyDatasetError("no trajectories given")
    rates = {t.meta.rate for t in trajectories}
    if len(rates) > 1:
        raise ValueError(f"all trajectories must share one sample rate, got {sorted(rates)}")
    items = extract_items(trajectories, config.window_len)
    if not items:
        raise EmptyDatasetError("no training windows could be extracted")

    optimizer = optimizer or AdamState.for_model(model)
    steps_per_epoch = math.ceil(len(items) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    warmup_steps = int(cfg.physics_warmup_frac * total_steps)

    epochs_log: list[EpochStats] = []
    steps_log: list[tuple[int, LossBreakdown]] = []
    step = start_epoch * steps_per_epoch

    # The per-op guard is redundant inside the loop: the per-step finite
    # check below catches blow-ups and rolls back to the epoch snapshot.
    guard_was_on = ad.nan_guard_enabled()
    ad.set_nan_guard(False)
    try:
        return _train_loop(
            trajectories, model, cfg, weights, config, items, optimizer,
            steps_per_epoch, warmup_steps, start_epoch, step,
            epochs_log, steps_log, on_epoch,
        )
    finally:
        ad.set_nan_guard(guard_was_on)


def _train_loop(
    trajectories, model, cfg, weights, config, items, optimizer,
    steps_per_epoch, warmup_steps, start_epoch, step,
    epochs_log, steps_log, on_epoch,
) -> TrainResult:
    total_steps = cfg.epochs * steps_per_epoch
    for epoch in range(start_epoch, cfg.epochs):
        t0 = time.perf_counter()
        snapshot = model.copy_values()
        rng = _epoch_rng(cfg.seed, epoch)
        order = rng.permutation(len(items))
        dropout_rng = rng if config.dropout_rate > 0 else None
        epoch_sums = np.zeros(6)
        n_steps_epoch = 0

        for b0 in range(0, len(items), cfg.batch_size):
            batch = [items[i] for i in order[b0 : b0 + cfg.batch_size]]
            if warmup_steps > 0:
                ramp = min(1.0, (step + 1) / warmup_steps)
                step_weights = replace(
                    weights, acc=weights.acc * ramp, gyro=weights.gyro * ramp,
                    dynamics=weights.dynamics * ramp,
                )
            else:
                step_weights = weights

            try:
                data, acc, gyro, dyn = _step_terms(batch, trajectories, model, config, dropout_rng)
                loss, breakdown = L.total_loss(
                    data, acc, gyro, dyn, step_weights, model.network_nodes()
                )
                if not math.isfinite(breakdown.total):
                    raise ad.NonFiniteValueError("non-finite total loss")
                loss.backward()
            except ad.NonFiniteValueError as e:
                model.load_values(snapshot)
                raise NanLossError(f"step {step}: {e}", params=model) from e

            params = model.all_nodes()
            clip_gradients(params, cfg.grad_clip)

            decay = 1.0
            if cfg.lr_decay == "cosine" and total_steps > 1:
                decay = 0.5 * (1.0 + math.cos(math.pi * step / (total_steps - 1)))

            optimizer.t += 1
            network = set(map(id, model.network_nodes()))
            for name, node in model.named():
                lr = cfg.lr_network if id(node) in network else cfg.lr_physics
                _adam_update(optimizer, name, node, lr * decay)
                node.grad = None
            project_constraints(model)

            step += 1
            n_steps_epoch += 1
            epoch_sums += [
                breakdown.data, breakdown.acc, breakdown.gyro,
                breakdown.dynamics, breakdown.weight_decay, breakdown.total,
            ]
            if cfg.log_every > 0 and step % cfg.log_every == 0:
                steps_log.append((step, breakdown))

        means = epoch_sums / n_steps_epoch
        stats = EpochStats(
            epoch=epoch,
            breakdown=LossBreakdown(*means),
            wall_seconds=time.perf_counter() - t0,
        )
        epochs_log.append(stats)
        if on_epoch is not None:
            on_epoch(stats)

    return TrainResult(model, epochs_log, steps_log, optimizer, step)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def save_checkpoint(
    path: str,
    model: ModelParams,
    config: EncoderConfig,
    train_config: TrainConfig | None = None,
    epoch: int = 0,
    step: int = 0,
    optimizer: AdamState | None = None,
) -> None:
    """Bit-exact snapshot of params, configs, step counters, optimizer state."""
    tensors = dict(model.named())
    tensors = {name: node.value for name, node in tensors.items()}
    if optimizer is not None:
        for name, arr in optimizer.m.items():
            tensors[f"adam.m.{name}"] = arr
        for name, arr in optimizer.v.items():
            tensors[f"adam.v.{name}"] = arr
    meta = {
        "encoder_config": config.to_dict(),
        "train_config": train_config.to_dict() if train_config else None,
        "seed": train_config.seed if train_config else 0,
        "epoch": epoch,
        "step": step,
        "adam_t": optimizer.t if optimizer else None,
    }
    ckpt.save(path, tensors, meta)


@dataclass
class LoadedCheckpoint:
    model: ModelParams
    config: EncoderConfig
    train_config: TrainConfig | None
    epoch: int
    step: int
    optimizer: AdamState | None


def load_checkpoint(path: str) -> LoadedCheckpoint:
    tensors, meta = ckpt.load(path)
    config = EncoderConfig.from_dict(meta["encoder_config"])
    train_config = TrainConfig.from_dict(meta["train_config"]) if meta.get("train_config") else None

    model = ModelParams.init(config, seed=0)
    try:
        model.load_values({k: v for k, v in tensors.items() if not k.startswith("adam.")})
    except KeyError as e:
        raise ckpt.CheckpointError(f"checkpoint missing tensor {e}") from e

    optimizer = None
    if meta.get("adam_t") is not None:
        optimizer = AdamState.for_model(model)
        optimizer.t = int(meta["adam_t"])
        for name in optimizer.m:
            optimizer.m[name] = tensors[f"adam.m.{name}"].copy()
            optimizer.v[name] = tensors[f"adam.v.{name}"].copy()

    return LoadedCheckpoint(
        model=model,
        config=config,
        train_config=train_config,
        epoch=int(meta.get("epoch", 0)),
        step=int(meta.get("step", 0)),
        optimizer=optimizer,
    )
