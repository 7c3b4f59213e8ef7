"""Ground-truth trajectory generation, IMU measurement synthesis, dataset I/O.

Trajectories are rigid-body motions produced by the RK4 integrator in
:mod:`tepinn.rigid_body`; motion profiles shape them by choosing the
torque applied over each step (unit inertia).  Measurements invert the
sensor correction model: the synthesized readings carry the bias, scale
factor, and white noise that the estimator is later asked to remove.

The accelerometer model is rotation-only: specific force is the gravity
vector expressed in the body frame, with no linear-acceleration term.

Dataset format: UTF-8 CSV with header
``t,gx,gy,gz,ax,ay,az,qw,qx,qy,qz,wx,wy,wz``, one row per sample, floats
written with 17 significant digits (lossless for float64), LF endings.
A ``.meta.json`` sidecar stores the noise spec, seeds, profile, and rate.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import rigid_body
from .quat import Quaternion
from .rigid_body import GRAVITY, BodyState, InertiaFactor, SensorCalibration
from .util import atomic_write_text

_HEADER = "t,gx,gy,gz,ax,ay,az,qw,qx,qy,qz,wx,wy,wz"


class UnknownProfileError(ValueError):
    """Motion profile name not recognized."""


class ParseError(ValueError):
    """Dataset file is malformed."""


@dataclass(frozen=True)
class ImuSample:
    """One timestamped gyro + accelerometer reading."""

    t: float
    gyro: np.ndarray
    accel: np.ndarray


@dataclass(frozen=True)
class NoiseSpec:
    """Measurement corruption model: white noise, constant bias, scale factor."""

    gyro_noise_std: float = 0.0
    accel_noise_std: float = 0.0
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_scale: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    accel_scale: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    sample_rate: float = 100.0

    def __post_init__(self):
        if self.gyro_noise_std < 0 or self.accel_noise_std < 0:
            raise ValueError("noise stds must be nonnegative")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "gyro_bias", np.asarray(self.gyro_bias, dtype=np.float64).reshape(3))
        object.__setattr__(self, "accel_bias", np.asarray(self.accel_bias, dtype=np.float64).reshape(3))
        object.__setattr__(self, "gyro_scale", np.asarray(self.gyro_scale, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "accel_scale", np.asarray(self.accel_scale, dtype=np.float64).reshape(3, 3))

    def calibration(self) -> SensorCalibration:
        """The calibration that exactly models this spec's bias/scale terms."""
        return SensorCalibration(
            gyro_bias=self.gyro_bias,
            accel_bias=self.accel_bias,
            gyro_scale=self.gyro_scale,
            accel_scale=self.accel_scale,
        )

    def to_dict(self) -> dict:
        return {
            "gyro_noise_std": self.gyro_noise_std,
            "accel_noise_std": self.accel_noise_std,
            "gyro_bias": self.gyro_bias.tolist(),
            "accel_bias": self.accel_bias.tolist(),
            "gyro_scale": self.gyro_scale.tolist(),
            "accel_scale": self.accel_scale.tolist(),
            "sample_rate": self.sample_rate,
        }

    @staticmethod
    def from_dict(d: dict) -> "NoiseSpec":
        return NoiseSpec(**d)


# Preset stds; biases scale with the noise floor along a fixed pattern so
# presets stay fully reproducible without extra flags.
_BIAS_PATTERN = np.array([1.0, -0.5, 0.25])
_PRESETS = {"low": (0.001, 0.01), "mid": (0.01, 0.1), "high": (0.05, 0.5)}


def noise_preset(name: str, sample_rate: float = 100.0) -> NoiseSpec:
    """Named noise level: low, mid, or high."""
    try:
        gyro_std, accel_std = _PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown noise preset {name!r}; choose from {sorted(_PRESETS)}")
    return NoiseSpec(
        gyro_noise_std=gyro_std,
        accel_noise_std=accel_std,
        gyro_bias=2.0 * gyro_std * _BIAS_PATTERN,
        accel_bias=2.0 * accel_std * _BIAS_PATTERN,
        sample_rate=sample_rate,
    )


# ---------------------------------------------------------------------------
# motion profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Static:
    name = "static"

    def params(self) -> dict:
        return {}


@dataclass(frozen=True)
class ConstantRate:
    omega: np.ndarray
    name = "constant-rate"

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=np.float64).reshape(3))

    def params(self) -> dict:
        return {"omega": self.omega.tolist()}


@dataclass(frozen=True)
class Sinusoidal:
    """Angular rate oscillating on all three axes with staggered phases."""

    amplitude: float
    freq_hz: float
    name = "sinusoidal"

    def params(self) -> dict:
        return {"amplitude": self.amplitude, "freq_hz": self.freq_hz}


@dataclass(frozen=True)
class RandomWalk:
    """Angular rate performing a Gaussian random walk with step sigma*sqrt(dt)."""

    sigma: float
    name = "random-walk"

    def params(self) -> dict:
        return {"sigma": self.sigma}


MotionProfile = Static | ConstantRate | Sinusoidal | RandomWalk

_SINUSOID_PHASES = np.array([0.0, 2.0 * math.pi / 3.0, 4.0 * math.pi / 3.0])


def parse_profile(name: str, **kwargs) -> MotionProfile:
    """Build a profile from its CLI name plus keyword parameters."""
    if name == "static":
        return Static()
    if name == "constant-rate":
        return ConstantRate(omega=kwargs.get("omega", (0.0, 0.0, math.pi / 2.0)))
    if name == "sinusoidal":
        return Sinusoidal(
            amplitude=float(kwargs.get("amplitude", 1.0)),
            freq_hz=float(kwargs.get("freq_hz", 0.5)),
        )
    if name == "random-walk":
        return RandomWalk(sigma=float(kwargs.get("sigma", 0.5)))
    raise UnknownProfileError(f"unknown motion profile {name!r}")


@dataclass(frozen=True)
class TrajectoryMeta:
    profile_name: str
    profile_params: dict
    rate: float
    seed: int
    peak_omega: float
    noise: NoiseSpec | None = None
    noise_seed: int | None = None


@dataclass
class Trajectory:
    """Truth time series plus (optionally) the measurements synthesized from it.

    Stored as dense arrays: times (n,), truth_q (n, 4) unit rows, truth_omega
    (n, 3), and measured gyro/accel (n, 3) or None before synthesis.
    """

    times: np.ndarray
    truth_q: np.ndarray
    truth_omega: np.ndarray
    gyro: np.ndarray | None
    accel: np.ndarray | None
    meta: TrajectoryMeta

    def __len__(self) -> int:
        return len(self.times)

    @property
    def dt(self) -> float:
        return 1.0 / self.meta.rate

    def quaternion(self, i: int) -> Quaternion:
        return Quaternion.from_array(self.truth_q[i])

    def sample(self, i: int) -> ImuSample:
        if self.gyro is None:
            raise ValueError("trajectory has no synthesized measurements")
        return ImuSample(float(self.times[i]), self.gyro[i].copy(), self.accel[i].copy())

    def imu_window(self, start: int, length: int) -> list[ImuSample]:
        return [self.sample(i) for i in range(start, start + length)]

    def samples(self) -> Iterator[ImuSample]:
        for i in range(len(self)):
            yield self.sample(i)


def _profile_driver(profile: MotionProfile, rng: np.random.Generator, dt: float):
    """Return (omega0, torque_fn) where torque_fn(i, t, omega) gives the
    constant torque for step i.  Unit inertia; prescribed-rate profiles are
    realized through the torque that steers the rate toward the profile."""
    if isinstance(profile, Static):
        return np.zeros(3), lambda i, t, w: np.zeros(3)
    if isinstance(profile, ConstantRate):
        return profile.omega.copy(), lambda i, t, w: np.zeros(3)
    if isinstance(profile, Sinusoidal):
        two_pi_f = 2.0 * math.pi * profile.freq_hz

        def torque(i, t, w):
            # analytic rate derivative at the step midpoint
            return profile.amplitude * two_pi_f * np.cos(two_pi_f * (t + 0.5 * dt) + _SINUSOID_PHASES)

        return profile.amplitude * np.sin(_SINUSOID_PHASES), torque
    if isinstance(profile, RandomWalk):
        def torque(i, t, w):
            step = profile.sigma * math.sqrt(dt) * rng.standard_normal(3)
            return step / dt

        return np.zeros(3), torque
    raise UnknownProfileError(f"unknown motion profile {profile!r}")


def generate_trajectory(
    profile: MotionProfile,
    duration: float,
    rate: float,
    seed: int,
    initial_q: Quaternion | None = None,
) -> Trajectory:
    """Integrate a ground-truth trajectory; no measurements attached yet."""
    if duration <= 0 or rate <= 0:
        raise ValueError("duration and rate must be positive")
    dt = 1.0 / rate
    n = int(round(duration * rate)) + 1
    rng = np.random.default_rng(seed)
    inertia = InertiaFactor.identity()

    omega0, torque_fn = _profile_driver(profile, rng, dt)
    state = BodyState(initial_q or Quaternion.identity(), omega0)

    times = np.arange(n) * dt
    truth_q = np.empty((n, 4))
    truth_omega = np.empty((n, 3))
    for i in range(n):
        truth_q[i] = state.q.as_array()
        truth_omega[i] = state.omega
        if i + 1 < n:
            tau = torque_fn(i, float(times[i]), state.omega)
            state = rigid_body.rk4_step(state, inertia, tau, dt)

    meta = TrajectoryMeta(
        profile_name=profile.name,
        profile_params=profile.params(),
        rate=rate,
        seed=seed,
        peak_omega=float(np.max(np.linalg.norm(truth_omega, axis=1))),
    )
    return Trajectory(times, truth_q, truth_omega, None, None, meta)


def synthesize_measurements(truth: Trajectory, noise: NoiseSpec, seed: int) -> Trajectory:
    """Attach noisy IMU readings to a truth trajectory.

    Applies the inverse of the sensor correction model: measured = true
    + S*true + bias + white noise, with gravity as the only specific
    force (rotation-only scenario).
    """
    n = len(truth)
    rng = np.random.default_rng(seed)

    true_accel = np.empty((n, 3))
    for i in range(n):
        true_accel[i] = rigid_body.gravity_in_body(truth.quaternion(i), GRAVITY)

    gyro = (
        truth.truth_omega
        + truth.truth_omega @ noise.gyro_scale.T
        + noise.gyro_bias
        + noise.gyro_noise_std * rng.standard_normal((n, 3))
    )
    accel = (
        true_accel
        + true_accel @ noise.accel_scale.T
        + noise.accel_bias
        + noise.accel_noise_std * rng.standard_normal((n, 3))
    )
    meta = dataclasses.replace(truth.meta, noise=noise, noise_seed=seed)
    return Trajectory(truth.times.copy(), truth.truth_q.copy(), truth.truth_omega.copy(), gyro, accel, meta)


# ---------------------------------------------------------------------------
# dataset I/O
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _meta_path(path: str) -> str:
    stem, _ = os.path.splitext(path)
    return stem + ".meta.json"


def write_dataset(traj: Trajectory, path: str) -> None:
    """Write the CSV plus its .meta.json sidecar atomically."""
    has_meas = traj.gyro is not None
    lines = [_HEADER]
    zero3 = np.zeros(3)
    for i in range(len(traj)):
        g = traj.gyro[i] if has_meas else zero3
        a = traj.accel[i] if has_meas else zero3
        row = [traj.times[i], *g, *a, *traj.truth_q[i], *traj.truth_omega[i]]
        lines.append(",".join(_fmt(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")

    meta = {
        "profile": traj.meta.profile_name,
        "profile_params": traj.meta.profile_params,
        "rate": traj.meta.rate,
        "seed": traj.meta.seed,
        "peak_omega": traj.meta.peak_omega,
        "has_measurements": has_meas,
        "noise": traj.meta.noise.to_dict() if traj.meta.noise is not None else None,
        "noise_seed": traj.meta.noise_seed,
    }
    atomic_write_text(_meta_path(path), json.dumps(meta, indent=2) + "\n")


def read_dataset(path: str) -> Trajectory:
    """Read a dataset CSV (and sidecar, if present) back into a Trajectory."""
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    lines = [ln for ln in text.split("\n") if ln]
    if not lines or lines[0] != _HEADER:
        raise ParseError(f"bad header in {path!r}")

    n = len(lines) - 1
    data = np.empty((n, 14))
    for i, ln in enumerate(lines[1:]):
        parts = ln.split(",")
        if len(parts) != 14:
            raise ParseError(f"row {i + 1}: expected 14 fields, got {len(parts)}")
        try:
            data[i] = [float(p) for p in parts]
        except ValueError as e:
            raise ParseError(f"row {i + 1}: {e}") from e
    if n > 1 and not np.all(np.diff(data[:, 0]) > 0):
        raise ParseError("timestamps are not strictly increasing")

    meta_file = _meta_path(path)
    has_meas = True
    if os.path.exists(meta_file):
        with open(meta_file, "r", encoding="utf-8") as f:
            m = json.load(f)
        noise = NoiseSpec.from_dict(m["noise"]) if m.get("noise") else None
        has_meas = bool(m.get("has_measurements", True))
        meta = TrajectoryMeta(
            profile_name=m.get("profile", "unknown"),
            profile_params=m.get("profile_params", {}),
            rate=float(m.get("rate", _infer_rate(data[:, 0]))),
            seed=int(m.get("seed", 0)),
            peak_omega=float(m.get("peak_omega", 0.0)),
            noise=noise,
            noise_seed=m.get("noise_seed"),
        )
    else:
        meta = TrajectoryMeta(
            profile_name="unknown",
            profile_params={},
            rate=_infer_rate(data[:, 0]),
            seed=0,
            peak_omega=float(np.max(np.linalg.norm(data[:, 11:14], axis=1))) if n else 0.0,
        )

    return Trajectory(
        times=data[:, 0].copy(),
        truth_q=data[:, 7:11].copy(),
        truth_omega=data[:, 11:14].copy(),
        gyro=data[:, 1:4].copy() if has_meas else None,
        accel=data[:, 4:7].copy() if has_meas else None,
        meta=meta,
    )


def _infer_rate(times: np.ndarray) -> float:
    if len(times) < 2:
        return 100.0
    return 1.0 / float(np.median(np.diff(times)))
