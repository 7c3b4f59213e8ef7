"""Estimator evaluation: error metrics, report CSVs, comparison plots.

Both estimators emit the same schema so the baseline and the learned
model can sit in one table.  Yaw handling follows the estimator: when
the attitude-correction stage is active the ground truth is yaw-zeroed
before comparison (heading is deliberately discarded); the EKF and a
correction-disabled model are scored against the raw truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ekf as ekf_mod
from . import model as tm
from . import quat
from .model import EncoderConfig
from .quat import Quaternion
from .simulate import Trajectory
from .svgplot import line_plot
from .training import ModelParams
from .util import atomic_write_text

REPORT_HEADER = (
    "estimator,samples,mean_geodesic_rad,dynamic_error_rad,"
    "rmse_roll_rad,rmse_pitch_rad,rmse_yaw_rad"
)


@dataclass
class EstimateSeries:
    """Per-sample attitude estimates over a trajectory slice."""

    indices: np.ndarray  # sample indices the estimates refer to
    q_est: np.ndarray  # (m, 4)
    yaw_zero_truth: bool  # compare against yaw-zeroed ground truth


@dataclass
class EvalMetrics:
    samples: int
    mean_geodesic_rad: float
    dynamic_error_rad: float
    rmse_roll_rad: float
    rmse_pitch_rad: float
    rmse_yaw_rad: float
    geodesic_trace: np.ndarray
    times: np.ndarray

    def csv_row(self, estimator: str) -> str:
        vals = (
            self.mean_geodesic_rad,
            self.dynamic_error_rad,
            self.rmse_roll_rad,
            self.rmse_pitch_rad,
            self.rmse_yaw_rad,
        )
        return f"{estimator},{self.samples}," + ",".join(format(v, ".12g") for v in vals)


def run_transformer(
    traj: Trajectory, params: ModelParams, config: EncoderConfig, chunk: int = 64
) -> EstimateSeries:
    """Slide the window over the trajectory, one estimate per end sample.

    Windows are forwarded in chunks through the batched encoder path.
    """
    n = len(traj)
    w = config.window_len
    if n < w:
        raise ValueError(f"trajectory of {n} samples shorter than window {w}")
    ends = np.arange(w - 1, n)
    q_est = np.empty((len(ends), 4))
    for c0 in range(0, len(ends), chunk):
        group = ends[c0 : c0 + chunk]
        xs = [
            np.concatenate([traj.gyro[e - w + 1 : e + 1], traj.accel[e - w + 1 : e + 1]], axis=1)
            for e in group
        ]
        ts = [traj.times[e - w + 1 : e + 1] for e in group]
        raw = tm.windows_forward(xs, ts, params.encoder, config)
        for j, row in enumerate(raw.value):
            q = quat.normalize(Quaternion.from_array(row))
            if config.yaw_correction:
                q = tm.attitude_correct(q)
            q_est[c0 + j] = q.as_array()
    return EstimateSeries(ends, q_est, yaw_zero_truth=config.yaw_correction)


def run_ekf(traj: Trajectory, tuning: ekf_mod.EkfTuning | None = None) -> EstimateSeries:
    result = ekf_mod.run(traj, tuning)
    return EstimateSeries(np.arange(len(traj)), result.q, yaw_zero_truth=False)


def _wrap_angle(a: np.ndarray) -> np.ndarray:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def compute_metrics(traj: Trajectory, series: EstimateSeries) -> EvalMetrics:
    idx = series.indices
    truth = traj.truth_q[idx]
    if series.yaw_zero_truth:
        truth = np.array(
            [tm.attitude_correct(Quaternion.from_array(row)).as_array() for row in truth]
        )

    # stable double-cover angle; exact at zero error (see quat.geodesic_error)
    d_minus = np.linalg.norm(series.q_est - truth, axis=1)
    d_plus = np.linalg.norm(series.q_est + truth, axis=1)
    geo = 4.0 * np.arctan2(np.minimum(d_minus, d_plus), np.maximum(d_minus, d_plus))

    est_euler = np.array([quat.to_euler(Quaternion.from_array(row)) for row in series.q_est])
    true_euler = np.array([quat.to_euler(Quaternion.from_array(row)) for row in traj.truth_q[idx]])
    if series.yaw_zero_truth:
        true_euler[:, 2] = 0.0
    err = _wrap_angle(est_euler - true_euler)
    rmse = np.sqrt(np.mean(err * err, axis=0))

    speeds = np.linalg.norm(traj.truth_omega[idx], axis=1)
    threshold = np.percentile(speeds, 75.0)
    fast = speeds > threshold
    dynamic = float(np.mean(geo[fast])) if np.any(fast) else float(np.mean(geo))

    return EvalMetrics(
        samples=len(idx),
        mean_geodesic_rad=float(np.mean(geo)),
        dynamic_error_rad=dynamic,
        rmse_roll_rad=float(rmse[0]),
        rmse_pitch_rad=float(rmse[1]),
        rmse_yaw_rad=float(rmse[2]),
        geodesic_trace=geo,
        times=traj.times[idx],
    )


def write_report(path: str, rows: list[tuple[str, EvalMetrics]]) -> None:
    lines = [REPORT_HEADER] + [m.csv_row(name) for name, m in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_trace(path: str, metrics: EvalMetrics) -> None:
    lines = ["t,geodesic_rad"] + [
        f"{format(t, '.12g')},{format(g, '.12g')}"
        for t, g in zip(metrics.times, metrics.geodesic_trace)
    ]
    atomic_write_text(path, "\n".join(lines) + "\n")


def plot_quaternion_components(path: str, traj: Trajectory, series: EstimateSeries) -> None:
    idx = series.indices
    truth = traj.truth_q[idx]
    if series.yaw_zero_truth:
        truth = np.array(
            [tm.attitude_correct(Quaternion.from_array(row)).as_array() for row in truth]
        )
    # keep plotted truth on the estimate's hemisphere so curves overlay
    flips = np.where(np.sum(truth * series.q_est, axis=1) < 0, -1.0, 1.0)
    truth = truth * flips[:, None]
    t = traj.times[idx]
    names = ("qw", "qx", "qy", "qz")
    plot_series = []
    for k, name in enumerate(names):
        plot_series.append((f"{name} truth", t, truth[:, k]))
        plot_series.append((f"{name} est", t, series.q_est[:, k]))
    line_plot(
        path,
        plot_series,
        title="Quaternion components over time",
        xlabel="time [s]",
        ylabel="component value",
    )


def plot_euler_angles(path: str, traj: Trajectory, series: EstimateSeries) -> None:
    idx = series.indices
    t = traj.times[idx]
    est = np.array([quat.to_euler(Quaternion.from_array(row)) for row in series.q_est])
    true = np.array([quat.to_euler(Quaternion.from_array(row)) for row in traj.truth_q[idx]])
    if series.yaw_zero_truth:
        true[:, 2] = 0.0
    names = ("roll", "pitch", "yaw")
    plot_series = []
    for k, name in enumerate(names):
        plot_series.append((f"{name} truth", t, true[:, k]))
        plot_series.append((f"{name} est", t, est[:, k]))
    line_plot(
        path,
        plot_series,
        title="Euler angles over time",
        xlabel="time [s]",
        ylabel="angle [rad]",
    )
