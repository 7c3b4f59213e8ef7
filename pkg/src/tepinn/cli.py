"""Command-line surface: simulate, train, eval, sweep, ablate.

Every command is deterministic given its seed flags; all CSV and SVG
outputs are written atomically.  Exit codes: 0 on success, 1 on runtime
failure, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import glob
import math
import os
import sys

import numpy as np

from . import evaluate as ev
from . import simulate as sim
from . import training as tr
from .config import ConfigError, load_config
from .svgplot import line_plot
from .util import atomic_write_text

ESTIMATORS = ("tepinn", "tepinn-nophys", "ekf")


class UsageError(ValueError):
    """Invalid flag combination; maps to exit code 2."""


def _parse_vec3(text: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != 3:
        raise UsageError(f"expected three comma-separated numbers, got {text!r}")
    return np.array([float(p) for p in parts])


def _noise_from_args(args) -> sim.NoiseSpec:
    if args.noise_preset:
        return sim.noise_preset(args.noise_preset, sample_rate=args.rate)
    return sim.NoiseSpec(
        gyro_noise_std=args.gyro_noise_std,
        accel_noise_std=args.accel_noise_std,
        gyro_bias=_parse_vec3(args.gyro_bias),
        accel_bias=_parse_vec3(args.accel_bias),
        sample_rate=args.rate,
    )


def _profile_from_args(args) -> sim.MotionProfile:
    return sim.parse_profile(
        args.profile,
        omega=_parse_vec3(args.omega),
        amplitude=args.amplitude,
        freq_hz=args.freq_hz,
        sigma=args.walk_sigma,
    )


def _simulate_trajectory(profile, duration, rate, noise, seed) -> sim.Trajectory:
    truth = sim.generate_trajectory(profile, duration, rate, seed)
    # noise stream gets its own derived seed so truth and noise decouple
    return sim.synthesize_measurements(truth, noise, seed + 1)


def cmd_simulate(args) -> int:
    traj = _simulate_trajectory(
        _profile_from_args(args), args.duration, args.rate, _noise_from_args(args), args.seed
    )
    sim.write_dataset(traj, args.out)
    print(f"wrote {len(traj)} samples to {args.out}")
    return 0


def _load_datasets(pattern: str) -> list[sim.Trajectory]:
    paths = sorted(glob.glob(pattern))
    if not paths:
        raise UsageError(f"no dataset files match {pattern!r}")
    return [sim.read_dataset(p) for p in paths]


def _write_metrics_csvs(out_stem: str, result: tr.TrainResult) -> None:
    epoch_lines = ["epoch,total,data,acc,gyro,dynamics,wd,wall_seconds"]
    for st in result.epochs:
        b = st.breakdown
        epoch_lines.append(
            f"{st.epoch},{b.total:.12g},{b.data:.12g},{b.acc:.12g},{b.gyro:.12g},"
            f"{b.dynamics:.12g},{b.weight_decay:.12g},{st.wall_seconds:.3f}"
        )
    atomic_write_text(out_stem + ".epochs.csv", "\n".join(epoch_lines) + "\n")

    step_lines = ["step,data,acc,gyro,dynamics,wd,total"]
    for step, b in result.steps:
        step_lines.append(f"{step},{b.csv_row()}")
    atomic_write_text(out_stem + ".steps.csv", "\n".join(step_lines) + "\n")


def cmd_train(args) -> int:
    encoder_cfg, train_cfg, weights = load_config(args.config)
    trajectories = _load_datasets(args.data)

    if args.resume:
        loaded = tr.load_checkpoint(args.resume)
        model, encoder_cfg = loaded.model, loaded.config
        if loaded.train_config is not None:
            train_cfg = dataclasses.replace(loaded.train_config, epochs=train_cfg.epochs)
        start_epoch, optimizer = loaded.epoch, loaded.optimizer
    else:
        model = tr.ModelParams.init(encoder_cfg, train_cfg.seed)
        start_epoch, optimizer = 0, None

    def progress(st: tr.EpochStats):
        print(
            f"epoch {st.epoch}: total={st.breakdown.total:.6f} data={st.breakdown.data:.6f} "
            f"({st.wall_seconds:.1f}s)"
        )

    result = tr.train(
        trajectories, model, train_cfg, weights, encoder_cfg,
        start_epoch=start_epoch, optimizer=optimizer, on_epoch=progress,
    )
    tr.save_checkpoint(
        args.out, result.model, encoder_cfg, train_cfg,
        epoch=train_cfg.epochs, step=result.final_step, optimizer=result.optimizer,
    )
    _write_metrics_csvs(os.path.splitext(args.out)[0], result)
    print(f"saved checkpoint to {args.out}")
    return 0


def _run_estimator(name: str, traj: sim.Trajectory, checkpoint: str | None) -> ev.EstimateSeries:
    if name == "ekf":
        return ev.run_ekf(traj)
    if checkpoint is None:
        raise UsageError(f"estimator {name!r} requires --checkpoint")
    loaded = tr.load_checkpoint(checkpoint)
    return ev.run_transformer(traj, loaded.model, loaded.config)


def cmd_eval(args) -> int:
    traj = sim.read_dataset(args.data)
    if traj.gyro is None:
        raise UsageError(f"dataset {args.data!r} has truth only, no measurements")
    series = _run_estimator(args.estimator, traj, args.checkpoint)
    metrics = ev.compute_metrics(traj, series)

    ev.write_report(args.report, [(args.estimator, metrics)])
    ev.write_trace(os.path.splitext(args.report)[0] + "_trace.csv", metrics)
    if args.plots:
        os.makedirs(args.plots, exist_ok=True)
        ev.plot_quaternion_components(
            os.path.join(args.plots, "quaternion_components.svg"), traj, series
        )
        ev.plot_euler_angles(os.path.join(args.plots, "euler_angles.svg"), traj, series)
    print(ev.REPORT_HEADER)
    print(metrics.csv_row(args.estimator))
    return 0


def _parse_levels(axis: str, levels: list[str]) -> list[float]:
    out = []
    for lv in levels:
        if axis == "noise" and lv in ("low", "mid", "high"):
            out.append(sim._PRESETS[lv][0])
        else:
            try:
                out.append(float(lv))
            except ValueError:
                raise UsageError(f"bad level {lv!r} for axis {axis!r}")
    return out


def _sweep_cell_trajectory(axis: str, level: float, seed: int, duration: float, rate: float):
    if axis == "noise":
        noise = sim.NoiseSpec(
            gyro_noise_std=level,
            accel_noise_std=10.0 * level,
            gyro_bias=2.0 * level * sim._BIAS_PATTERN,
            accel_bias=20.0 * level * sim._BIAS_PATTERN,
            sample_rate=rate,
        )
        profile = sim.Sinusoidal(amplitude=1.0, freq_hz=0.5)
    else:  # angular-velocity
        noise = sim.noise_preset("mid", sample_rate=rate)
        profile = sim.Sinusoidal(amplitude=level, freq_hz=0.5)
    return _simulate_trajectory(profile, duration, rate, noise, seed)


def cmd_sweep(args) -> int:
    levels = _parse_levels(args.axis, args.levels.split(","))
    estimators = args.estimators.split(",")
    for e in estimators:
        if e not in ESTIMATORS:
            raise UsageError(f"unknown estimator {e!r}")
    seeds = [int(s) for s in args.seeds.split(",")]

    os.makedirs(args.out, exist_ok=True)
    rows = []
    per_curve: dict[str, dict[float, list[float]]] = {e: {} for e in estimators}
    for level in levels:
        for seed in seeds:
            traj = _sweep_cell_trajectory(args.axis, level, seed, args.duration, args.rate)
            for est in estimators:
                series = _run_estimator(est, traj, args.checkpoint)
                metrics = ev.compute_metrics(traj, series)
                rows.append(
                    f"{level:.12g},{est},{seed},{metrics.mean_geodesic_rad:.12g},"
                    f"{metrics.dynamic_error_rad:.12g}"
                )
                per_curve[est].setdefault(level, []).append(metrics.mean_geodesic_rad)

    csv_path = os.path.join(args.out, "sweep.csv")
    atomic_write_text(
        csv_path,
        "\n".join(["axis_value,estimator,seed,mean_error,dynamic_error"] + rows) + "\n",
    )

    series = []
    for est in estimators:
        xs = sorted(per_curve[est])
        ys = [float(np.median(per_curve[est][x])) for x in xs]
        series.append((est, xs, ys))
    line_plot(
        os.path.join(args.out, f"sweep_{args.axis}.svg"),
        series,
        title=f"Median attitude error vs {args.axis}",
        xlabel={"noise": "gyro noise std [rad/s]", "angular-velocity": "peak rate [rad/s]"}[args.axis],
        ylabel="mean geodesic error [rad]",
    )
    print(f"wrote {csv_path} ({len(rows)} rows)")
    return 0


_ABLATION_ARMS = ("full", "no-physics", "no-correction")


def cmd_ablate(args) -> int:
    encoder_cfg, train_cfg, weights = load_config(args.config)
    trajectories = _load_datasets(args.data)
    os.makedirs(args.out, exist_ok=True)

    lines = ["arm,final_total_loss,mean_geodesic_rad,dynamic_error_rad"]
    results = {}
    for arm in _ABLATION_ARMS:
        arm_cfg = encoder_cfg
        arm_weights = weights
        if arm == "no-physics":
            arm_weights = dataclasses.replace(weights, acc=0.0, gyro=0.0, dynamics=0.0)
        elif arm == "no-correction":
            arm_cfg = dataclasses.replace(encoder_cfg, yaw_correction=False)

        model = tr.ModelParams.init(arm_cfg, train_cfg.seed)
        result = tr.train(trajectories, model, train_cfg, arm_weights, arm_cfg)

        per_traj = [
            ev.compute_metrics(t, ev.run_transformer(t, result.model, arm_cfg))
            for t in trajectories
        ]
        mean_geo = float(np.mean([m.mean_geodesic_rad for m in per_traj]))
        dyn = float(np.mean([m.dynamic_error_rad for m in per_traj]))
        final_total = result.epochs[-1].breakdown.total
        results[arm] = mean_geo
        lines.append(f"{arm},{final_total:.12g},{mean_geo:.12g},{dyn:.12g}")
        print(f"{arm}: mean geodesic error {mean_geo:.6f} rad")

    csv_path = os.path.join(args.out, "ablation.csv")
    atomic_write_text(csv_path, "\n".join(lines) + "\n")
    ordering = "held" if results["full"] <= results["no-physics"] else "not held"
    print(f"expected ordering (full <= no-physics): {ordering}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tepinn", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("simulate", help="generate a synthetic IMU dataset")
    ps.add_argument("--profile", required=True,
                    choices=["static", "constant-rate", "sinusoidal", "random-walk"])
    ps.add_argument("--duration", type=float, default=60.0, help="seconds")
    ps.add_argument("--rate", type=float, default=100.0, help="Hz")
    ps.add_argument("--noise-preset", choices=["low", "mid", "high"], default=None)
    ps.add_argument("--gyro-noise-std", type=float, default=0.0)
    ps.add_argument("--accel-noise-std", type=float, default=0.0)
    ps.add_argument("--gyro-bias", default="0,0,0")
    ps.add_argument("--accel-bias", default="0,0,0")
    ps.add_argument("--omega", default=f"0,0,{math.pi / 2}", help="constant-rate omega, rad/s")
    ps.add_argument("--amplitude", type=float, default=1.0, help="sinusoidal amplitude, rad/s")
    ps.add_argument("--freq-hz", type=float, default=0.5)
    ps.add_argument("--walk-sigma", type=float, default=0.5)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--out", required=True)
    ps.set_defaults(func=cmd_simulate)

    pt = sub.add_parser("train", help="train the estimator on dataset files")
    pt.add_argument("--data", required=True, help="glob of dataset CSVs")
    pt.add_argument("--config", default=None, help="key = value config file")
    pt.add_argument("--out", required=True, help="checkpoint path")
    pt.add_argument("--resume", default=None, help="checkpoint to continue from")
    pt.set_defaults(func=cmd_train)

    pe = sub.add_parser("eval", help="evaluate an estimator on a dataset")
    pe.add_argument("--data", required=True)
    pe.add_argument("--checkpoint", default=None)
    pe.add_argument("--estimator", choices=list(ESTIMATORS), default="tepinn")
    pe.add_argument("--report", required=True, help="metrics CSV path")
    pe.add_argument("--plots", default=None, help="directory for SVG plots")
    pe.set_defaults(func=cmd_eval)

    pw = sub.add_parser("sweep", help="factorial noise/dynamics sweep")
    pw.add_argument("--axis", choices=["noise", "angular-velocity"], required=True)
    pw.add_argument("--levels", required=True, help="comma list (numbers or low/mid/high)")
    pw.add_argument("--estimators", default="ekf")
    pw.add_argument("--seeds", default="0")
    pw.add_argument("--checkpoint", default=None)
    pw.add_argument("--duration", type=float, default=10.0)
    pw.add_argument("--rate", type=float, default=100.0)
    pw.add_argument("--out", required=True, help="output directory")
    pw.set_defaults(func=cmd_sweep)

    pa = sub.add_parser("ablate", help="train full / no-physics / no-correction arms")
    pa.add_argument("--data", required=True)
    pa.add_argument("--config", default=None)
    pa.add_argument("--out", default="ablation", help="output directory")
    pa.set_defaults(func=cmd_ablate)

    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, KeyError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
