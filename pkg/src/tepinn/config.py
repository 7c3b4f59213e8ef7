"""Flat key = value config files covering encoder, training, and loss weights.

Syntax: one ``key = value`` pair per line, ``#`` starts a comment, blank
lines ignored.  Values parse as int, float, bool (true/false), or a bare
string.  Unknown keys are rejected so typos fail loudly.

Recognized keys and defaults:

encoder   d_model=32 n_layers=2 n_heads=4 d_ff=64 window_len=32
          dropout_rate=0.0 yaw_correction=true
training  epochs=20 batch_size=16 lr_network=1e-3 lr_physics=1e-4
          lr_decay=none seed=0 grad_clip=1.0 log_every=50
          physics_warmup_frac=0.0
losses    lambda_acc=0.1 lambda_gyro=0.1 lambda_dynamics=0.01
          lambda_wd=1e-4
"""

from __future__ import annotations

from dataclasses import fields

from .losses import LossWeights
from .model import EncoderConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Config file is malformed or contains unknown keys."""


_ENCODER_KEYS = {f.name for f in fields(EncoderConfig)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
_LOSS_KEY_MAP = {
    "lambda_acc": "acc",
    "lambda_gyro": "gyro",
    "lambda_dynamics": "dynamics",
    "lambda_wd": "weight_decay",
}


def _parse_value(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_config_text(text: str) -> dict:
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value in {raw!r}")
        out[key] = _parse_value(value)
    return out


def load_config(path: str | None) -> tuple[EncoderConfig, TrainConfig, LossWeights]:
    """Read a config file (or use all defaults when path is None)."""
    raw: dict = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            raw = parse_config_text(f.read())

    enc_kwargs, train_kwargs, loss_kwargs = {}, {}, {}
    for key, value in raw.items():
        if key in _ENCODER_KEYS:
            enc_kwargs[key] = value
        elif key in _TRAIN_KEYS:
            train_kwargs[key] = value
        elif key in _LOSS_KEY_MAP:
            loss_kwargs[_LOSS_KEY_MAP[key]] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        return (
            EncoderConfig(**enc_kwargs),
            TrainConfig(**train_kwargs),
            LossWeights(**loss_kwargs),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
