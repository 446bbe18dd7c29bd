"""Flat ``key = value`` configuration files.

Keys are namespaced by section (``train.lr``, ``loss.alpha``,
``model.base_channels``, ``data.interval``); ``#`` starts a comment.
Example::

    train.profile = toy
    train.lr = 1e-4
    loss.lambda2 = 0.001
    model.use_st_convgru = true
"""

from __future__ import annotations

import os
from dataclasses import replace
from pathlib import Path

from .encoder import ConfigError
from .model import ModelConfig
from .train import TrainConfig, toy_profile

SEED_ENV = "EVFLOW_SEED"


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple:
    return tuple(int(p) for p in s.replace("x", ",").split(",") if p.strip())


# key -> (section, field, parser)
KEYS = {
    "train.profile": ("train", "profile", str),
    "train.sequence_length": ("train", "sequence_length", int),
    "train.lr": ("train", "learning_rate", float),
    "train.learning_rate": ("train", "learning_rate", float),
    "train.epochs": ("train", "epochs", int),
    "train.batch_size": ("train", "batch_size", int),
    "train.sequences": ("train", "sequences", int),
    "train.seed": ("train", "seed", int),
    "train.dataset": ("train", "dataset", str),
    "loss.alpha": ("loss", "alpha", float),
    "loss.lambda1": ("loss", "lambda1", float),
    "loss.lambda2": ("loss", "lambda2", float),
    "loss.charbonnier_gamma": ("loss", "charbonnier_gamma", float),
    "loss.charbonnier_eps": ("loss", "charbonnier_eps", float),
    "loss.stamps": ("loss", "stamps", str),
    "loss.all_scales": ("loss", "all_scales", _bool),
    "model.base_channels": ("model", "base_channels", int),
    "model.channels": ("model", "channels", _ints),
    "model.kernel_size": ("model", "kernel_size", int),
    "model.use_st_convgru": ("model", "use_st_convgru", _bool),
    "model.use_prior_flow": ("model", "use_prior_flow", _bool),
    "model.share_branches": ("model", "share_branches", _bool),
    "model.share_refinement": ("model", "share_refinement", _bool),
    "model.max_flow_ratio": ("model", "max_flow_ratio", float),
    "data.sensor_size": ("data", "sensor_size", _ints),
    "data.interval": ("data", "interval", float),
    "data.max_displacement": ("data", "max_displacement", float),
    "data.num_objects": ("data", "num_objects", int),
    "data.events_per_volume": ("data", "events_per_volume", float),
    "data.dipole": ("data", "dipole", float),
}


def parse(text: str, source: str = "<config>") -> dict:
    """Raw ``{key: typed value}``; unknown keys and bad values raise ConfigError."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = (s.strip() for s in body.partition("="))
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = KEYS[key][2](value)
        except ValueError as e:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {e}") from None
    return values


def build(values: dict, env=None) -> TrainConfig:
    """Assemble a TrainConfig from parsed values; EVFLOW_SEED overrides the seed."""
    sections = {"train": {}, "loss": {}, "model": {}, "data": {}}
    for key, value in values.items():
        section, name, _ = KEYS[key]
        sections[section][name] = value
    train_kw = sections["train"]
    model_kw = sections["model"]
    profile = train_kw.get("profile", "toy")
    if "base_channels" in model_kw:
        c = model_kw.pop("base_channels")
        model_kw.setdefault("channels", (c, 2 * c, 4 * c, 8 * c))
    if "channels" in model_kw and len(model_kw["channels"]) != 4:
        raise ConfigError("model.channels needs four widths")
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            train_kw["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    try:
        if profile == "toy":
            base = toy_profile()
        elif profile == "full":
            base = TrainConfig(profile="full", model=ModelConfig.profile("full"))
        else:
            raise ConfigError(f"unknown profile {profile!r}")
        model = replace(base.model, **model_kw)
        loss = replace(base.loss, **sections["loss"])
        data = replace(base.data, **sections["data"])
        return replace(base, model=model, loss=loss, data=data, **train_kw)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from None


def load(path, env=None) -> TrainConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return build(parse(text, str(path)), env)


def dump(cfg: TrainConfig) -> str:
    """Config text that loads back to ``cfg``."""
    lines = [f"train.profile = {cfg.profile}"]
    seen = set()
    for key, (section, name, _) in KEYS.items():
        if key in ("train.profile", "model.base_channels") or (section, name) in seen:
            continue
        seen.add((section, name))
        obj = cfg if section == "train" else getattr(cfg, section)
        if not hasattr(obj, name):
            continue
        value = getattr(obj, name)
        if value is None:
            continue
        if isinstance(value, bool):
            value = str(value).lower()
        elif isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
