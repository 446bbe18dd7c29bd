"""Sequence training, synthetic data streams and checkpoints."""

from __future__ import annotations

import logging
import random
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np
import torch

from .encoder import ConfigError, RecurrentState
from .events import EventError, EventVolume, normalize_timestamps, slice_stream
from .loss import LossBreakdown, LossConfig, LossLog, loss_hmc
from .model import EVMGRFlowNet, ModelConfig, volume_input
from .synth import SyntheticScene, generate, translation_scene
from .warp import EventTensors

log = logging.getLogger(__name__)


class NumericalAbort(RuntimeError):
    def __init__(self, message, breakdown: LossBreakdown | None = None):
        super().__init__(message)
        self.breakdown = breakdown


@dataclass(frozen=True)
class DataConfig:
    sensor_size: tuple[int, int] = (64, 64)
    interval: float = 0.05
    max_displacement: float = 3.0  # px per volume, per component
    num_objects: int = 30
    events_per_volume: float = 12.0
    dipole: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "sensor_size", tuple(int(s) for s in self.sensor_size))


@dataclass(frozen=True)
class TrainConfig:
    sequence_length: int = 10
    learning_rate: float = 1e-4
    epochs: int = 100
    batch_size: int = 1
    sequences: int = 500  # size of the synthetic training set
    profile: str = "toy"
    seed: int = 7
    # directory of recorded sequences to train on instead of synthetic scenes
    dataset: str | None = None
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=lambda: ModelConfig.profile("toy"))
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        if self.sequence_length < 1:
            raise ConfigError("sequence length must be at least 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be positive")
        if self.batch_size < 1 or self.epochs < 1 or self.sequences < 1:
            raise ConfigError("batch size, epochs and sequences must be positive")


def toy_profile(**overrides) -> TrainConfig:
    """The fixed desk-scale profile: 64x64, channels (8,16,32,64), L=10, 4 passes over 500 sequences."""
    model_overrides = overrides.pop("model", {})
    base = TrainConfig(epochs=4, sequences=500, seed=7, model=ModelConfig.profile("toy", **model_overrides))
    return replace(base, **overrides)


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


# --- data ------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Sequence:
    volumes: list  # raw EventVolume, consecutive
    scene: SyntheticScene | None = None

    def ground_truth(self, index: int):
        if self.scene is None:
            return None
        v = self.volumes[index]
        return self.scene.ground_truth(v.t_start, v.t_end)


def synthetic_sequence(rng: np.random.Generator, data: DataConfig, length: int, flow=None) -> Sequence:
    """One translating scene sliced into ``length`` volumes."""
    if flow is None:
        flow = rng.uniform(-data.max_displacement, data.max_displacement, size=2)
    spec = translation_scene(
        rng,
        sensor_size=data.sensor_size,
        flow_per_volume=tuple(float(f) for f in flow),
        interval=data.interval,
        num_volumes=length,
        num_objects=data.num_objects,
        events_per_volume=data.events_per_volume,
        dipole=data.dipole,
    )
    scene = generate(spec)
    volumes = slice_stream(scene.events, data.interval)
    # pad with empty volumes if the tail interval has no events
    while len(volumes) < length:
        k = len(volumes)
        volumes.append(
            EventVolume.empty_volume(data.sensor_size, k * data.interval, (k + 1) * data.interval)
        )
    return Sequence(volumes[:length], scene)


def synthetic_stream(seed: int, data: DataConfig, length: int, count: int) -> Iterator[Sequence]:
    rng = np.random.default_rng(seed)
    for _ in range(count):
        yield synthetic_sequence(rng, data, length)


# --- training --------------------------------------------------------------------


def check_consecutive(volumes) -> None:
    for a, b in zip(volumes, volumes[1:]):
        if a.normalized or b.normalized:
            continue
        if b.t_start < a.t_end - 1e-12:
            raise EventError(f"volumes overlap: [{a.t_start}, {a.t_end}) and [{b.t_start}, {b.t_end})")


def sequence_loss(model: EVMGRFlowNet, volumes, loss_cfg: LossConfig, state: RecurrentState | None = None):
    """Run the model over consecutive volumes from ``state`` (zeros by default).

    Returns the mean total loss (a graph-connected tensor), the per-step
    breakdowns and the final state.
    """
    check_consecutive(volumes)
    state = state or RecurrentState.zeros()
    totals, breakdowns = [], []
    for volume in volumes:
        normed = normalize_timestamps(volume)
        pyramid, state = model(volume_input(normed), state)
        events = EventTensors.from_volume(normed, pyramid.full.dtype)
        flows = [lvl[0] for lvl in pyramid.levels] if loss_cfg.all_scales else pyramid.full[0]
        b = loss_hmc(events, flows, loss_cfg)
        totals.append(b.total)
        breakdowns.append(b)
    return torch.stack(totals).mean(), breakdowns, state


def _backward(model, volumes, loss_cfg, scale=1.0):
    mean, breakdowns, _ = sequence_loss(model, volumes, loss_cfg)
    for b in breakdowns:
        if not b.is_finite():
            raise NumericalAbort(f"non-finite loss: {b.as_dict()}", b)
    (mean * scale).backward()
    return breakdowns


def train_sequence(model, optimizer, volumes, loss_cfg: LossConfig) -> list[LossBreakdown]:
    """One optimizer update on the mean loss of a sequence; states start at zero."""
    return train_batch(model, optimizer, [volumes], loss_cfg)[0]


def train_batch(model, optimizer, batch, loss_cfg: LossConfig) -> list[list[LossBreakdown]]:
    """One update on the mean over several sequences, each starting from zero state."""
    model.train()
    optimizer.zero_grad(set_to_none=True)
    out = [_backward(model, volumes, loss_cfg, 1.0 / len(batch)) for volumes in batch]
    optimizer.step()
    return out


def make_optimizer(model, cfg: TrainConfig):
    return torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)


@dataclass
class TrainResult:
    model: EVMGRFlowNet
    optimizer: torch.optim.Optimizer
    losses: list  # mean total per sequence
    step: int


def train(cfg: TrainConfig, sequences=None, log_path=None, checkpoint_path=None, progress=None) -> TrainResult:
    """Train from scratch.  ``sequences`` defaults to a seeded synthetic stream."""
    seed_everything(cfg.seed)
    model = EVMGRFlowNet(cfg.model)
    optimizer = make_optimizer(model, cfg)
    if sequences is None:
        sequences = list(synthetic_stream(cfg.seed * 1000, cfg.data, cfg.sequence_length, cfg.sequences))
    else:
        sequences = list(sequences)
    # one fixed training set, visited in a fresh order every epoch after the first
    order_rng = np.random.default_rng(cfg.seed)
    losses, step = [], 0
    logger = LossLog(log_path) if log_path else None
    try:
        for epoch in range(cfg.epochs):
            order = range(len(sequences)) if epoch == 0 else order_rng.permutation(len(sequences))
            source = (sequences[i] for i in order)
            for group in _batches(source, cfg.batch_size):
                batch = [seq.volumes if isinstance(seq, Sequence) else seq for seq in group]
                results = train_batch(model, optimizer, batch, cfg.loss)
                flat = [b for breakdowns in results for b in breakdowns]
                mean = float(np.mean([b.total.item() for b in flat]))
                losses.append(mean)
                if logger:
                    for b in flat:
                        logger.write(step, b)
                step += 1
                if progress:
                    progress(step, mean)
    finally:
        if logger:
            logger.close()
    if checkpoint_path:
        save_checkpoint(checkpoint_path, model, optimizer, step, cfg)
    return TrainResult(model, optimizer, losses, step)


def _batches(source, size):
    group = []
    for seq in source:
        group.append(seq)
        if len(group) == size:
            yield group
            group = []
    if group:
        yield group


# --- checkpoints -----------------------------------------------------------------


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def save_checkpoint(path, model, optimizer, step: int, cfg: TrainConfig) -> None:
    torch.save(
        {
            "model": model.state_dict(),
            "optimizer": optimizer.state_dict() if optimizer is not None else None,
            "step": step,
            "model_config": asdict(model.cfg),
            "config_hash": model.cfg.digest(),
            "train_config": config_dict(cfg),
        },
        Path(path),
    )


def load_checkpoint(path):
    """Returns ``(model, optimizer_state, step, train_config_dict)``."""
    blob = torch.load(Path(path), map_location="cpu", weights_only=False)
    mcfg = ModelConfig(**blob["model_config"])
    if mcfg.digest() != blob["config_hash"]:
        raise ConfigError(f"{path}: config hash mismatch")
    model = EVMGRFlowNet(mcfg)
    model.load_state_dict(blob["model"])
    return model, blob["optimizer"], blob["step"], blob.get("train_config")

