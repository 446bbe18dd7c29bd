"""The full recurrent flow network."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .decoder import FGDecoder, forward_warp_flow
from .encoder import FULL_CHANNELS, TOY_CHANNELS, ConfigError, EncoderConfig, FEREncoder, RecurrentState
from .events import EventVolume, count_image


@dataclass(frozen=True)
class ModelConfig:
    channels: tuple[int, int, int, int] = FULL_CHANNELS
    kernel_size: int = 3
    use_st_convgru: bool = True
    use_prior_flow: bool = True
    share_branches: bool = False
    share_refinement: bool = False
    max_flow_ratio: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))

    @classmethod
    def profile(cls, name: str, **overrides) -> "ModelConfig":
        try:
            channels = {"toy": TOY_CHANNELS, "full": FULL_CHANNELS}[name]
        except KeyError:
            raise ConfigError(f"unknown channel profile {name!r}") from None
        return cls(channels=channels, **overrides)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


class EVMGRFlowNet(nn.Module):
    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        self.encoder = FEREncoder(
            EncoderConfig(
                channels=cfg.channels,
                kernel_size=cfg.kernel_size,
                use_st_convgru=cfg.use_st_convgru,
                share_branches=cfg.share_branches,
            )
        )
        self.decoder = FGDecoder(
            cfg.channels,
            cfg.kernel_size,
            max_flow_ratio=cfg.max_flow_ratio,
            use_prior_flow=cfg.use_prior_flow,
            share_refinement=cfg.share_refinement,
        )

    def forward(self, count_image: torch.Tensor, state: RecurrentState | None = None):
        """One timestep.  Returns the flow pyramid and the state for the next step.

        The prior flow handed to the next step is forward-warped from a detached
        copy of the full-resolution flow.
        """
        state = state or RecurrentState.zeros()
        enc = self.encoder(count_image, state.hidden)
        prior = state.prior_flow if self.cfg.use_prior_flow else None
        pyramid = self.decoder(enc.residual, enc.features, prior)
        next_prior = forward_warp_flow(pyramid.full.detach()) if self.cfg.use_prior_flow else None
        return pyramid, RecurrentState(enc.state, next_prior)


def volume_input(volume: EventVolume, device=None) -> torch.Tensor:
    """Count image of a volume as a ``1 x 2 x H x W`` tensor."""
    img = count_image(volume).as_array()
    return torch.from_numpy(np.ascontiguousarray(img)).unsqueeze(0).to(device)


@torch.no_grad()
def predict_sequence(model: EVMGRFlowNet, volumes, state: RecurrentState | None = None):
    """Stateful inference over consecutive volumes; yields full-resolution flows (2 x H x W numpy)."""
    model.eval()
    state = state or RecurrentState.zeros()
    for volume in volumes:
        pyramid, state = model(volume_input(volume), state)
        yield pyramid.full[0].numpy()
