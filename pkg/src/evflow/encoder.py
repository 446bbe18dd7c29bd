"""Recurrent encoder: four stride-2 ConvGRU stages with top-down memory routing.

Stage 1 uses :class:`STConvGRU`; its routed memory is the previous timestep's
stage-4 state, bilinearly upsampled to stage-1 resolution and projected to
stage-1 channels.  Stages 2-4 are plain ConvGRUs.  Two residual blocks follow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .cells import ConvGRU, ShapeError, STConvGRU


class ConfigError(ValueError):
    pass


TOY_CHANNELS = (8, 16, 32, 64)
FULL_CHANNELS = (32, 64, 128, 256)


@dataclass(frozen=True)
class EncoderConfig:
    channels: tuple[int, int, int, int] = FULL_CHANNELS
    in_channels: int = 2
    kernel_size: int = 3
    use_st_convgru: bool = True
    share_branches: bool = False

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) != 4:
            raise ConfigError("encoder needs exactly four stages")
        if any(c <= 0 for c in self.channels):
            raise ConfigError("channel counts must be positive")


@dataclass
class RecurrentState:
    """Hidden states ``S1..S4`` of the encoder and the decoder's prior flow.

    ``None`` entries mean zero-initialized (start of a sequence).
    """

    hidden: list = field(default_factory=lambda: [None] * 4)
    prior_flow: torch.Tensor | None = None

    @classmethod
    def zeros(cls) -> "RecurrentState":
        return cls()

    def detach(self) -> "RecurrentState":
        return RecurrentState(
            [None if h is None else h.detach() for h in self.hidden],
            None if self.prior_flow is None else self.prior_flow.detach(),
        )


class DownConv(nn.Sequential):
    def __init__(self, cin, cout, kernel_size=3):
        super().__init__(nn.Conv2d(cin, cout, kernel_size, stride=2, padding=kernel_size // 2), nn.ReLU())


class UpConv(nn.Module):
    """Bilinear upsampling to a target size, then convolution and ReLU."""

    def __init__(self, cin, cout, kernel_size=3):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, kernel_size, padding=kernel_size // 2)

    def forward(self, x, size):
        x = F.interpolate(x, size=size, mode="bilinear", align_corners=False)
        return F.relu(self.conv(x))


class ResidualBlock(nn.Module):
    def __init__(self, channels, kernel_size=3):
        super().__init__()
        pad = kernel_size // 2
        self.conv1 = nn.Conv2d(channels, channels, kernel_size, padding=pad)
        self.conv2 = nn.Conv2d(channels, channels, kernel_size, padding=pad)

    def forward(self, x):
        y = self.conv2(F.relu(self.conv1(x)))
        return F.relu(x + y)


@dataclass
class EncoderOutput:
    features: list  # F1..F4
    residual: torch.Tensor
    state: list  # S1..S4


class FEREncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig = EncoderConfig()):
        super().__init__()
        self.cfg = cfg
        c1, c2, c3, c4 = cfg.channels
        k = cfg.kernel_size
        self.down = nn.ModuleList(
            [DownConv(cfg.in_channels, c1, k), DownConv(c1, c2, k), DownConv(c2, c3, k), DownConv(c3, c4, k)]
        )
        if cfg.use_st_convgru:
            first = STConvGRU(c1, c1, k, share_branches=cfg.share_branches)
            self.memory_up = UpConv(c4, c1, k)
        else:
            first = ConvGRU(c1, c1, k)
            self.memory_up = None
        self.cells = nn.ModuleList([first, ConvGRU(c2, c2, k), ConvGRU(c3, c3, k), ConvGRU(c4, c4, k)])
        self.res1 = ResidualBlock(c4, k)
        self.res2 = ResidualBlock(c4, k)

    def state_shapes(self, height, width):
        return [(c, height >> (l + 1), width >> (l + 1)) for l, c in enumerate(self.cfg.channels)]

    def _check(self, x, hidden):
        height, width = x.shape[-2:]
        if height % 16 or width % 16:
            raise ConfigError(f"input size {height}x{width} is not divisible by 16")
        if x.shape[-3] != self.cfg.in_channels:
            raise ShapeError(f"input has {x.shape[-3]} channels, expected {self.cfg.in_channels}")
        for l, (h, shape) in enumerate(zip(hidden, self.state_shapes(height, width))):
            if h is not None and tuple(h.shape[-3:]) != shape:
                raise ShapeError(f"state S{l + 1} has shape {tuple(h.shape[-3:])}, expected {shape}")

    def forward(self, count_image: torch.Tensor, hidden=None) -> EncoderOutput:
        hidden = list(hidden) if hidden is not None else [None] * 4
        self._check(count_image, hidden)
        features, new_state = [], []
        x = count_image
        for l in range(4):
            inp = self.down[l](x)
            if l == 0 and self.memory_up is not None:
                s4_prev = hidden[3]
                if s4_prev is None:
                    memory = inp.new_zeros(*inp.shape[:-3], self.cfg.channels[0], *inp.shape[-2:])
                else:
                    memory = self.memory_up(s4_prev, inp.shape[-2:])
                f, s = self.cells[0](inp, hidden[0], memory)
            else:
                s = self.cells[l](inp, hidden[l])
                f = s
            features.append(f)
            new_state.append(s)
            x = f
        residual = self.res2(self.res1(features[3]))
        return EncoderOutput(features, residual, new_state)
