"""Differentiable event warping and images of warped events (IWEs)."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .events import EventError, EventVolume

EPS = 1e-9
KINDS = ("avg_timestamp", "exp_count", "plain_count")
STAMPS = ("raw", "relative")


@dataclass(frozen=True, eq=False)
class EventTensors:
    """Per-event tensors of a normalized volume."""

    x: torch.Tensor  # position, float
    y: torch.Tensor
    t: torch.Tensor
    p: torch.Tensor  # +1 / -1, long
    sensor_size: tuple[int, int]
    px: torch.Tensor  # nearest pixel, long
    py: torch.Tensor

    @classmethod
    def from_volume(cls, volume: EventVolume, dtype=torch.float32) -> "EventTensors":
        if not volume.normalized:
            raise EventError("warping needs a volume with normalized timestamps")
        return cls(
            torch.from_numpy(volume.x.astype(np.float64)).to(dtype),
            torch.from_numpy(volume.y.astype(np.float64)).to(dtype),
            torch.from_numpy(volume.t).to(dtype),
            torch.from_numpy(volume.p.astype(np.int64)),
            volume.sensor_size,
            torch.from_numpy(volume.px),
            torch.from_numpy(volume.py),
        )

    def __len__(self):
        return int(self.t.numel())

    def flip_polarity(self) -> "EventTensors":
        return EventTensors(self.x, self.y, self.t, -self.p, self.sensor_size, self.px, self.py)


def _tensors(events, dtype=None) -> EventTensors:
    if isinstance(events, EventTensors):
        return events
    return EventTensors.from_volume(events, dtype or torch.get_default_dtype())


@dataclass(frozen=True, eq=False)
class WarpedEvents:
    xy: torch.Tensor  # N x 2 continuous positions (x', y')
    t: torch.Tensor
    p: torch.Tensor
    t_ref: float
    sensor_size: tuple[int, int]


def warp_events(events, flow: torch.Tensor, t_ref: float) -> WarpedEvents:
    """Move each event to ``t_ref`` along the flow at its (nearest) pixel.

    ``flow`` is ``2 x H x W`` in pixels per volume; timestamps are normalized.
    """
    ev = _tensors(events, flow.dtype)
    if t_ref not in (0, 1):
        raise ValueError("reference time must be 0 or 1")
    u = flow[0, ev.py, ev.px]
    v = flow[1, ev.py, ev.px]
    dt = t_ref - ev.t.to(flow.dtype)
    xy = torch.stack([ev.x.to(flow.dtype) + dt * u, ev.y.to(flow.dtype) + dt * v], dim=1)
    return WarpedEvents(xy, ev.t.to(flow.dtype), ev.p, float(t_ref), ev.sensor_size)


def splat_bilinear(warped: WarpedEvents, weights: torch.Tensor | None = None) -> torch.Tensor:
    """Accumulate per-event weights onto the pixel grid with a bilinear kernel.

    Returns ``2 x H x W``: channel 0 positive events, channel 1 negative.
    Mass landing outside the sensor is discarded.
    """
    height, width = warped.sensor_size
    xy = warped.xy
    if weights is None:
        weights = torch.ones_like(xy[:, 0])
    x0 = torch.floor(xy[:, 0])
    y0 = torch.floor(xy[:, 1])
    fx = xy[:, 0] - x0
    fy = xy[:, 1] - y0
    x0 = x0.long()
    y0 = y0.long()
    channel = (warped.p < 0).long()
    out = xy.new_zeros(2 * height * width)
    for dx, dy, k in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        px, py = x0 + dx, y0 + dy
        inside = (px >= 0) & (px < width) & (py >= 0) & (py < height)
        index = (channel * height + py) * width + px
        out = out.index_add(0, index[inside], (weights * k)[inside])
    return out.view(2, height, width)


@dataclass(frozen=True, eq=False)
class IWE:
    image: torch.Tensor  # 2 x H x W
    kind: str

    @property
    def pos(self):
        return self.image[0]

    @property
    def neg(self):
        return self.image[1]


def plain_count_iwe(events, flow, t_ref=1) -> IWE:
    return IWE(splat_bilinear(warp_events(events, flow, t_ref)), "plain_count")


def stamp_weights(warped: WarpedEvents, stamps: str = "raw") -> torch.Tensor:
    """Per-event timestamp weights: ``raw`` is t, ``relative`` is 1 - |t_ref - t|.

    The two agree at ``t_ref = 1``.  At ``t_ref = 0`` the raw form rewards
    pushing late events apart, so its gradient points away from the true
    motion; ``relative`` measures closeness to the reference instead.
    """
    if stamps == "raw":
        return warped.t
    if stamps == "relative":
        return 1 - (warped.t_ref - warped.t).abs()
    raise ValueError(f"unknown timestamp weighting {stamps!r}, expected one of {STAMPS}")


def avg_timestamp_iwe(events, flow, t_ref, stamps: str = "raw") -> IWE:
    warped = warp_events(events, flow, t_ref)
    count = splat_bilinear(warped)
    total = splat_bilinear(warped, stamp_weights(warped, stamps))
    return IWE(total / (count + EPS), "avg_timestamp")


def exp_count_iwe(events, flow, t_ref, alpha: float = 0.6) -> IWE:
    if not alpha > 0:
        raise ValueError("saturation factor alpha must be positive")
    count = splat_bilinear(warp_events(events, flow, t_ref))
    return IWE(torch.exp(-alpha * count), "exp_count")


# --- debug dump ----------------------------------------------------------------

IWE_MAGIC = b"IWE1"


def write_iwe(path, iwe: IWE) -> None:
    _, height, width = iwe.image.shape
    with open(path, "wb") as f:
        f.write(IWE_MAGIC + struct.pack("<HHB", height, width, KINDS.index(iwe.kind)))
        f.write(iwe.image.detach().cpu().numpy().astype("<f4").tobytes())


def read_iwe(path) -> IWE:
    data = Path(path).read_bytes()
    if data[:4] != IWE_MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}")
    height, width, kind = struct.unpack("<HHB", data[4:9])
    grid = np.frombuffer(data, dtype="<f4", offset=9).reshape(2, height, width)
    return IWE(torch.from_numpy(grid.copy()), KINDS[kind])
