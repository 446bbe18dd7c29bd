"""Hybrid motion-compensation loss: average-timestamp and exponential-count
sharpness terms at both reference times, plus Charbonnier smoothness."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields

import torch

from .decoder import resize_flow
from .warp import EPS, STAMPS, avg_timestamp_iwe, exp_count_iwe, splat_bilinear, stamp_weights, warp_events


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.6
    lambda1: float = 1.0
    lambda2: float = 0.001
    charbonnier_gamma: float = 0.45
    charbonnier_eps: float = 1e-3
    # timestamp weighting of the average-timestamp image (see warp.stamp_weights)
    stamps: str = "relative"
    # also supervise the coarser pyramid levels (flows resized to full resolution)
    all_scales: bool = False

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.stamps not in STAMPS:
            raise ValueError(f"stamps must be one of {STAMPS}")


@dataclass
class LossBreakdown:
    l_at_t0: torch.Tensor
    l_at_t1: torch.Tensor
    l_ec_t0: torch.Tensor
    l_ec_t1: torch.Tensor
    l_smooth: torch.Tensor
    total: torch.Tensor

    def as_dict(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name).detach()) for f in fields(self)}

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.as_dict().values())


def loss_at(events, flow, t_ref, stamps: str = "raw") -> torch.Tensor:
    iwe = avg_timestamp_iwe(events, flow, t_ref, stamps)
    return (iwe.image**2).sum()


def loss_ec(events, flow, t_ref, alpha: float = 0.6) -> torch.Tensor:
    iwe = exp_count_iwe(events, flow, t_ref, alpha)
    n = iwe.image.shape[-1] * iwe.image.shape[-2]
    sums = iwe.image.sum(dim=(-2, -1))
    return (n / sums).sum() - 2


def charbonnier(z, gamma=0.45, eps=1e-3):
    return (z**2 + eps**2) ** gamma


def loss_smooth(flow: torch.Tensor, gamma: float = 0.45, eps: float = 1e-3) -> torch.Tensor:
    """Mean Charbonnier penalty over right, down, down-right and down-left differences."""
    diffs = (
        flow[..., :, 1:] - flow[..., :, :-1],
        flow[..., 1:, :] - flow[..., :-1, :],
        flow[..., 1:, 1:] - flow[..., :-1, :-1],
        flow[..., 1:, :-1] - flow[..., :-1, 1:],
    )
    terms = [charbonnier(d, gamma, eps).sum(dim=-3).mean() for d in diffs if d.numel()]
    if not terms:
        return flow.new_zeros(())
    return torch.stack(terms).mean()


def loss_hmc(events, flow, cfg: LossConfig = LossConfig()) -> LossBreakdown:
    """Full objective on one normalized volume.

    ``flow`` is the full-resolution ``2 x H x W`` flow, or a list of pyramid
    levels whose last entry is full resolution (only used when
    ``cfg.all_scales`` is set).
    """
    if isinstance(flow, (list, tuple)):
        levels = list(flow)
        flow = levels[-1]
    else:
        levels = [flow]
    parts = _terms(events, flow, cfg)
    if cfg.all_scales and len(levels) > 1:
        for coarse in levels[:-1]:
            up = resize_flow(coarse.unsqueeze(0), flow.shape[-2:])[0]
            extra = _terms(events, up, cfg)
            parts = [a + b for a, b in zip(parts, extra)]
    l_at_t0, l_at_t1, l_ec_t0, l_ec_t1, l_smooth = parts
    total = (l_at_t0 + l_at_t1) + cfg.lambda1 * (l_ec_t0 + l_ec_t1) + cfg.lambda2 * l_smooth
    return LossBreakdown(l_at_t0, l_at_t1, l_ec_t0, l_ec_t1, l_smooth, total)


def _terms(events, flow, cfg):
    # same quantities as loss_at / loss_ec, sharing one warp per reference time
    n = flow.shape[-1] * flow.shape[-2]
    at, ec = [], []
    for t_ref in (0, 1):
        warped = warp_events(events, flow, t_ref)
        count = splat_bilinear(warped)
        stamps = splat_bilinear(warped, stamp_weights(warped, cfg.stamps))
        at.append(((stamps / (count + EPS)) ** 2).sum())
        ec.append((n / torch.exp(-cfg.alpha * count).sum(dim=(-2, -1))).sum() - 2)
    smooth = loss_smooth(flow, cfg.charbonnier_gamma, cfg.charbonnier_eps)
    return [at[0], at[1], ec[0], ec[1], smooth]


class LossLog:
    """CSV log of per-step breakdowns."""

    COLUMNS = ("step", "l_at_t0", "l_at_t1", "l_ec_t0", "l_ec_t1", "l_smooth", "total")

    def __init__(self, path):
        self._file = open(path, "w", newline="")
        self._writer = csv.writer(self._file)
        self._writer.writerow(self.COLUMNS)

    def write(self, step: int, breakdown: LossBreakdown):
        d = breakdown.as_dict()
        self._writer.writerow([step] + [repr(d[c]) for c in self.COLUMNS[1:]])
        self._file.flush()

    def close(self):
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
