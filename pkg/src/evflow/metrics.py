"""Flow evaluation metrics: endpoint error, outlier rate, FWL and RSAT."""

from __future__ import annotations

import numpy as np
import torch

from .events import EventStream
from .synth import GroundTruthFlow
from .warp import avg_timestamp_iwe, plain_count_iwe


class UndefinedMetricError(ValueError):
    pass


def eval_mask(gt: GroundTruthFlow, volume: EventStream) -> np.ndarray:
    """Pixels with valid ground truth and at least one event."""
    height, width = gt.valid_mask.shape
    has_event = np.zeros((height, width), dtype=bool)
    has_event[volume.py, volume.px] = True
    return gt.valid_mask & has_event


def _endpoint_errors(pred, gt, mask):
    pred = np.asarray(pred, dtype=np.float64)
    gt_u = gt.chw if isinstance(gt, GroundTruthFlow) else np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != gt_u.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt_u.shape} differ in shape")
    if not mask.any():
        raise UndefinedMetricError("evaluation mask is empty")
    ee = np.hypot(*(pred - gt_u)[:, mask])
    return ee, np.hypot(*gt_u[:, mask])


def aee(pred, gt, mask) -> float:
    """Mean endpoint error over masked pixels; flows are ``2 x H x W``."""
    ee, _ = _endpoint_errors(pred, gt, mask)
    return float(ee.mean())


def outlier_rate(pred, gt, mask, threshold: float = 3.0, relative: float = 0.05) -> float:
    """Percent of masked pixels whose error exceeds both ``threshold`` px and ``relative * |gt|``."""
    ee, mag = _endpoint_errors(pred, gt, mask)
    return float(100.0 * np.mean((ee > threshold) & (ee > relative * mag)))


def _as_flow(u, sensor_size) -> torch.Tensor:
    if u is None:
        return torch.zeros(2, *sensor_size, dtype=torch.float64)
    return torch.as_tensor(np.asarray(u, dtype=np.float64))


@torch.no_grad()
def fwl(volume, u) -> float:
    """Variance of the warped count image over the variance of the unwarped one (>1 is sharper)."""
    zero = _as_flow(None, volume.sensor_size)
    base = plain_count_iwe(volume, zero, 1).image.sum(0).var(unbiased=False)
    if base <= 0:
        raise UndefinedMetricError("count image of the volume has zero variance")
    warped = plain_count_iwe(volume, _as_flow(u, volume.sensor_size), 1).image.sum(0).var(unbiased=False)
    return float(warped / base)


@torch.no_grad()
def rsat(volume, u, t_refs=(1,)) -> float:
    """Ratio of squared average-timestamp images, warped over unwarped (<1 is better)."""
    zero = _as_flow(None, volume.sensor_size)
    flow = _as_flow(u, volume.sensor_size)
    num = sum(float((avg_timestamp_iwe(volume, flow, t).image ** 2).sum()) for t in t_refs)
    den = sum(float((avg_timestamp_iwe(volume, zero, t).image ** 2).sum()) for t in t_refs)
    if den <= 0:
        raise UndefinedMetricError("unwarped average-timestamp image is all zero")
    return num / den
