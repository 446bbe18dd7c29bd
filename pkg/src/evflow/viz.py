"""Color-wheel rendering of flow fields."""

from __future__ import annotations

import numpy as np
from matplotlib.colors import hsv_to_rgb
from PIL import Image


def flow_to_rgb(flow, eps: float = 1e-9) -> np.ndarray:
    """``2 x H x W`` flow to ``H x W x 3`` uint8.

    Hue is the direction, value the magnitude over the image maximum.
    """
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ValueError(f"expected a 2 x H x W flow, got {flow.shape}")
    if not np.isfinite(flow).all():
        raise ValueError("flow contains non-finite values")
    u, v = flow
    mag = np.hypot(u, v)
    hue = (np.arctan2(v, u) / (2 * np.pi)) % 1.0
    value = mag / max(mag.max(), eps)
    hsv = np.stack([hue, np.ones_like(hue), value], axis=-1)
    return np.round(hsv_to_rgb(hsv) * 255).astype(np.uint8)


def visualize_flow(flow, out_path) -> None:
    Image.fromarray(flow_to_rgb(flow)).save(out_path, format="PNG")
