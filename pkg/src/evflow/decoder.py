"""Flow-guided decoder and forward warping of the previous flow."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .cells import ConvGRU, ShapeError
from .encoder import UpConv


@torch.no_grad()
def forward_warp_flow(flow: torch.Tensor) -> torch.Tensor:
    """Scatter a flow field to where it points under constant motion.

    ``flow`` is ``(..., 2, H, W)`` in pixels.  Targets are rounded to the
    nearest pixel, out-of-bounds targets are dropped, collisions are averaged
    and pixels nobody lands on are zero.
    """
    shape = flow.shape
    height, width = shape[-2:]
    flat = flow.reshape(-1, 2, height, width)
    batch = flat.shape[0]
    ys, xs = torch.meshgrid(
        torch.arange(height, device=flow.device), torch.arange(width, device=flow.device), indexing="ij"
    )
    tx = torch.floor(xs + flat[:, 0] + 0.5).long()
    ty = torch.floor(ys + flat[:, 1] + 0.5).long()
    inside = (tx >= 0) & (tx < width) & (ty >= 0) & (ty < height)
    b = torch.arange(batch, device=flow.device).view(-1, 1, 1).expand_as(tx)
    index = (b * height * width + ty * width + tx)[inside]
    sums = flat.new_zeros(2, batch * height * width)
    counts = flat.new_zeros(batch * height * width)
    values = flat.permute(1, 0, 2, 3)[:, inside]
    sums.index_add_(1, index, values)
    counts.index_add_(0, index, torch.ones_like(index, dtype=flat.dtype))
    out = sums / counts.clamp(min=1)
    out = out.view(2, batch, height, width).permute(1, 0, 2, 3)
    return out.reshape(shape)


def resize_flow(flow: torch.Tensor, size) -> torch.Tensor:
    """Bilinear resize with vectors rescaled to the new pixel units."""
    if tuple(flow.shape[-2:]) == tuple(size):
        return flow
    out = F.interpolate(flow, size=size, mode="bilinear", align_corners=False)
    scale = out.new_tensor([size[1] / flow.shape[-1], size[0] / flow.shape[-2]]).view(1, 2, 1, 1)
    return out * scale


@dataclass
class FlowPyramid:
    levels: list  # u1 (H/8) .. u4 (H)
    initial: list  # the pre-refinement flows

    @property
    def full(self) -> torch.Tensor:
        return self.levels[-1]


class FGDecoder(nn.Module):
    """Four upsampling stages, each predicting a flow refined by the prior flow.

    Flows are ``max_flow * tanh(conv(D))`` with ``max_flow`` a fraction of the
    level width.  The refinement ConvGRU runs in units of ``max_flow`` (input
    the initial flow, hidden state the resized prior flow) and its new hidden
    state, scaled back to pixels, is the level's flow.
    """

    def __init__(
        self,
        channels=(32, 64, 128, 256),
        kernel_size: int = 3,
        max_flow_ratio: float = 0.25,
        use_prior_flow: bool = True,
        share_refinement: bool = False,
    ):
        super().__init__()
        c1, c2, c3, c4 = channels
        self.max_flow_ratio = max_flow_ratio
        self.use_prior_flow = use_prior_flow
        # (input channels, output channels) of each stage
        dims = [(2 * c4, c3), (c3 + c3 + 2, c2), (c2 + c2 + 2, c1), (c1 + c1 + 2, c1)]
        self.up = nn.ModuleList([UpConv(cin, cout, kernel_size) for cin, cout in dims])
        self.heads = nn.ModuleList([nn.Conv2d(cout, 2, kernel_size, padding=kernel_size // 2) for _, cout in dims])
        if use_prior_flow:
            if share_refinement:
                shared = ConvGRU(2, 2, kernel_size)
                self.refine = nn.ModuleList([shared] * 4)
            else:
                self.refine = nn.ModuleList([ConvGRU(2, 2, kernel_size) for _ in range(4)])
        else:
            self.refine = None
        self.reset_flow_parameters()

    def reset_flow_parameters(self, std: float = 1e-3, update_bias: float = 2.0):
        """Start from near-zero flow with refinement cells that mostly pass the head's flow through.

        Heads get tiny weights and zero biases.  Each refinement cell's
        candidate sees the initial flow through an identity centre tap, and its
        update gate starts open (sigmoid(update_bias)), so at initialization
        u ~ tanh(u_hat) blended with a small share of the prior flow.
        """
        for head in self.heads:
            nn.init.normal_(head.weight, std=std)
            nn.init.zeros_(head.bias)
        if self.refine is None:
            return
        with torch.no_grad():
            for cell in self.refine:
                c, k = cell.hidden_channels, cell.conv_x.kernel_size[0]
                nn.init.zeros_(cell.conv_x.bias)
                nn.init.zeros_(cell.conv_h.bias)
                cell.conv_x.bias[c : 2 * c] = update_bias
                cell.conv_x.weight[2 * c :].zero_()
                for i in range(c):
                    cell.conv_x.weight[2 * c + i, i, k // 2, k // 2] = 1.0

    def max_flow(self, width: int) -> float:
        return self.max_flow_ratio * width

    def forward(self, residual, features, prior_flow=None) -> FlowPyramid:
        f1, f2, f3, f4 = features
        if residual.shape != f4.shape:
            raise ShapeError(f"level 1: residual {tuple(residual.shape)} does not match F4 {tuple(f4.shape)}")
        height, width = 2 * f1.shape[-2], 2 * f1.shape[-1]
        if prior_flow is not None and tuple(prior_flow.shape[-2:]) != (height, width):
            raise ShapeError(f"prior flow {tuple(prior_flow.shape[-2:])} is not at full resolution {(height, width)}")
        skips = [f4, f3, f2, f1]
        levels, initial = [], []
        d = residual
        for l in range(4):
            size = (skips[l].shape[-2] * 2, skips[l].shape[-1] * 2)
            if l == 0:
                x = torch.cat([d, skips[0]], dim=1)
            else:
                prev = levels[-1] / self.max_flow(levels[-1].shape[-1])
                for name, t in (("D", d), ("flow", prev)):
                    if t.shape[-2:] != skips[l].shape[-2:]:
                        raise ShapeError(f"level {l + 1}: {name} is {tuple(t.shape[-2:])}, skip is {tuple(skips[l].shape[-2:])}")
                x = torch.cat([d, skips[l], prev], dim=1)
            d = self.up[l](x, size)
            scale = self.max_flow(size[1])
            u_hat = torch.tanh(self.heads[l](d))
            initial.append(scale * u_hat)
            if self.refine is None:
                u = u_hat
            else:
                if prior_flow is None:
                    prior = None
                else:
                    prior = resize_flow(prior_flow, size) / scale
                u = self.refine[l](u_hat, prior)
            levels.append(scale * u)
        return FlowPyramid(levels, initial)
