"""Convolutional GRU and the dual-memory spatio-temporal ConvGRU."""

from __future__ import annotations

import torch
from torch import nn


class ShapeError(ValueError):
    pass


def _check_same(name_a, a, name_b, b, dims=(-2, -1), labels=("height", "width")):
    for d, label in zip(dims, labels):
        if a.shape[d] != b.shape[d]:
            raise ShapeError(f"{label} mismatch: {name_a} has {a.shape[d]}, {name_b} has {b.shape[d]}")


class ConvGRU(nn.Module):
    """Convolutional GRU cell.

    The six gate kernels are stored as two fused convolutions (input side and
    hidden side), each producing the reset, update and candidate pre-activations
    in that channel order.  :meth:`kernels` returns them as separate tensors.
    """

    GATES = ("r", "z", "h")

    def __init__(self, in_channels: int, hidden_channels: int, kernel_size: int = 3):
        super().__init__()
        self.in_channels = in_channels
        self.hidden_channels = hidden_channels
        padding = kernel_size // 2
        self.conv_x = nn.Conv2d(in_channels, 3 * hidden_channels, kernel_size, padding=padding)
        self.conv_h = nn.Conv2d(hidden_channels, 3 * hidden_channels, kernel_size, padding=padding)

    def kernels(self) -> dict[str, tuple[torch.Tensor, torch.Tensor]]:
        """Per-gate ``(weight, bias)`` keyed ``W_xr, W_hr, W_xz, W_hz, W_xh, W_hh``."""
        c = self.hidden_channels
        out = {}
        for i, g in enumerate(self.GATES):
            sl = slice(i * c, (i + 1) * c)
            out[f"W_x{g}"] = (self.conv_x.weight[sl], self.conv_x.bias[sl])
            out[f"W_h{g}"] = (self.conv_h.weight[sl], self.conv_h.bias[sl])
        return out

    def forward(self, x: torch.Tensor, h: torch.Tensor | None = None) -> torch.Tensor:
        if x.shape[-3] != self.in_channels:
            raise ShapeError(f"channel mismatch: input has {x.shape[-3]}, cell expects {self.in_channels}")
        if h is None:
            h = x.new_zeros(*x.shape[:-3], self.hidden_channels, *x.shape[-2:])
        else:
            _check_same("input", x, "hidden state", h)
            if h.shape[-3] != self.hidden_channels:
                raise ShapeError(f"channel mismatch: hidden state has {h.shape[-3]}, cell expects {self.hidden_channels}")
        xr, xz, xh = self.conv_x(x).chunk(3, dim=-3)
        hr, hz, hh = self.conv_h(h).chunk(3, dim=-3)
        r = torch.sigmoid(xr + hr)
        z = torch.sigmoid(xz + hz)
        candidate = torch.tanh(r * hh + xh)
        return (1 - z) * h + z * candidate


def convgru_step(cell: ConvGRU, x: torch.Tensor, h_prev: torch.Tensor | None) -> torch.Tensor:
    return cell(x, h_prev)


class STConvGRU(nn.Module):
    """ConvGRU with a second memory routed in from elsewhere in the network.

    The own state ``S`` and the routed memory ``M`` are each updated by a
    ConvGRU branch; an output gate then fuses them into the feature map.
    Only ``S`` is returned as recurrent state; ``M`` is supplied fresh on each
    call by the caller.
    """

    def __init__(
        self,
        in_channels: int,
        hidden_channels: int,
        kernel_size: int = 3,
        gate_kernel_size: int = 3,
        share_branches: bool = False,
    ):
        super().__init__()
        self.hidden_channels = hidden_channels
        self.branch_s = ConvGRU(in_channels, hidden_channels, kernel_size)
        self.branch_m = self.branch_s if share_branches else ConvGRU(in_channels, hidden_channels, kernel_size)
        pad = gate_kernel_size // 2
        self.w_fo = nn.Conv2d(in_channels, hidden_channels, gate_kernel_size, padding=pad)
        self.w_so = nn.Conv2d(hidden_channels, hidden_channels, gate_kernel_size, padding=pad)
        self.w_mo = nn.Conv2d(hidden_channels, hidden_channels, gate_kernel_size, padding=pad)
        self.w_mm = nn.Conv2d(hidden_channels, hidden_channels, 1)
        self.w_ss = nn.Conv2d(hidden_channels, hidden_channels, 1)

    def forward(self, x, s_prev=None, m_prev=None):
        if m_prev is not None:
            _check_same("input", x, "routed memory", m_prev)
        s_new = self.branch_s(x, s_prev)
        m_bar = self.branch_m(x, m_prev)
        o = torch.sigmoid(self.w_fo(x) + self.w_so(s_new) + self.w_mo(m_bar))
        f_out = o * torch.tanh(self.w_mm(m_bar) + self.w_ss(s_new))
        return f_out, s_new


def st_convgru_step(cell: STConvGRU, x, s_prev, m_prev):
    return cell(x, s_prev, m_prev)
