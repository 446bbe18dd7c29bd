import numpy as np
import torch

from evflow.events import EventVolume


def volume(x, y, t, p, size):
    """A normalized volume from plain lists."""
    return EventVolume(np.asarray(x), np.asarray(y), np.asarray(t, float), np.asarray(p), size, 0.0, 1.0, True)


def random_volume(rng, n=20, size=(8, 8)):
    h, w = size
    t = np.sort(rng.uniform(0, 1, n))
    return volume(rng.integers(0, w, n), rng.integers(0, h, n), t, rng.choice([-1, 1], n), size)


def fd_gradient(fn, u, step=1e-4):
    """Central differences of a scalar function over every entry of ``u``."""
    g = torch.zeros_like(u)
    flat, gflat = u.view(-1), g.view(-1)
    for i in range(flat.numel()):
        old = flat[i].item()
        flat[i] = old + step
        hi = fn(u).item()
        flat[i] = old - step
        lo = fn(u).item()
        flat[i] = old
        gflat[i] = (hi - lo) / (2 * step)
    return g


def relative_error(fn, u, step=1e-4):
    """Max-norm relative error between autograd and central differences."""
    u = u.detach().clone().double()
    x = u.clone().requires_grad_(True)
    fn(x).backward()
    numeric = fd_gradient(fn, u, step)
    scale = max(numeric.abs().max().item(), 1e-12)
    return (x.grad - numeric).abs().max().item() / scale
