"""Synthetic event scenes with analytic ground-truth flow.

Particles move on straight lines ``x(t) = x0 + v*t`` and emit events at a
fixed rate (uniform or Poisson timing).  Because the motion is known exactly,
the flow over any interval is ``v * dt`` on the pixels a particle crosses.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .events import EventStream


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Particle:
    x0: float
    y0: float
    vx: float
    vy: float
    polarity: int = 1
    # flip polarity on every emitted event
    alternate: bool = False


@dataclass(frozen=True)
class SceneSpec:
    sensor_size: tuple[int, int]
    particles: tuple[Particle, ...]
    duration: float
    event_rate: float
    contrast_threshold: float = 0.2  # provenance only, emission is rate based
    seed: int = 0
    timing: str = "uniform"  # or "poisson"
    # keep emitted positions continuous instead of rounding to pixels
    subpixel: bool = False

    def __post_init__(self):
        object.__setattr__(self, "particles", tuple(self.particles))
        object.__setattr__(self, "sensor_size", tuple(int(s) for s in self.sensor_size))
        if not self.event_rate > 0:
            raise SceneError("event_rate must be positive")
        if not self.duration > 0:
            raise SceneError("duration must be positive")
        if self.timing not in ("uniform", "poisson"):
            raise SceneError(f"unknown timing mode {self.timing!r}")
        bad = [i for i, p in enumerate(self.particles) if not self._in_bounds(p)]
        if bad:
            raise SceneError(f"particles leave the sensor during the scene: {bad}")

    def _in_bounds(self, p: Particle) -> bool:
        height, width = self.sensor_size
        for t in (0.0, self.duration):
            x = p.x0 + p.vx * t
            y = p.y0 + p.vy * t
            if not (-0.5 <= x < width - 0.5 and -0.5 <= y < height - 0.5):
                return False
        return True

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        d = json.loads(text)
        d["particles"] = tuple(Particle(**p) for p in d["particles"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class GroundTruthFlow:
    """Flow in pixels per volume interval, ``u[y, x] = (du, dv)``."""

    u: np.ndarray  # H x W x 2
    valid_mask: np.ndarray  # H x W bool

    @property
    def chw(self) -> np.ndarray:
        return np.ascontiguousarray(self.u.transpose(2, 0, 1))

    def scaled(self, factor: float) -> "GroundTruthFlow":
        return GroundTruthFlow(self.u * factor, self.valid_mask.copy())


def _round_half_up(a):
    return np.floor(np.asarray(a) + 0.5).astype(np.int64)


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    spec: SceneSpec
    events: EventStream
    # continuous (x, y) emission positions before pixel quantization
    exact_xy: np.ndarray

    def ground_truth(self, t_start: float, t_end: float) -> GroundTruthFlow:
        """Flow over ``[t_start, t_end)`` on every pixel some particle crosses.

        Pixels crossed by particles with different velocities are marked invalid.
        """
        height, width = self.spec.sensor_size
        dt = t_end - t_start
        flow = np.zeros((height, width, 2))
        owner = np.full((height, width), -1, dtype=np.int64)
        conflict = np.zeros((height, width), dtype=bool)
        for i, part in enumerate(self.spec.particles):
            speed = max(abs(part.vx), abs(part.vy)) * dt
            n = max(2, int(np.ceil(speed / 0.05)) + 1)
            ts = np.linspace(t_start, min(t_end, self.spec.duration), n)
            xs = _round_half_up(part.x0 + part.vx * ts)
            ys = _round_half_up(part.y0 + part.vy * ts)
            inside = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
            ys, xs = ys[inside], xs[inside]
            value = np.array([part.vx * dt, part.vy * dt])
            prev = owner[ys, xs]
            clash = (prev >= 0) & (prev != i)
            for j in np.unique(prev[clash]):
                other = self.spec.particles[j]
                if (other.vx, other.vy) != (part.vx, part.vy):
                    conflict[ys[clash & (prev == j)], xs[clash & (prev == j)]] = True
            owner[ys, xs] = i
            flow[ys, xs] = value
        valid = (owner >= 0) & ~conflict
        flow[~valid] = 0.0
        return GroundTruthFlow(flow, valid)


def generate(spec: SceneSpec) -> SyntheticScene:
    """Emit the events of every particle and merge them into one sorted stream."""
    rng = np.random.default_rng(spec.seed)
    xs, ys, ts, ps = [], [], [], []
    for part in spec.particles:
        if spec.timing == "uniform":
            n = int(round(spec.event_rate * spec.duration))
            t = (np.arange(n) + rng.uniform()) / spec.event_rate
            t = t[t < spec.duration]
        else:
            n = rng.poisson(spec.event_rate * spec.duration)
            t = np.sort(rng.uniform(0.0, spec.duration, size=n))
        x = part.x0 + part.vx * t
        y = part.y0 + part.vy * t
        p = np.full(t.size, part.polarity, dtype=np.int8)
        if part.alternate:
            p[1::2] *= -1
        xs.append(x)
        ys.append(y)
        ts.append(t)
        ps.append(p)
    if not ts:
        return SyntheticScene(spec, EventStream.empty(spec.sensor_size), np.zeros((0, 2)))
    t = np.concatenate(ts)
    order = np.argsort(t, kind="stable")
    exact = np.stack([np.concatenate(xs), np.concatenate(ys)], axis=1)[order]
    if spec.subpixel:
        x, y = exact[:, 0].copy(), exact[:, 1].copy()
    else:
        x, y = _round_half_up(exact[:, 0]), _round_half_up(exact[:, 1])
    events = EventStream(x, y, t[order], np.concatenate(ps)[order], spec.sensor_size)
    return SyntheticScene(spec, events, exact)


def translation_scene(
    rng: np.random.Generator,
    sensor_size=(64, 64),
    flow_per_volume=(2.0, -1.0),
    interval: float = 0.05,
    num_volumes: int = 10,
    num_objects: int = 30,
    events_per_volume: float = 12.0,
    dipole: float = 1.0,
    seed: int | None = None,
    subpixel: bool = True,
) -> SceneSpec:
    """A scene translating with one constant flow.

    Each object is a bright spot: a positive particle with a negative particle
    trailing it by ``dipole`` pixels along the motion, which is what a moving
    spot looks like to an event sensor.  ``dipole=0`` gives single particles
    of random polarity instead.
    """
    height, width = sensor_size
    duration = interval * num_volumes
    vx, vy = flow_per_volume[0] / interval, flow_per_volume[1] / interval
    travel_x, travel_y = vx * duration, vy * duration
    speed = np.hypot(vx, vy)
    off_x, off_y = (-vx / speed * dipole, -vy / speed * dipole) if speed > 0 else (0.0, 0.0)
    margin = 1.0 + dipole

    def span(extent, travel):
        lo = margin + max(0.0, -travel)
        hi = extent - 1 - margin - max(0.0, travel)
        if hi <= lo:
            raise SceneError("flow too large for the sensor over the scene duration")
        return lo, hi

    x_lo, x_hi = span(width, travel_x)
    y_lo, y_hi = span(height, travel_y)
    particles = []
    for _ in range(num_objects):
        x0, y0 = rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi)
        if dipole > 0:
            particles.append(Particle(x0, y0, vx, vy, 1))
            particles.append(Particle(x0 + off_x, y0 + off_y, vx, vy, -1))
        else:
            particles.append(Particle(x0, y0, vx, vy, int(rng.choice([-1, 1]))))
    return SceneSpec(
        sensor_size=(height, width),
        particles=tuple(particles),
        duration=duration,
        event_rate=events_per_volume / interval,
        seed=int(rng.integers(2**31)) if seed is None else seed,
        timing="poisson",
        subpixel=subpixel,
    )


# --- ground-truth flow file ---------------------------------------------------

FLOW_MAGIC = b"FLO1"


def write_flow(path, gt: GroundTruthFlow) -> None:
    height, width = gt.valid_mask.shape
    with open(path, "wb") as f:
        f.write(FLOW_MAGIC + struct.pack("<HH", height, width))
        f.write(np.ascontiguousarray(gt.u, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(gt.valid_mask, dtype=np.uint8).tobytes())


def read_flow(path) -> GroundTruthFlow:
    data = Path(path).read_bytes()
    if data[:4] != FLOW_MAGIC:
        raise SceneError(f"{path}: bad magic {data[:4]!r}")
    height, width = struct.unpack("<HH", data[4:8])
    n = height * width
    u = np.frombuffer(data, dtype="<f4", count=2 * n, offset=8).reshape(height, width, 2)
    mask = np.frombuffer(data, dtype=np.uint8, count=n, offset=8 + 8 * n).reshape(height, width)
    return GroundTruthFlow(u.astype(np.float64), mask.astype(bool))


__all__ = [
    "GroundTruthFlow",
    "Particle",
    "SceneError",
    "SceneSpec",
    "SyntheticScene",
    "generate",
    "read_flow",
    "translation_scene",
    "write_flow",
]
