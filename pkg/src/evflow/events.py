"""Event data model, stream slicing, timestamp normalization and count images.

All grids in this package are indexed ``grid[y, x]`` (row, column).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np


class EventError(ValueError):
    pass


class SortingError(EventError):
    pass


class DegenerateIntervalError(EventError):
    pass


class Event(NamedTuple):
    x: int
    y: int
    t: float
    p: int


def _coords(a):
    a = np.asarray(a)
    # floating coordinates mark sub-pixel events and are kept as is
    return np.ascontiguousarray(a, dtype=np.float64 if a.dtype.kind == "f" else np.int64)


def pixel_index(a: np.ndarray) -> np.ndarray:
    """Nearest pixel of (possibly sub-pixel) coordinates."""
    if a.dtype.kind == "f":
        return np.floor(a + 0.5).astype(np.int64)
    return a


def _as_arrays(x, y, t, p):
    x = _coords(x)
    y = _coords(y)
    t = np.ascontiguousarray(t, dtype=np.float64)
    p = np.ascontiguousarray(p, dtype=np.int8)
    if not (x.shape == y.shape == t.shape == p.shape) or x.ndim != 1:
        raise EventError("x, y, t, p must be 1-d arrays of equal length")
    return x, y, t, p


def _check_bounds(x, y, p, sensor_size):
    height, width = sensor_size
    x, y = pixel_index(x), pixel_index(y)
    if x.size:
        if x.min() < 0 or x.max() >= width or y.min() < 0 or y.max() >= height:
            raise EventError(f"event coordinates outside sensor {height}x{width}")
        if not np.all((p == 1) | (p == -1)):
            raise EventError("polarity must be +1 or -1")


@dataclass(frozen=True, eq=False)
class EventStream:
    """An ordered stream of events stored column-wise.

    Coordinates are integer pixels; float coordinate arrays hold sub-pixel
    events (synthetic data), which bin to their nearest pixel.
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    sensor_size: tuple[int, int]

    def __post_init__(self):
        x, y, t, p = _as_arrays(self.x, self.y, self.t, self.p)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "sensor_size", (int(self.sensor_size[0]), int(self.sensor_size[1])))
        _check_bounds(x, y, p, self.sensor_size)

    @classmethod
    def from_events(cls, events: Sequence[Event], sensor_size) -> "EventStream":
        if not events:
            return cls.empty(sensor_size)
        x, y, t, p = zip(*((e.x, e.y, e.t, e.p) for e in events))
        return cls(np.array(x), np.array(y), np.array(t), np.array(p), sensor_size)

    @classmethod
    def empty(cls, sensor_size) -> "EventStream":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0), sensor_size)

    def __len__(self) -> int:
        return int(self.t.size)

    @property
    def subpixel(self) -> bool:
        return self.x.dtype.kind == "f"

    @property
    def px(self) -> np.ndarray:
        return pixel_index(self.x)

    @property
    def py(self) -> np.ndarray:
        return pixel_index(self.y)

    def __iter__(self) -> Iterator[Event]:
        cast = float if self.subpixel else int
        for i in range(len(self)):
            yield Event(cast(self.x[i]), cast(self.y[i]), float(self.t[i]), int(self.p[i]))

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.t) >= 0))

    def select(self, index) -> "EventStream":
        return replace(self, x=self.x[index], y=self.y[index], t=self.t[index], p=self.p[index])


@dataclass(frozen=True, eq=False)
class EventVolume(EventStream):
    """Events of one fixed interval ``[t_start, t_end)``."""

    t_start: float = 0.0
    t_end: float = 1.0
    normalized: bool = False

    def __post_init__(self):
        super().__post_init__()
        if self.t.size and (self.t.min() < self.t_start or self.t.max() > self.t_end):
            raise EventError("event timestamps outside the volume interval")

    @classmethod
    def empty_volume(cls, sensor_size, t_start: float, t_end: float) -> "EventVolume":
        z = np.zeros(0)
        return cls(z, z, z, z, sensor_size, t_start, t_end)

    @property
    def num_events(self) -> int:
        return len(self)


def _interval_index(t: np.ndarray, interval: float, origin: float) -> np.ndarray:
    q = (t - origin) / interval
    k = np.floor(q)
    # t sitting on a boundary up to float round-off belongs to the later interval
    near = np.isclose(q, k + 1, rtol=1e-12, atol=1e-9)
    return (k + near).astype(np.int64)


def slice_stream(
    events: EventStream, interval: float, sensor_size=None, origin: float = 0.0
) -> list[EventVolume]:
    """Split a sorted stream into consecutive volumes ``[origin + k*interval, origin + (k+1)*interval)``.

    Intermediate intervals without events are returned as empty volumes so the
    result always covers ``[t_first, t_last]`` without gaps.
    """
    if not interval > 0:
        raise EventError("interval must be positive")
    sensor_size = tuple(sensor_size or events.sensor_size)
    if len(events) == 0:
        return []
    if not events.is_sorted():
        raise SortingError("event stream is not sorted by timestamp")

    k = _interval_index(events.t, interval, origin)
    k_first, k_last = int(k[0]), int(k[-1])
    bounds = np.searchsorted(k, np.arange(k_first, k_last + 2), side="left")
    volumes = []
    for j, kk in enumerate(range(k_first, k_last + 1)):
        sl = slice(bounds[j], bounds[j + 1])
        t_start = origin + kk * interval
        t_end = origin + (kk + 1) * interval
        t = events.t[sl]
        # guard float round-off at the edges so the volume invariant holds
        if t.size:
            t_start = min(t_start, float(t[0]))
            t_end = max(t_end, float(t[-1]))
        volumes.append(
            EventVolume(events.x[sl], events.y[sl], t, events.p[sl], sensor_size, t_start, t_end)
        )
    return volumes


def normalize_timestamps(volume: EventVolume) -> EventVolume:
    """Affinely map timestamps so that ``t_start -> 0`` and ``t_end -> 1``."""
    if volume.normalized:
        return volume
    span = volume.t_end - volume.t_start
    if not span > 0:
        raise DegenerateIntervalError(f"degenerate interval [{volume.t_start}, {volume.t_end}]")
    t = np.clip((volume.t - volume.t_start) / span, 0.0, 1.0)
    return replace(volume, t=t, t_start=0.0, t_end=1.0, normalized=True)


@dataclass(frozen=True, eq=False)
class CountImage:
    pos: np.ndarray
    neg: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.stack([self.pos, self.neg])


def count_image(volume: EventStream) -> CountImage:
    height, width = volume.sensor_size
    flat = volume.py * width + volume.px
    pos = np.bincount(flat[volume.p > 0], minlength=height * width)
    neg = np.bincount(flat[volume.p < 0], minlength=height * width)
    return CountImage(
        pos.reshape(height, width).astype(np.float32),
        neg.reshape(height, width).astype(np.float32),
    )


# --- file formats -----------------------------------------------------------

BINARY_MAGIC = b"EVT1"
_RECORD = np.dtype([("t", "<f8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])


def write_text(path, events: EventStream) -> None:
    height, width = events.sensor_size
    with open(path, "w") as f:
        f.write(f"# sensor {height} {width}\n")
        for ev in events:
            f.write(f"{ev.t!r} {ev.x} {ev.y} {ev.p}\n")


def _number(word: str):
    return float(word) if any(c in word for c in ".eE") else int(word)


def read_text(path, sensor_size=None) -> EventStream:
    """Read ``t x y p`` lines; a ``# sensor H W`` comment supplies the size."""
    rows = []
    with open(path) as f:
        for line in f:
            body, _, comment = line.partition("#")
            words = comment.split()
            if sensor_size is None and len(words) == 3 and words[0] == "sensor":
                sensor_size = (int(words[1]), int(words[2]))
            if not body.strip():
                continue
            t, x, y, p = body.split()
            rows.append((float(t), _number(x), _number(y), int(p)))
    if sensor_size is None:
        if not rows:
            raise EventError(f"{path}: cannot infer sensor size of an empty file")
        sensor_size = (int(round(max(r[2] for r in rows))) + 1, int(round(max(r[1] for r in rows))) + 1)
    if not rows:
        return EventStream.empty(sensor_size)
    t, x, y, p = map(np.array, zip(*rows))
    return EventStream(x, y, t, p, sensor_size)


def write_binary(path, events: EventStream) -> None:
    """Sub-pixel coordinates are rounded: the record stores integer pixels."""
    height, width = events.sensor_size
    records = np.empty(len(events), dtype=_RECORD)
    records["t"], records["x"], records["y"], records["p"] = events.t, events.px, events.py, events.p
    with open(path, "wb") as f:
        f.write(BINARY_MAGIC + struct.pack("<HH", height, width))
        f.write(records.tobytes())


def read_binary(path) -> EventStream:
    data = Path(path).read_bytes()
    if data[:4] != BINARY_MAGIC:
        raise EventError(f"{path}: bad magic {data[:4]!r}")
    height, width = struct.unpack("<HH", data[4:8])
    records = np.frombuffer(data, dtype=_RECORD, offset=8)
    return EventStream(records["x"], records["y"], records["t"], records["p"], (height, width))


def read_events(path) -> EventStream:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
    return read_binary(path) if magic == BINARY_MAGIC else read_text(path)


def write_events(path, events: EventStream) -> None:
    path = Path(path)
    if path.suffix == ".txt":
        write_text(path, events)
    else:
        write_binary(path, events)

