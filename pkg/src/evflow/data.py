"""Dataset adapters: anything that yields consecutive event volumes and, optionally, ground truth.

On-disk layout written by ``evflow gen``, one directory per sequence::

    <root>/<name>/meta.json     sensor size, volume interval, origin
    <root>/<name>/events.evt    binary events (or events.txt)
    <root>/<name>/scene.json    optional, synthetic scene description (exact GT at any interval)
    <root>/<name>/flow_0000.flo optional, per-volume GT at the base interval
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Protocol, runtime_checkable

from .events import EventStream, EventVolume, read_events, slice_stream, write_events
from .synth import GroundTruthFlow, SceneSpec, SyntheticScene, read_flow, write_flow


@runtime_checkable
class SequenceSource(Protocol):
    """Adapter contract for evaluation and training data.

    ``volumes(m)`` returns consecutive, non-overlapping raw volumes of length
    ``m`` times the base interval.  ``ground_truth`` returns ``None`` when no
    flow is known for that volume.
    """

    name: str
    sensor_size: tuple[int, int]

    def volumes(self, interval_multiplier: int = 1) -> list[EventVolume]: ...

    def ground_truth(self, index: int, interval_multiplier: int = 1) -> GroundTruthFlow | None: ...


def _pad(volumes, sensor_size, interval, origin, length):
    while length is not None and len(volumes) < length:
        k = len(volumes)
        volumes.append(EventVolume.empty_volume(sensor_size, origin + k * interval, origin + (k + 1) * interval))
    return volumes


@dataclass(eq=False)
class SyntheticSource:
    """A generated scene, sliced at a base interval; GT is exact at every multiplier."""

    name: str
    scene: SyntheticScene
    interval: float
    num_volumes: int | None = None

    @property
    def sensor_size(self):
        return self.scene.spec.sensor_size

    def volumes(self, interval_multiplier: int = 1):
        step = self.interval * interval_multiplier
        vols = slice_stream(self.scene.events, step, self.sensor_size)
        count = None if self.num_volumes is None else self.num_volumes // interval_multiplier
        vols = _pad(vols, self.sensor_size, step, 0.0, count)
        return vols if count is None else vols[:count]

    def ground_truth(self, index: int, interval_multiplier: int = 1):
        step = self.interval * interval_multiplier
        return self.scene.ground_truth(index * step, (index + 1) * step)


@dataclass(eq=False)
class DirectorySource:
    name: str
    root: Path
    sensor_size: tuple[int, int]
    interval: float
    origin: float
    events: EventStream
    scene: SyntheticScene | None

    @classmethod
    def open(cls, path) -> "DirectorySource":
        root = Path(path)
        meta = json.loads((root / "meta.json").read_text())
        sensor_size = tuple(int(s) for s in meta["sensor_size"])
        for fname in ("events.evt", "events.txt"):
            if (root / fname).exists():
                events = read_events(root / fname)
                break
        else:
            raise FileNotFoundError(f"{root}: no events.evt or events.txt")
        if tuple(events.sensor_size) != sensor_size:
            events = EventStream(events.x, events.y, events.t, events.p, sensor_size)
        scene = None
        if (root / "scene.json").exists():
            spec = SceneSpec.from_json((root / "scene.json").read_text())
            scene = SyntheticScene(spec, events, None)
        return cls(root.name, root, sensor_size, float(meta["interval"]), float(meta.get("origin", 0.0)), events, scene)

    def volumes(self, interval_multiplier: int = 1):
        return slice_stream(self.events, self.interval * interval_multiplier, self.sensor_size, self.origin)

    def ground_truth(self, index: int, interval_multiplier: int = 1):
        step = self.interval * interval_multiplier
        if self.scene is not None:
            t0 = self.origin + index * step
            return self.scene.ground_truth(t0, t0 + step)
        if interval_multiplier != 1:
            return None
        path = self.root / f"flow_{index:04d}.flo"
        return read_flow(path) if path.exists() else None


def open_dataset(path) -> list[SequenceSource]:
    """A single sequence directory, or a directory of them (sorted by name)."""
    root = Path(path)
    if (root / "meta.json").exists():
        return [DirectorySource.open(root)]
    dirs = sorted(d for d in root.iterdir() if (d / "meta.json").exists())
    if not dirs:
        raise FileNotFoundError(f"{root}: no sequence directories (meta.json) found")
    return [DirectorySource.open(d) for d in dirs]


def write_sequence(path, source: SyntheticSource, text: bool | None = None) -> Path:
    """Store a synthetic source in the directory layout, with per-volume GT files.

    Sub-pixel events go to the text format by default since binary records
    hold integer pixels.
    """
    if text is None:
        text = source.scene.events.subpixel
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = {"sensor_size": list(source.sensor_size), "interval": source.interval, "origin": 0.0}
    (root / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    write_events(root / ("events.txt" if text else "events.evt"), source.scene.events)
    (root / "scene.json").write_text(source.scene.spec.to_json())
    for k, _ in enumerate(source.volumes()):
        write_flow(root / f"flow_{k:04d}.flo", source.ground_truth(k))
    return root


def windows(volumes, length: int) -> Iterator[list]:
    """Consecutive chunks of ``length`` volumes; a short tail is dropped."""
    for i in range(0, len(volumes) - length + 1, length):
        yield volumes[i : i + length]
