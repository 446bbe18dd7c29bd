"""Stateful evaluation over sequences and the metric report."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .events import normalize_timestamps
from .metrics import UndefinedMetricError, aee, eval_mask, fwl, outlier_rate, rsat
from .model import predict_sequence

COLUMNS = ("sequence", "volume_index", "aee", "outlier_pct", "fwl", "rsat")


@dataclass
class VolumeResult:
    sequence: str
    volume_index: int
    aee: float = math.nan
    outlier_pct: float = math.nan
    fwl: float = math.nan
    rsat: float = math.nan


@dataclass
class Report:
    rows: list = field(default_factory=list)

    def mean(self, column: str) -> float:
        vals = [getattr(r, column) for r in self.rows]
        vals = [v for v in vals if not math.isnan(v)]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def has_ground_truth(self) -> bool:
        return any(not math.isnan(r.aee) for r in self.rows)

    def summary(self) -> dict:
        return {c: self.mean(c) for c in COLUMNS[2:]}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(COLUMNS)
            for r in self.rows:
                w.writerow([r.sequence, r.volume_index] + [_fmt(getattr(r, c)) for c in COLUMNS[2:]])
            w.writerow(["mean", ""] + [_fmt(v) for v in self.summary().values()])


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def _safe(fn, *args):
    try:
        return fn(*args)
    except UndefinedMetricError:
        return math.nan


def score_volume(name, index, volume, pred, gt) -> VolumeResult:
    """All metrics for one volume; AEE/outliers are skipped without ground truth."""
    row = VolumeResult(name, index)
    if len(volume):
        normed = normalize_timestamps(volume)
        row.fwl = _safe(fwl, normed, pred)
        row.rsat = _safe(rsat, normed, pred)
    if gt is not None:
        mask = eval_mask(gt, volume)
        row.aee = _safe(aee, pred, gt, mask)
        row.outlier_pct = _safe(outlier_rate, pred, gt, mask)
    return row


def evaluate(model, dataset, interval_multiplier: int = 1, predictor=None) -> Report:
    """Run the model over each sequence with its state carried across volumes.

    ``predictor(volumes) -> iterable of 2xHxW flows`` replaces the model
    when given (e.g. to score ground truth or a fixed flow).
    """
    if interval_multiplier not in (1, 4):
        raise ValueError("interval multiplier must be 1 or 4")
    report = Report()
    for source in dataset:
        volumes = source.volumes(interval_multiplier)
        flows = predictor(volumes) if predictor else predict_sequence(model, volumes)
        for k, (volume, pred) in enumerate(zip(volumes, flows)):
            gt = source.ground_truth(k, interval_multiplier)
            report.rows.append(score_volume(source.name, k, volume, pred, gt))
    return report
