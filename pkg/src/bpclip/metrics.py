"""Rank (SRCC) and linear (PLCC) correlation between predictions and MOS."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MetricUndefinedError

MIN_SAMPLES = 3


def midranks(x) -> np.ndarray:
    """1-based ranks with ties assigned their group average (mid-rank)."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    sorted_x = x[order]
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _pearson(x: np.ndarray, y: np.ndarray, what: str) -> float:
    if len(x) != len(y):
        raise MetricUndefinedError(f"{what}: length mismatch {len(x)} vs {len(y)}")
    if len(x) < MIN_SAMPLES:
        raise MetricUndefinedError(f"{what}: needs >= {MIN_SAMPLES} samples, got {len(x)}")
    xm = x - x.mean()
    ym = y - y.mean()
    vx = float(np.dot(xm, xm))
    vy = float(np.dot(ym, ym))
    if vx == 0.0 or vy == 0.0:
        raise MetricUndefinedError(f"{what}: zero variance")
    return float(np.dot(xm, ym) / np.sqrt(vx * vy))


def plcc(pred, gt) -> float:
    """Pearson linear correlation coefficient."""
    return _pearson(np.asarray(pred, dtype=np.float64),
                    np.asarray(gt, dtype=np.float64), "plcc")


def srcc(pred, gt) -> float:
    """Spearman rank-order correlation: Pearson over mid-ranks."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if len(pred) != len(gt):
        raise MetricUndefinedError(f"srcc: length mismatch {len(pred)} vs {len(gt)}")
    if len(pred) < MIN_SAMPLES:
        raise MetricUndefinedError(f"srcc: needs >= {MIN_SAMPLES} samples, got {len(pred)}")
    return _pearson(midranks(pred), midranks(gt), "srcc")


@dataclass
class MetricsReport:
    srcc: float
    plcc: float
    count: int
    srcc_std: float | None = None
    plcc_std: float | None = None
    repeats: int = 1

    def __post_init__(self):
        for name, v in (("srcc", self.srcc), ("plcc", self.plcc)):
            if abs(v) > 1.0 + 1e-9:
                raise MetricUndefinedError(f"{name} {v} outside [-1, 1]")
        for s in (self.srcc_std, self.plcc_std):
            if s is not None and s < 0:
                raise MetricUndefinedError("std must be non-negative")

    def to_dict(self) -> dict:
        return {"srcc": self.srcc, "plcc": self.plcc, "count": self.count,
                "srcc_std": self.srcc_std, "plcc_std": self.plcc_std,
                "repeats": self.repeats}


def aggregate_reports(reports) -> MetricsReport:
    """Mean +- std over repeated-split reports."""
    reports = list(reports)
    if not reports:
        raise MetricUndefinedError("no reports to aggregate")
    s = np.array([r.srcc for r in reports])
    p = np.array([r.plcc for r in reports])
    return MetricsReport(
        srcc=float(s.mean()), plcc=float(p.mean()),
        count=int(sum(r.count for r in reports)),
        srcc_std=float(s.std()), plcc_std=float(p.std()),
        repeats=len(reports))
