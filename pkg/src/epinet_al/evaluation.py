"""Held-out metrics, labels-to-match and geometric-mean efficiency ratios."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .enn import EnnModel, sample_probs

METRICS = ("nll", "accuracy")


@dataclass(frozen=True)
class TestMetrics:
    __test__ = False    # not a pytest class

    nll: float          # mean negative log-likelihood (nats per example)
    accuracy: float
    n_test: int

    @property
    def log_likelihood(self) -> float:
        return -self.nll


def evaluate(model: EnnModel, x, y, zs, chunk: int = 250) -> TestMetrics:
    """Score predictions from the index-averaged class probabilities."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("test set is empty")
    if len(zs) == 0:
        raise ValueError("need at least one index sample")
    ll = 0.0
    correct = 0
    for lo in range(0, len(y), chunk):
        p = sample_probs(model, x[lo:lo + chunk], zs).mean(axis=0)
        yy = y[lo:lo + chunk]
        ll += float(np.sum(np.log(np.maximum(p[np.arange(len(yy)), yy], 1e-300))))
        correct += int(np.sum(p.argmax(axis=1) == yy))
    return TestMetrics(-ll / len(y), correct / len(y), len(y))


def _better(value: float, target: float, metric: str) -> bool:
    if metric == "nll":
        return value <= target
    if metric == "accuracy":
        return value >= target
    raise ValueError(f"unknown metric {metric!r}")


def labels_to_match(curve, target: float, metric: str = "nll") -> int | None:
    """Fewest labels at which the curve reaches ``target``; None if it never does.

    ``curve`` is a LearningCurve or any iterable of records with ``labels``
    and the metric attribute (``nll`` / ``accuracy``).
    """
    records = getattr(curve, "records", curve)
    best = None
    for rec in records:
        if _better(getattr(rec, metric), target, metric):
            if best is None or rec.labels < best:
                best = rec.labels
    return best


def envelope(curve, budgets: Sequence[int], metric: str = "nll") -> np.ndarray:
    """Best metric reached with at most ``L`` labels, for each budget ``L``.

    Budgets below the first evaluated label count map to NaN.
    """
    records = getattr(curve, "records", curve)
    labels = np.array([r.labels for r in records])
    vals = np.array([getattr(r, metric) for r in records], dtype=float)
    order = np.argsort(labels, kind="stable")
    labels, vals = labels[order], vals[order]
    run = np.minimum.accumulate(vals) if metric == "nll" else np.maximum.accumulate(vals)
    pos = np.searchsorted(labels, np.asarray(budgets), side="right") - 1
    out = np.where(pos >= 0, run[np.maximum(pos, 0)], np.nan)
    return out


def mean_se(values: np.ndarray, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error (ddof=1) along ``axis``; SE is 0 for a single value."""
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    mean = values.mean(axis=axis)
    if n < 2:
        return mean, np.zeros_like(mean)
    return mean, values.std(axis=axis, ddof=1) / math.sqrt(n)


@dataclass(frozen=True)
class GeoMean:
    mean: float
    log_se: float

    @property
    def lower(self) -> float:
        return self.mean * math.exp(-self.log_se)

    @property
    def upper(self) -> float:
        return self.mean * math.exp(self.log_se)


def geometric_mean_ratio(ratios: Iterable[float]) -> GeoMean:
    """``exp(mean(log r))`` with a one-SE multiplicative band from the log scale."""
    r = np.asarray(list(ratios), dtype=float)
    if r.size == 0:
        raise ValueError("need at least one ratio")
    if np.any(~np.isfinite(r)) or np.any(r <= 0):
        raise ValueError("ratios must be positive and finite; report unbounded ones separately")
    logs = np.log(r)
    _, se = mean_se(logs)
    return GeoMean(float(np.exp(logs.mean())), float(se))


@dataclass(frozen=True)
class EfficiencyReport:
    name: str
    labels: tuple                       # labels-to-match per seed/task (None = unbounded)
    ratios: tuple                       # labels / full-data labels (inf = unbounded)
    geo: GeoMean | None                 # over bounded ratios only
    n_unbounded: int


def efficiency_report(name: str, matches: Sequence[int | None], full_labels: int) -> EfficiencyReport:
    if full_labels <= 0:
        raise ValueError("full-data label count must be positive")
    # a match at zero labels is floored to one label so the log stays finite
    ratios = tuple(math.inf if m is None else max(m, 1) / full_labels for m in matches)
    bounded = [r for r in ratios if math.isfinite(r)]
    geo = geometric_mean_ratio(bounded) if bounded else None
    return EfficiencyReport(name, tuple(matches), ratios, geo,
                            sum(1 for m in matches if m is None))
