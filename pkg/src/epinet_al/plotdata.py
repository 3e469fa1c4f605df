"""Seed-aggregated figure data written as plain CSV.

Curve figures hold one row per (series, label budget) with the mean and
standard error over seeds of the best metric reached within that budget.
Budgets with no contributing seed are written as ``NA`` with ``n = 0``; they
are gaps, never interpolated.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .evaluation import envelope, mean_se
from .suite import efficiency_tables, load_baselines, load_curves, read_manifest

CURVE_FIGURES = {
    "fig2": [("epinet", "variance")],
    "fig3a": [("mlp", "entropy"), ("mlp", "margin"), ("epinet", "variance")],
    "fig3b": [("ensemble", "variance"), ("dropout", "variance"), ("epinet", "variance")],
    "fig4": [("epinet", p) for p in ("uniform", "entropy", "margin", "bald", "variance")],
}
RATIO_FIGURES = ("fig6", "fig7")
FIGURES = (*CURVE_FIGURES, *RATIO_FIGURES)
CURVE_HEADER = ("series", "labels", "mean", "se", "n")


def resolve_cell(config: dict, arch: str, priority: str) -> str:
    """Suite cell name for the first agent of ``arch`` running ``priority``."""
    for name, agent in config["agents"].items():
        if agent["arch"] == arch and priority in agent["priorities"]:
            return f"{name}__{priority}"
    return f"{arch}__{priority}"


def aggregate(curves, budgets, metric: str = "nll"):
    """Mean, SE and seed count of per-seed envelopes; NaN where no seed contributes."""
    budgets = np.asarray(budgets)
    if not curves:
        nan = np.full(len(budgets), np.nan)
        return nan, nan.copy(), np.zeros(len(budgets), dtype=int)
    env = np.array([envelope(c, budgets, metric) for c in curves])
    n = np.sum(~np.isnan(env), axis=0)
    mean = np.full(len(budgets), np.nan)
    se = np.full(len(budgets), np.nan)
    for j in np.flatnonzero(n):
        col = env[~np.isnan(env[:, j]), j]
        m, s = mean_se(col)
        mean[j], se[j] = m, s
    return mean, se, n


def _num(x) -> str:
    return "NA" if x is None or not math.isfinite(x) else repr(float(x))


def _metric_attr(metric: str) -> str:
    return "mean_best_nll" if metric == "nll" else "mean_best_acc"


def curve_rows(root, figure: str, metric: str | None = None):
    manifest = read_manifest(root)
    cfg = manifest["config"]
    metric = metric or cfg["match_metric"]
    step = cfg["active"]["label_milestone"] or 10
    curves = load_curves(root)
    baselines = load_baselines(root)
    n_train = max((b.full.labels for b in baselines.values()), default=0)
    if n_train == 0:
        n_train = cfg["problem"]["num_train"]
    budgets = np.arange(0, n_train + 1, step)
    rows = []
    for arch, prio in CURVE_FIGURES[figure]:
        cell = resolve_cell(cfg, arch, prio)
        per_seed = curves.get(cell, {})
        mean, se, n = aggregate(list(per_seed.values()), budgets, metric)
        rows += [(cell, int(b), _num(m), _num(s), int(c)) for b, m, s, c in zip(budgets, mean, se, n)]
    # baseline: one point per data fraction
    attr = _metric_attr(metric)
    by_labels: dict[int, list[float]] = {}
    for b in baselines.values():
        for p in b.points:
            by_labels.setdefault(p.labels, []).append(getattr(p, attr))
    for labels in sorted(by_labels):
        m, s = mean_se(by_labels[labels])
        rows.append(("baseline", labels, _num(m), _num(s), len(by_labels[labels])))
    if not baselines:
        rows.append(("baseline", n_train, "NA", "NA", 0))
    return CURVE_HEADER, rows


def ratio_rows(root, figure: str, metric: str | None = None):
    metric = metric or read_manifest(root)["config"]["match_metric"]
    reports = efficiency_tables(root, metric)
    if figure == "fig6":
        header = ("series", "geo_mean", "lower", "upper", "n_bounded", "n_unbounded")
        rows = []
        for cell, (_, rep) in reports.items():
            g = rep.geo
            vals = (g.mean, g.lower, g.upper) if g else (math.nan,) * 3
            rows.append((cell, *map(_num, vals), len(rep.labels) - rep.n_unbounded, rep.n_unbounded))
        return header, rows
    header = ("series", "seed", "labels_to_match", "ratio")
    rows = [(cell, k, "inf" if m is None else m, "inf" if math.isinf(r) else repr(r))
            for cell, (seeds, rep) in reports.items()
            for k, m, r in zip(seeds, rep.labels, rep.ratios)]
    return header, rows


def emit_plot_data(root, figure: str, out=None, metric: str | None = None) -> Path:
    """Write the data file for ``figure`` and return its path."""
    if figure not in FIGURES:
        raise ValueError(f"unknown figure {figure!r}; choose from {FIGURES}")
    if figure in CURVE_FIGURES:
        header, rows = curve_rows(root, figure, metric)
    else:
        header, rows = ratio_rows(root, figure, metric)
    out = Path(out) if out is not None else Path(root) / "plotdata" / f"{figure}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return out


def read_plot_data(path) -> tuple[tuple, list[dict]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return tuple(reader.fieldnames or ()), list(reader)


__all__ = ["FIGURES", "CURVE_FIGURES", "aggregate", "emit_plot_data", "read_plot_data", "resolve_cell"]
