"""Render figure data files to PNG with matplotlib (Agg backend)."""

from __future__ import annotations

import math
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .plotdata import CURVE_FIGURES, read_plot_data  # noqa: E402

TITLES = {
    "fig2": "Epinet with variance priority vs tuned baseline",
    "fig3a": "Epistemic vs marginal priorities",
    "fig3b": "Epinet vs other ENNs",
    "fig4": "Epinet priority ablation",
    "fig6": "Labels to match baseline (geometric mean)",
    "fig7": "Labels to match baseline per seed",
}


def _f(s: str) -> float:
    return math.nan if s in ("NA", "") else float(s)


def _curves(ax, rows, metric_label):
    series = defaultdict(list)
    for r in rows:
        series[r["series"]].append((int(r["labels"]), _f(r["mean"]), _f(r["se"])))
    for name, pts in series.items():
        x, m, s = map(np.array, zip(*sorted(pts)))
        if name == "baseline":
            ax.errorbar(x, m, yerr=s, fmt="k--o", ms=3, lw=1, label=name)
            full = m[np.argmax(x)]
            if math.isfinite(full):
                ax.axhline(full, color="k", ls=":", lw=0.8)
            continue
        # NaN entries break the line rather than being bridged
        line, = ax.plot(x, m, label=name)
        ax.fill_between(x, m - s, m + s, color=line.get_color(), alpha=0.2)
    ax.set_xlabel("labels revealed")
    ax.set_ylabel(metric_label)
    ax.legend(fontsize=8)


def _bars(ax, rows):
    names = [r["series"] for r in rows]
    g = np.array([_f(r["geo_mean"]) for r in rows])
    lo = np.array([_f(r["lower"]) for r in rows])
    hi = np.array([_f(r["upper"]) for r in rows])
    pos = np.arange(len(rows))
    ax.bar(pos, np.nan_to_num(g), yerr=[np.nan_to_num(g - lo), np.nan_to_num(hi - g)], capsize=3)
    for p, r in zip(pos, rows):
        if int(r["n_unbounded"]):
            ax.annotate(f"{r['n_unbounded']} off chart", (p, 0.02), ha="center", fontsize=7,
                        rotation=90)
    ax.axhline(1.0, color="k", ls=":", lw=0.8)
    ax.set_xticks(pos, names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("labels / full-data labels")


def _scatter(ax, rows):
    names = sorted({r["series"] for r in rows})
    for i, name in enumerate(names):
        vals = [_f(r["ratio"]) for r in rows if r["series"] == name]
        finite = [v for v in vals if math.isfinite(v)]
        ax.scatter([i] * len(finite), finite, s=12)
        n_inf = len(vals) - len(finite)
        if n_inf:
            ax.annotate(f"+{n_inf} inf", (i, 1.02), ha="center", fontsize=7)
    ax.axhline(1.0, color="k", ls=":", lw=0.8)
    ax.set_xticks(range(len(names)), names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("labels / full-data labels")


def render(data_path, out_path=None, figure: str | None = None, metric: str = "nll") -> Path:
    data_path = Path(data_path)
    figure = figure or data_path.stem
    _, rows = read_plot_data(data_path)
    out_path = Path(out_path) if out_path else data_path.with_suffix(".png")
    fig, ax = plt.subplots(figsize=(6, 4))
    if figure in CURVE_FIGURES:
        _curves(ax, rows, "test log-loss" if metric == "nll" else "test accuracy")
    elif figure == "fig6":
        _bars(ax, rows)
    else:
        _scatter(ax, rows)
    ax.set_title(TITLES.get(figure, figure), fontsize=10)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
