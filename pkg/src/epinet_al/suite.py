"""Suite orchestration: every (agent, priority, seed) cell plus the baseline sweep.

Output layout under the suite directory::

    manifest.json
    problems.csv                       per-seed problem seed and oracle loss
    baseline/seed_XX.csv               best-in-hindsight curve per problem seed
    curves/<agent>__<priority>/seed_XX.csv
    report/efficiency.csv              labels-to-match per cell and seed
    report/efficiency_summary.csv      geometric means per cell
    report/summary.txt

Nothing in the tree depends on wall-clock time, so the same configuration
always produces the same bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import __version__
from .active import LabelStore, LearningCurve, run_active
from .baseline import BaselineCurve, run_baseline
from .config import ExperimentConfig
from .data import Dataset, read_dataset
from .enn import EnnModel, make_enn, sample_index
from .evaluation import efficiency_report, evaluate, labels_to_match
from .generator import bayes_oracle, make_model, sample_dataset


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from any sequence of printable parts."""
    blob = "\x1f".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big") >> 1


def cell_name(agent: str, priority: str) -> str:
    return f"{agent}__{priority}"


def curve_path(root, agent: str, priority: str, k: int) -> Path:
    return Path(root) / "curves" / cell_name(agent, priority) / f"seed_{k:02d}.csv"


def baseline_path(root, k: int) -> Path:
    return Path(root) / "baseline" / f"seed_{k:02d}.csv"


# ---- problems and agents ----------------------------------------------------

@dataclass(frozen=True)
class Problem:
    index: int
    seed: int
    data: Dataset
    oracle_nll: float = math.nan
    oracle_se: float = math.nan


def load_problem(cfg: ExperimentConfig, k: int) -> Problem:
    p = cfg.problem
    seed = derive_seed(cfg.seed, "problem", k)
    if p.kind == "features":
        return Problem(k, seed, read_dataset(p.path))
    gm = make_model(seed, p.input_dim, p.num_classes, p.hidden, p.temperature, p.depth)
    data = sample_dataset(gm, p.num_train, p.num_test, rng=0)
    nll, se = bayes_oracle(gm, data.x_test, data.y_test)
    return Problem(k, seed, data, nll, se)


def build_agent(cfg: ExperimentConfig, agent: str, data: Dataset, seed: int) -> EnnModel:
    a = cfg.agents[agent]
    sizes = (data.width, *a.hidden, data.num_classes)
    return make_enn(a.arch, sizes, seed, ensemble_size=a.ensemble_size,
                    dropout_rate=a.dropout_rate, index_dim=a.index_dim,
                    epinet_hidden=a.epinet_hidden, prior_scale=a.prior_scale)


def eval_indices(model: EnnModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Exhaustive for discrete references, otherwise ``n`` fresh samples."""
    if model.reference.kind == "discrete":
        return np.arange(model.reference.size)
    return sample_index(model.reference, rng, n)


def run_cell(cfg: ExperimentConfig, problem: Problem, agent: str, priority: str,
             on_step=None) -> LearningCurve:
    seed = derive_seed(cfg.seed, agent, priority, problem.index)
    init_ss, run_ss, eval_ss = np.random.SeedSequence(seed).spawn(3)
    model = build_agent(cfg, agent, problem.data, int(init_ss.generate_state(1)[0]))
    zs = eval_indices(model, cfg.active.eval_index_samples, np.random.default_rng(eval_ss))
    data = problem.data
    store = LabelStore(data.x_train, data.y_train)
    curve, _ = run_active(model, store, cfg.active_config(agent, priority),
                          lambda m: evaluate(m, data.x_test, data.y_test, zs),
                          rng=np.random.default_rng(run_ss), on_step=on_step)
    if store.violations:
        raise RuntimeError(f"{store.violations} unauthorised label reads")
    return curve


def run_problem_baseline(cfg: ExperimentConfig, problem: Problem) -> BaselineCurve:
    return run_baseline(problem.data, cfg.sweep_grid(), derive_seed(cfg.seed, "baseline", problem.index))


# ---- suite ------------------------------------------------------------------

@dataclass
class SuiteResult:
    root: Path
    failures: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def _job(task):
    kind, cfg, k, agent, priority, root = task
    try:
        problem = load_problem(cfg, k)
        if kind == "baseline":
            run_problem_baseline(cfg, problem).to_csv(baseline_path(root, k))
        else:
            run_cell(cfg, problem, agent, priority).to_csv(curve_path(root, agent, priority, k))
        return None
    except Exception as exc:                                  # recorded, suite continues
        return {"kind": kind, "agent": agent, "priority": priority, "seed": k,
                "error": f"{type(exc).__name__}: {exc}",
                "trace": traceback.format_exc(limit=3)}


def _select_cells(cfg: ExperimentConfig, cells: Iterable[str] | None):
    allc = cfg.cells()
    if cells is None:
        return allc
    wanted = set(cells)
    chosen = [c for c in allc if cell_name(*c) in wanted or c[0] in wanted]
    unknown = wanted - {cell_name(*c) for c in allc} - {c[0] for c in allc}
    if unknown:
        raise ValueError(f"unknown cells {sorted(unknown)}")
    return chosen


def write_manifest(cfg: ExperimentConfig, root: Path, cells, seeds, failures) -> None:
    manifest = {
        "version": __version__,
        "numpy": np.__version__,
        "config_hash": cfg.config_hash(),
        "config": cfg.canonical(),
        "seeds": list(seeds),
        "problem_seeds": {str(k): derive_seed(cfg.seed, "problem", k) for k in seeds},
        "cells": {cell_name(a, p): {str(k): derive_seed(cfg.seed, a, p, k) for k in seeds}
                  for a, p in cells},
        "failures": [{k: v for k, v in f.items() if k != "trace"} for f in failures],
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def write_problems(cfg: ExperimentConfig, root: Path, seeds) -> None:
    with open(root / "problems.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("seed", "problem_seed", "num_train", "num_test", "oracle_nll", "oracle_se"))
        for k in seeds:
            p = load_problem(cfg, k)
            w.writerow((k, p.seed, p.data.num_train, p.data.num_test,
                        repr(p.oracle_nll), repr(p.oracle_se)))


def run_suite(cfg: ExperimentConfig, root=None, *, seeds: Iterable[int] | None = None,
              cells: Iterable[str] | None = None, baseline: bool = True, jobs: int = 1,
              progress=None) -> SuiteResult:
    """Run every selected cell; per-cell failures are collected rather than raised."""
    root = Path(root if root is not None else cfg.output)
    seeds = list(range(cfg.seeds)) if seeds is None else list(seeds)
    chosen = _select_cells(cfg, cells)
    (root / "baseline").mkdir(parents=True, exist_ok=True)
    for a, p in chosen:
        (root / "curves" / cell_name(a, p)).mkdir(parents=True, exist_ok=True)
    tasks = [("baseline", cfg, k, None, None, root) for k in seeds] if baseline else []
    tasks += [("cell", cfg, k, a, p, root) for a, p in chosen for k in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            outcomes = list(pool.map(_job, tasks))
    else:
        outcomes = []
        for t in tasks:
            outcomes.append(_job(t))
            if progress is not None:
                progress(t, outcomes[-1])
    failures = [o for o in outcomes if o is not None]
    write_problems(cfg, root, seeds)
    write_manifest(cfg, root, chosen, seeds, failures)
    result = SuiteResult(root, failures)
    if baseline:
        write_report(root, cfg.match_metric)
    return result


# ---- reading a suite back ---------------------------------------------------

def read_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"{root}: no manifest.json; not a suite directory")
    return json.loads(path.read_text())


def load_curves(root) -> dict[str, dict[int, LearningCurve]]:
    """``{cell: {seed: curve}}`` for every curve file present."""
    manifest = read_manifest(root)
    out = {}
    for cell in manifest["cells"]:
        out[cell] = {}
        for k in manifest["seeds"]:
            path = Path(root) / "curves" / cell / f"seed_{k:02d}.csv"
            if path.exists():
                out[cell][k] = LearningCurve.from_csv(path)
    return out


def load_baselines(root) -> dict[int, BaselineCurve]:
    manifest = read_manifest(root)
    return {k: BaselineCurve.from_csv(baseline_path(root, k)) for k in manifest["seeds"]
            if baseline_path(root, k).exists()}


def load_oracles(root) -> dict[int, tuple[float, float]]:
    with open(Path(root) / "problems.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {int(r["seed"]): (float(r["oracle_nll"]), float(r["oracle_se"])) for r in rows}


# ---- efficiency report ------------------------------------------------------

def baseline_targets(baselines: dict[int, BaselineCurve], metric: str) -> dict[int, float]:
    attr = "mean_best_nll" if metric == "nll" else "mean_best_acc"
    return {k: getattr(b.full, attr) for k, b in baselines.items()}


def efficiency_tables(root, metric: str = "nll"):
    """Per-cell ``EfficiencyReport`` and the per-seed matches behind it."""
    curves, baselines = load_curves(root), load_baselines(root)
    targets = baseline_targets(baselines, metric)
    reports = {}
    for cell, per_seed in curves.items():
        seeds = sorted(k for k in per_seed if k in targets)
        if not seeds:
            continue
        matches = [labels_to_match(per_seed[k], targets[k], metric) for k in seeds]
        full = baselines[seeds[0]].full.labels
        reports[cell] = (seeds, efficiency_report(cell, matches, full))
    return reports


def _fmt(x) -> str:
    return "NA" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(x)


def write_report(root, metric: str = "nll") -> dict:
    root = Path(root)
    (root / "report").mkdir(exist_ok=True)
    reports = efficiency_tables(root, metric)
    with open(root / "report" / "efficiency.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("cell", "seed", "labels_to_match", "ratio"))
        for cell, (seeds, rep) in reports.items():
            for k, m, r in zip(seeds, rep.labels, rep.ratios):
                w.writerow((cell, k, "inf" if m is None else m, repr(r)))
    lines = [f"labels-to-match ratio vs full-data baseline ({metric})",
             f"{'cell':<24}{'geo_mean':>10}{'lower':>10}{'upper':>10}{'bounded':>9}{'unbounded':>11}"]
    with open(root / "report" / "efficiency_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("cell", "geo_mean", "lower", "upper", "n_bounded", "n_unbounded"))
        for cell, (_, rep) in reports.items():
            g = rep.geo
            n_b = len(rep.labels) - rep.n_unbounded
            vals = (g.mean, g.lower, g.upper) if g else (math.nan,) * 3
            w.writerow((cell, *(_fmt(v) for v in vals), n_b, rep.n_unbounded))
            shown = "".join(f"{v:>10.3f}" if g else f"{'NA':>10}" for v in vals)
            lines.append(f"{cell:<24}{shown}{n_b:>9}{rep.n_unbounded:>11}")
    (root / "report" / "summary.txt").write_text("\n".join(lines) + "\n")
    return reports
