"""Prioritised SGD: score a candidate batch, train on the top few, reveal their labels."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .enn import EnnModel, enn_loss_grad, sample_index
from .evaluation import TestMetrics
from .numerics import AdamState, adam_init, adam_step
from .priority import PrioritySpec, score_inputs


class LabelAccessError(RuntimeError):
    """A hidden label was read without going through ``reveal``."""


class LabelStore:
    """Training inputs with access-controlled labels and budget accounting."""

    def __init__(self, x, y, strict: bool = True):
        self.x = np.asarray(x, dtype=np.float64)
        self.x.flags.writeable = False
        self.__labels = np.array(y, dtype=np.int64)
        if len(self.__labels) != len(self.x):
            raise ValueError("inputs and labels differ in length")
        self._revealed = np.zeros(len(self.x), dtype=bool)
        self.reveal_count = 0
        self.violations = 0
        self.strict = strict

    def __len__(self) -> int:
        return len(self.x)

    @property
    def labels(self):
        self.violations += 1
        if self.strict:
            raise LabelAccessError("labels may only be read through reveal()")
        return self.__labels.copy()

    @property
    def revealed(self) -> np.ndarray:
        return np.flatnonzero(self._revealed)

    def is_revealed(self, i: int) -> bool:
        return bool(self._revealed[i])

    def reveal(self, i: int) -> tuple[int, bool]:
        """Return label ``i``; the budget is charged only on first reveal."""
        if not 0 <= i < len(self.x):
            raise IndexError(f"index {i} outside 0..{len(self.x) - 1}")
        new = not self._revealed[i]
        if new:
            self._revealed[i] = True
            self.reveal_count += 1
        return int(self.__labels[i]), new

    def reveal_many(self, idx) -> tuple[np.ndarray, int]:
        labels, new = zip(*(self.reveal(int(i)) for i in idx)) if len(idx) else ((), ())
        return np.array(labels, dtype=np.int64), int(sum(new))


@dataclass(frozen=True)
class ActiveConfig:
    candidate_batch: int = 200        # N_B
    select_batch: int = 1             # n_b
    index_samples: int = 10           # n_Z for training (and scoring)
    steps: int = 1000                 # S
    l2: float = 0.0
    priority: PrioritySpec = PrioritySpec("variance")
    learning_rate: float = 1e-3
    b1: float = 0.9
    b2: float = 0.95
    eps: float = 1e-8
    clip_norm: float | None = 1.0
    eval_every: int = 10
    label_milestone: int = 10
    replay: bool = False
    record_wall_time: bool = False

    def __post_init__(self):
        if not 1 <= self.select_batch <= self.candidate_batch:
            raise ValueError("need 1 <= select_batch <= candidate_batch")
        if self.steps < 0 or self.index_samples < 1 or self.eval_every < 1:
            raise ValueError("steps >= 0, index_samples >= 1 and eval_every >= 1 required")
        if self.l2 < 0:
            raise ValueError("l2 must be nonnegative")

    def optimizer(self, size: int) -> AdamState:
        return adam_init(size, self.learning_rate, self.b1, self.b2, self.eps, self.clip_norm)


@dataclass(frozen=True)
class StepReport:
    step: int
    candidates: np.ndarray
    scores: np.ndarray
    selected: np.ndarray
    new_labels: int
    loss: float

    @property
    def mean_score(self) -> float:
        return float(np.mean(self.scores))


@dataclass(frozen=True)
class CurveRecord:
    step: int
    labels: int
    nll: float
    accuracy: float
    wall_ms: float = math.nan


CURVE_HEADER = ("step", "labels", "test_nll", "test_acc", "wall_ms")


@dataclass
class LearningCurve:
    records: list[CurveRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, step: int, labels: int, metrics: TestMetrics, wall_ms: float = math.nan):
        self.records.append(CurveRecord(step, labels, metrics.nll, metrics.accuracy, wall_ms))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CURVE_HEADER)
            for r in self.records:
                w.writerow([r.step, r.labels, repr(r.nll), repr(r.accuracy), repr(r.wall_ms)])

    @classmethod
    def from_csv(cls, path) -> "LearningCurve":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(rows[0]) != CURVE_HEADER:
            raise ValueError(f"{path}: not a learning-curve file")
        return cls([CurveRecord(int(r[0]), int(r[1]), float(r[2]), float(r[3]), float(r[4]))
                    for r in rows[1:]])


def sample_candidates(store: LabelStore, n: int, rng: np.random.Generator) -> np.ndarray:
    if n > len(store):
        raise ValueError(f"candidate batch {n} exceeds dataset size {len(store)}")
    return rng.choice(len(store), size=n, replace=False)


def select_top(candidates, scores, n: int, rng: np.random.Generator) -> np.ndarray:
    """The ``n`` highest-scoring candidates; exact ties are broken at random."""
    candidates = np.asarray(candidates)
    scores = np.asarray(scores, dtype=float)
    if candidates.shape != scores.shape:
        raise ValueError("candidates and scores must align")
    if n > len(candidates):
        raise ValueError("cannot select more candidates than offered")
    order = np.lexsort((rng.random(len(scores)), -scores))
    return candidates[order[:n]]


def train_step(model: EnnModel, store: LabelStore, config: ActiveConfig, opt: AdamState,
               rng: np.random.Generator, step: int = 0):
    """One loop body; returns ``(model, optimizer_state, report)``."""
    cand = sample_candidates(store, config.candidate_batch, rng)
    scores = score_inputs(model, store.x[cand], config.priority, rng)
    chosen = select_top(cand, scores, config.select_batch, rng)
    labels, new = store.reveal_many(chosen)
    batch = chosen
    if config.replay:
        seen = store.revealed
        batch = np.concatenate([chosen, np.setdiff1d(seen, chosen)])
        labels = np.concatenate([labels, store.reveal_many(batch[len(chosen):])[0]])
    zs = sample_index(model.reference, rng, config.index_samples)
    loss, grad = enn_loss_grad(model, store.x[batch], labels, zs, config.l2)
    theta, opt = adam_step(opt, model.theta, grad)
    report = StepReport(step, cand, scores, chosen, new, loss)
    return model.with_theta(theta), opt, report


def run_active(model: EnnModel, store: LabelStore, config: ActiveConfig,
               eval_hook: Callable[[EnnModel], TestMetrics], rng: np.random.Generator | int = 0,
               on_step: Callable[[StepReport], None] | None = None):
    """Run ``config.steps`` loop bodies; returns ``(curve, final_model)``.

    Evaluates at the start, every ``eval_every`` steps, whenever the revealed
    count crosses a multiple of ``label_milestone``, and at the end.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    opt = config.optimizer(model.theta.size)
    curve = LearningCurve()
    start = time.perf_counter()

    def record(s):
        wall = (time.perf_counter() - start) * 1e3 if config.record_wall_time else math.nan
        curve.append(s, store.reveal_count, eval_hook(model), wall)

    record(0)
    for s in range(1, config.steps + 1):
        before = store.reveal_count
        model, opt, report = train_step(model, store, config, opt, rng, s)
        if on_step is not None:
            on_step(report)
        milestone = config.label_milestone > 0 and (
            store.reveal_count // config.label_milestone > before // config.label_milestone)
        if s % config.eval_every == 0 or milestone or s == config.steps:
            record(s)
    return curve, model


def write_step_log(reports, path) -> None:
    """Newline-delimited JSON, one object per step."""
    with open(path, "w") as fh:
        for r in reports:
            fh.write(json.dumps({"step": r.step, "selected": r.selected.tolist(),
                                 "new_labels": r.new_labels, "mean_score": r.mean_score,
                                 "loss": r.loss}) + "\n")


def write_score_dump(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("step", "candidate", "score"))
        for r in reports:
            for i, sc in zip(r.candidates, r.scores):
                w.writerow((r.step, int(i), repr(float(sc))))


__all__ = ["ActiveConfig", "LabelAccessError", "LabelStore", "LearningCurve", "CurveRecord",
           "StepReport", "sample_candidates", "select_top", "train_step", "run_active",
           "write_step_log", "write_score_dump"]
