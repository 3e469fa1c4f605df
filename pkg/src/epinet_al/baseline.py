"""Non-active supervised baseline tuned per data fraction in hindsight.

For every fraction of the training set and every seed, a fresh subsample is
trained with plain minibatch Adam over a grid of batch sizes, learning rates
and L2 weights.  The test set is scored along the way and the best step of
the best cell is kept, giving an optimistic reference curve.

All (learning rate, L2) cells sharing a batch size train as one stacked array
of networks with a common initialisation and minibatch order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset
from .evaluation import mean_se
from .numerics import (adam_init, adam_step, flatten, init_mlp, log_softmax, mlp_apply,
                       mlp_backward,
                       mlp_forward, param_shapes, xent_logit_grad)

DEFAULT_FRACTIONS = (0.01, 0.03, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
DEFAULT_BATCH_SIZES = (4, 16, 64)
DEFAULT_LEARNING_RATES = (1e-6, 3e-6, 1e-5, 3e-5, 1e-4, 3e-4)
DEFAULT_L2_WEIGHTS = (0.0, 1e-3, 1e-2, 1e-1, 1.0)


@dataclass(frozen=True)
class SweepGrid:
    fractions: tuple = DEFAULT_FRACTIONS
    batch_sizes: tuple = DEFAULT_BATCH_SIZES
    learning_rates: tuple = DEFAULT_LEARNING_RATES
    l2_weights: tuple = DEFAULT_L2_WEIGHTS
    epochs: int = 10
    seeds: int = 3
    hidden: tuple = (50, 50)
    b1: float = 0.9
    b2: float = 0.95
    eps: float = 1e-8
    clip_norm: float | None = 1.0

    def __post_init__(self):
        if not (self.fractions and self.batch_sizes and self.learning_rates and self.l2_weights):
            raise ValueError("sweep grids must be nonempty")
        if any(not 0 < f <= 1 for f in self.fractions):
            raise ValueError("fractions must lie in (0, 1]")
        if self.epochs < 0 or self.seeds < 1:
            raise ValueError("epochs >= 0 and seeds >= 1 required")


def fraction_size(psi: float, n: int) -> int:
    return max(1, math.ceil(psi * n - 1e-9))


def subsample(data: Dataset, psi: float, rng: np.random.Generator) -> Dataset:
    if not 0 < psi <= 1:
        raise ValueError(f"fraction {psi} outside (0, 1]")
    idx = rng.choice(data.num_train, size=fraction_size(psi, data.num_train), replace=False)
    return data.subset(idx)


@dataclass
class Trace:
    steps: list[int] = field(default_factory=list)
    nll: list[np.ndarray] = field(default_factory=list)       # each (M,)
    accuracy: list[np.ndarray] = field(default_factory=list)

    def arrays(self):
        return np.array(self.steps), np.array(self.nll), np.array(self.accuracy)


def _stack_views(flat: np.ndarray, shapes):
    m = flat.shape[0]
    views, pos = [], 0
    for shape in shapes:
        n = math.prod(shape)
        if len(shape) == 1:
            views.append(flat[:, pos:pos + n].reshape(m, 1, n))
        else:
            views.append(flat[:, pos:pos + n].reshape(m, *shape))
        pos += n
    return [(views[i], views[i + 1]) for i in range(0, len(views), 2)]


def _stack_eval(layers, x, y):
    logp = log_softmax(mlp_apply(layers, x))            # (M, n, C)
    picked = np.take_along_axis(logp, y[None, :, None], axis=2)[..., 0]
    return -picked.mean(axis=1), (logp.argmax(axis=2) == y).mean(axis=1)


def train_stack(data: Dataset, sizes: Sequence[int], learning_rates, l2_weights,
                batch_size: int, epochs: int, seed: int, grid: SweepGrid = SweepGrid()) -> Trace:
    """Train ``len(learning_rates)`` networks side by side; returns the test trace.

    Evaluation happens at initialisation, every ``ceil(steps_per_epoch / 4)``
    steps and at every epoch boundary.
    """
    lrs = np.asarray(learning_rates, dtype=float)[:, None]
    l2 = np.asarray(l2_weights, dtype=float)[:, None]
    if lrs.shape != l2.shape:
        raise ValueError("learning_rates and l2_weights must align")
    m = len(lrs)
    rng = np.random.default_rng(np.random.SeedSequence([seed, batch_size]))
    init = init_mlp(sizes, rng)
    shapes = param_shapes(init)
    theta = np.tile(flatten(init), (m, 1))
    opt = adam_init(theta.shape, lrs, grid.b1, grid.b2, grid.eps, grid.clip_norm)
    n = data.num_train
    steps_per_epoch = math.ceil(n / batch_size)
    cadence = math.ceil(steps_per_epoch / 4)
    trace = Trace()

    def record(s):
        nll, acc = _stack_eval(_stack_views(theta, shapes), data.x_test, data.y_test)
        trace.steps.append(s)
        trace.nll.append(nll)
        trace.accuracy.append(acc)

    record(0)
    step = 0
    for _ in range(epochs):
        perm = rng.permutation(n)
        for k in range(steps_per_epoch):
            idx = perm[k * batch_size:(k + 1) * batch_size]
            layers = _stack_views(theta, shapes)
            logits, cache = mlp_forward(layers, data.x_train[idx], return_cache=True)
            upstream, _ = xent_logit_grad(logits, data.y_train[idx])
            grads = mlp_backward(layers, None, upstream, cache=cache)
            grad = np.concatenate([a.reshape(m, -1) for g in grads for a in g], axis=1)
            grad += (2.0 * len(idx)) * l2 * theta
            theta, opt = adam_step(opt, theta, grad)
            step += 1
            if (k + 1) % cadence == 0 or k + 1 == steps_per_epoch:
                record(step)
    return trace


def supervised_train_eval(data: Dataset, sizes: Sequence[int], batch_size: int, lr: float,
                          l2: float, epochs: int, seed: int = 0,
                          grid: SweepGrid = SweepGrid()) -> list[tuple[int, float, float]]:
    """Single-configuration run; ``(step, test_nll, test_acc)`` at every evaluation."""
    trace = train_stack(data, sizes, [lr], [l2], batch_size, epochs, seed, grid)
    return [(s, float(a[0]), float(b[0])) for s, a, b in zip(trace.steps, trace.nll, trace.accuracy)]


@dataclass(frozen=True)
class BaselinePoint:
    fraction: float
    labels: int
    mean_best_nll: float
    se_nll: float
    mean_best_acc: float
    se_acc: float
    per_seed_nll: tuple = ()
    per_seed_acc: tuple = ()


BASELINE_HEADER = ("labels", "mean_best_nll", "se_nll", "mean_best_acc", "se_acc")


@dataclass
class BaselineCurve:
    points: list[BaselinePoint] = field(default_factory=list)

    @property
    def full(self) -> BaselinePoint:
        return max(self.points, key=lambda p: p.labels)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(BASELINE_HEADER)
            for p in self.points:
                w.writerow([p.labels, repr(p.mean_best_nll), repr(p.se_nll),
                            repr(p.mean_best_acc), repr(p.se_acc)])

    @classmethod
    def from_csv(cls, path) -> "BaselineCurve":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(rows[0]) != BASELINE_HEADER:
            raise ValueError(f"{path}: not a baseline-curve file")
        return cls([BaselinePoint(math.nan, int(r[0]), *map(float, r[1:5])) for r in rows[1:]])


def run_baseline(data: Dataset, grid: SweepGrid = SweepGrid(), seed: int = 0) -> BaselineCurve:
    """Best-in-hindsight test metrics per fraction, averaged over ``grid.seeds`` seeds."""
    sizes = (data.width, *grid.hidden, data.num_classes)
    lr_cells, l2_cells = zip(*[(lr, l2) for lr in grid.learning_rates for l2 in grid.l2_weights])
    points = []
    for f_idx, psi in enumerate(grid.fractions):
        best_nll, best_acc = [], []
        for s in range(grid.seeds):
            cell_seed = int(np.random.SeedSequence([seed, f_idx, s]).generate_state(1)[0])
            sub = subsample(data, psi, np.random.default_rng(cell_seed))
            nll, acc = math.inf, -math.inf
            for bs in grid.batch_sizes:
                trace = train_stack(sub, sizes, lr_cells, l2_cells, bs, grid.epochs, cell_seed, grid)
                _, tn, ta = trace.arrays()
                nll = min(nll, float(tn.min()))
                acc = max(acc, float(ta.max()))
            best_nll.append(nll)
            best_acc.append(acc)
        mn, sn = mean_se(best_nll)
        ma, sa = mean_se(best_acc)
        points.append(BaselinePoint(psi, fraction_size(psi, data.num_train), float(mn), float(sn),
                                    float(ma), float(sa), tuple(best_nll), tuple(best_acc)))
    return BaselineCurve(points)
