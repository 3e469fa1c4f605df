"""Synthetic classification problems drawn from a random ReLU MLP.

Inputs are standard normal; labels are categorical with probabilities
``softmax(h(x) / temperature)`` where ``h`` is a Glorot-initialised network
that stays fixed for the lifetime of the problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .numerics import MlpParams, init_mlp, log_softmax, mlp_forward


@dataclass(frozen=True)
class GenerativeModel:
    params: MlpParams
    temperature: float
    input_dim: int
    num_classes: int
    hidden: int
    seed: int


def make_model(seed: int, input_dim: int = 10, num_classes: int = 2, hidden: int = 50,
               temperature: float = 0.1, depth: int = 2,
               glorot: str = "uniform") -> GenerativeModel:
    if input_dim < 1 or num_classes < 2 or hidden < 1 or depth < 1:
        raise ValueError("need input_dim >= 1, num_classes >= 2, hidden >= 1, depth >= 1")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    sizes = (input_dim, *([hidden] * depth), num_classes)
    params = init_mlp(sizes, rng, glorot)
    for w, b in params:
        w.flags.writeable = False
        b.flags.writeable = False
    return GenerativeModel(params, float(temperature), input_dim, num_classes, hidden, seed)


def sample_input(model: GenerativeModel, rng: np.random.Generator, n: int | None = None):
    if n is None:
        return rng.standard_normal(model.input_dim)
    return rng.standard_normal((n, model.input_dim))


def label_log_probs(model: GenerativeModel, x) -> np.ndarray:
    return log_softmax(mlp_forward(model.params, x) / model.temperature)


def label_probs(model: GenerativeModel, x) -> np.ndarray:
    return np.exp(label_log_probs(model, x))


def sample_labels(model: GenerativeModel, x, rng: np.random.Generator) -> np.ndarray:
    p = np.atleast_2d(label_probs(model, x))
    u = rng.random(len(p))
    y = (u[:, None] >= np.cumsum(p, axis=1)).sum(axis=1)
    return np.minimum(y, model.num_classes - 1)


def sample_dataset(model: GenerativeModel, num_train: int = 200, num_test: int = 1000,
                   rng: np.random.Generator | int = 0) -> Dataset:
    """Independent train and test draws; each split uses its own input and label streams."""
    if num_train < 1 or num_test < 1:
        raise ValueError("dataset sizes must be positive")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(np.random.SeedSequence([model.seed, 1, int(rng)]))
    in_tr, lab_tr, in_te, lab_te = rng.spawn(4)
    x_train = sample_input(model, in_tr, num_train)
    x_test = sample_input(model, in_te, num_test)
    return Dataset(x_train, sample_labels(model, x_train, lab_tr),
                   x_test, sample_labels(model, x_test, lab_te), model.num_classes)


def bayes_oracle(model: GenerativeModel, x_test, y_test) -> tuple[float, float]:
    """Mean test log-loss of the true label distribution and its standard error."""
    logp = label_log_probs(model, x_test)
    losses = -logp[np.arange(len(y_test)), y_test]
    se = float(losses.std(ddof=1) / math.sqrt(len(losses))) if len(losses) > 1 else 0.0
    return float(losses.mean()), se
