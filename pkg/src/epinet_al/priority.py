"""Priority functions scoring how useful a label would be.

All scores are computed from a stack of conditional class probabilities
``probs`` of shape ``(S, n, C)``: one row per epistemic index sample.  The
marginal distribution is the mean over the sample axis, and both terms of the
epistemic scores come from that same stack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .enn import EnnModel, sample_index, sample_probs

PRIORITIES = ("uniform", "entropy", "margin", "bald", "variance")
EPISTEMIC = frozenset({"bald", "variance"})
_LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class PrioritySpec:
    kind: str
    n_index_samples: int = 10

    def __post_init__(self):
        if self.kind not in PRIORITIES:
            raise ValueError(f"unknown priority {self.kind!r}; expected one of {PRIORITIES}")
        if self.n_index_samples < 1:
            raise ValueError("n_index_samples must be >= 1")


@dataclass(frozen=True)
class PriorityScore:
    value: float
    marginal: np.ndarray | None = None
    samples: np.ndarray | None = None


def entropy(p: np.ndarray) -> np.ndarray:
    """Shannon entropy in nats along the last axis, with 0 log 0 = 0."""
    return -np.sum(p * np.log(np.maximum(p, _LOG_FLOOR)), axis=-1)


def entropy_scores(probs: np.ndarray) -> np.ndarray:
    return entropy(probs.mean(axis=0))


def margin_scores(probs: np.ndarray) -> np.ndarray:
    if probs.shape[-1] < 2:
        raise ValueError("margin needs at least two classes")
    top2 = np.sort(probs.mean(axis=0), axis=-1)[..., -2:]
    return top2[..., 0] - top2[..., 1]


def bald_scores(probs: np.ndarray) -> np.ndarray:
    if probs.shape[0] == 1:
        return np.zeros(probs.shape[1:-1])
    score = entropy(probs.mean(axis=0)) - entropy(probs).mean(axis=0)
    # Jensen guarantees >= 0; clip float round-off
    return np.maximum(score, 0.0)


def variance_scores(probs: np.ndarray) -> np.ndarray:
    if probs.shape[0] == 1:
        return np.zeros(probs.shape[1:-1])
    dev = probs - probs.mean(axis=0)
    return np.sum(np.mean(dev * dev, axis=0), axis=-1)


_SCORERS = {
    "uniform": lambda probs: np.zeros(probs.shape[1:-1]),
    "entropy": entropy_scores,
    "margin": margin_scores,
    "bald": bald_scores,
    "variance": variance_scores,
}


def scores_from_probs(kind: str, probs: np.ndarray) -> np.ndarray:
    return _SCORERS[kind](probs)


def score_inputs(model: EnnModel, x, spec: PrioritySpec, rng: np.random.Generator,
                 zs: np.ndarray | None = None) -> np.ndarray:
    """Scores for every row of ``x`` using one index set shared across the batch."""
    x = np.atleast_2d(x)
    if spec.kind == "uniform":
        return np.zeros(len(x))
    if zs is None:
        zs = sample_index(model.reference, rng, spec.n_index_samples)
    return scores_from_probs(spec.kind, sample_probs(model, x, zs))


def _score_one(kind: str, model: EnnModel, x, zs) -> PriorityScore:
    if len(zs) == 0:
        raise ValueError("need at least one index sample")
    probs = sample_probs(model, np.atleast_2d(x), zs)
    return PriorityScore(float(scores_from_probs(kind, probs)[0]), probs.mean(axis=0)[0],
                         probs[:, 0])


def g_uniform(model: EnnModel, x) -> PriorityScore:
    return PriorityScore(0.0)


def g_entropy(model: EnnModel, x, zs) -> PriorityScore:
    return _score_one("entropy", model, x, zs)


def g_margin(model: EnnModel, x, zs) -> PriorityScore:
    return _score_one("margin", model, x, zs)


def g_bald(model: EnnModel, x, zs) -> PriorityScore:
    return _score_one("bald", model, x, zs)


def g_variance(model: EnnModel, x, zs) -> PriorityScore:
    return _score_one("variance", model, x, zs)
