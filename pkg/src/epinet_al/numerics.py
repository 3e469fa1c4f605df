"""Dense numerical kernel: MLPs with analytic gradients, softmax cross-entropy,
Adam with global-norm clipping, Glorot initialisation and finite differences.

Weights are stored as ``(fan_in, fan_out)`` so a forward pass is ``x @ W + b``.
Every routine broadcasts over leading axes, which lets the same code run a
single network, a stack of networks (ensemble members, baseline sweeps) or a
batch of epistemic indices.  Stacked weights have shape ``(K, fan_in, fan_out)``
and stacked biases ``(K, 1, fan_out)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

Layer = tuple[np.ndarray, np.ndarray]
MlpParams = list[Layer]


class DimensionError(ValueError):
    pass


class LabelError(ValueError):
    pass


class NumericError(ValueError):
    pass


def glorot_init(fan_in: int, fan_out: int, rng: np.random.Generator,
                variant: str = "uniform", stack: int | None = None) -> np.ndarray:
    """Draw a ``(fan_in, fan_out)`` weight matrix with variance 2/(fan_in+fan_out).

    ``variant="uniform"`` samples U(-a, a) with a = sqrt(6/(fan_in+fan_out));
    ``"normal"`` samples N(0, 2/(fan_in+fan_out)).  ``stack`` prepends an axis
    of independent draws.
    """
    if fan_in <= 0 or fan_out <= 0:
        raise DimensionError(f"glorot_init needs positive dims, got ({fan_in}, {fan_out})")
    shape = (fan_in, fan_out) if stack is None else (stack, fan_in, fan_out)
    if variant == "uniform":
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape)
    if variant == "normal":
        return rng.normal(0.0, math.sqrt(2.0 / (fan_in + fan_out)), size=shape)
    raise ValueError(f"unknown Glorot variant {variant!r}")


def zero_bias(width: int, stack: int | None = None) -> np.ndarray:
    if width <= 0:
        raise DimensionError(f"bias width must be positive, got {width}")
    return np.zeros(width if stack is None else (stack, 1, width))


def init_mlp(sizes: Sequence[int], rng: np.random.Generator, variant: str = "uniform",
             stack: int | None = None) -> MlpParams:
    """Glorot weights and zero biases for a network with layer widths ``sizes``."""
    if len(sizes) < 2:
        raise DimensionError("an MLP needs at least input and output widths")
    return [(glorot_init(a, b, rng, variant, stack), zero_bias(b, stack))
            for a, b in zip(sizes[:-1], sizes[1:])]


def mlp_sizes(params: MlpParams) -> tuple[int, ...]:
    return (params[0][0].shape[-2],) + tuple(w.shape[-1] for w, _ in params)


def relu(x):
    return np.maximum(x, 0.0)


@dataclass
class ForwardCache:
    inputs: list            # input to each layer
    pre: list               # pre-activations of hidden layers
    masks: list             # scaled dropout multipliers per hidden layer (or None)


def mlp_forward(params: MlpParams, x, masks: Sequence | None = None,
                return_cache: bool = False):
    """Logits of a ReLU MLP with an affine output layer.

    ``masks`` optionally holds one multiplier array per hidden layer, already
    scaled (e.g. Bernoulli/(1-p)), broadcast against that layer's activations.
    """
    h = np.asarray(x, dtype=np.float64)
    if h.shape[-1] != params[0][0].shape[-2]:
        raise DimensionError(
            f"input width {h.shape[-1]} does not match fan-in {params[0][0].shape[-2]}")
    inputs, pres, used_masks = [], [], []
    last = len(params) - 1
    for k, (w, b) in enumerate(params):
        inputs.append(h)
        z = h @ w + b
        if k == last:
            h = z
            break
        pres.append(z)
        h = relu(z)
        m = None if masks is None else masks[k]
        if m is not None:
            h = h * m
        used_masks.append(m)
    if return_cache:
        return h, ForwardCache(inputs, pres, used_masks)
    return h


def _apply_one(params, x, masks, s):
    h = x
    last = len(params) - 1
    for k, (w, b) in enumerate(params):
        w = w[s] if w.ndim == 3 else w
        b = b[s] if b.ndim == 3 else b
        h = h @ w
        h += b
        if k == last:
            return h
        np.maximum(h, 0.0, out=h)
        if masks is not None and masks[k] is not None:
            m = masks[k]
            h *= m[s] if m.ndim == 3 else m
    return h


def mlp_apply(params: MlpParams, x, masks: Sequence | None = None) -> np.ndarray:
    """Inference-only forward pass; same result as ``mlp_forward``.

    Stacked weights or per-sample masks are handled one slice at a time over a
    shared 2-D input, which keeps the working set small.
    """
    x = np.asarray(x, dtype=np.float64)
    stack = max([w.shape[0] for w, _ in params if w.ndim == 3]
                + [m.shape[0] for m in (masks or []) if m is not None and m.ndim == 3],
                default=0)
    if stack == 0 or x.ndim != 2:
        return mlp_forward(params, x, masks)
    if x.shape[-1] != params[0][0].shape[-2]:
        raise DimensionError(
            f"input width {x.shape[-1]} does not match fan-in {params[0][0].shape[-2]}")
    out = np.empty((stack, x.shape[0], params[-1][0].shape[-1]))
    for s in range(stack):
        out[s] = _apply_one(params, x, masks, s)
    return out


def _sum_to(arr: np.ndarray, ndim: int) -> np.ndarray:
    while arr.ndim > ndim:
        arr = arr.sum(axis=0)
    return arr


def _weight_grad(a: np.ndarray, delta: np.ndarray, w: np.ndarray) -> np.ndarray:
    if w.ndim == 2:
        # shared input across leading axes: sum the deltas first
        delta = _sum_to(delta, a.ndim)
        return a.reshape(-1, a.shape[-1]).T @ delta.reshape(-1, delta.shape[-1])
    return _sum_to(np.swapaxes(a, -1, -2) @ delta, w.ndim)


def _bias_grad(delta: np.ndarray, b: np.ndarray) -> np.ndarray:
    if b.ndim == 1:
        return delta.reshape(-1, delta.shape[-1]).sum(axis=0)
    return _sum_to(delta.sum(axis=-2, keepdims=True), b.ndim)


def mlp_backward(params: MlpParams, x, upstream, masks: Sequence | None = None,
                 cache: ForwardCache | None = None, return_input_grad: bool = False):
    """Gradient of ``sum(logits * upstream)`` with respect to every weight and bias.

    Returns a list of ``(dW, db)`` shaped like ``params``; with
    ``return_input_grad`` also the gradient with respect to ``x``.
    """
    if cache is None:
        _, cache = mlp_forward(params, x, masks, return_cache=True)
    delta = np.asarray(upstream, dtype=np.float64)
    if delta.shape[-1] != params[-1][0].shape[-1]:
        raise DimensionError("upstream width does not match network output")
    grads: list = [None] * len(params)
    for k in range(len(params) - 1, -1, -1):
        w, b = params[k]
        a = cache.inputs[k]
        if a.ndim > delta.ndim:
            delta = np.broadcast_to(delta, a.shape[:-1] + delta.shape[-1:])
        grads[k] = (_weight_grad(a, delta, w), _bias_grad(delta, b))
        if k == 0 and not return_input_grad:
            break
        delta = delta @ np.swapaxes(w, -1, -2)
        if k == 0:
            break
        m = cache.masks[k - 1]
        if m is not None:
            delta = delta * m
        delta = delta * (cache.pre[k - 1] > 0)
    if return_input_grad:
        return grads, delta
    return grads


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    v = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NumericError("log_softmax received non-finite logits")
    shifted = v - v.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(logits, axis: int = -1) -> np.ndarray:
    v = np.asarray(logits, dtype=np.float64)
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def xent_l2_loss(model_logits, label: int, params_flat, lam: float) -> float:
    """Cross-entropy of one example plus ``lam * ||params||^2``.

    Labels are zero-based class ids.
    """
    logp = log_softmax(model_logits)
    if not 0 <= label < logp.shape[-1]:
        raise LabelError(f"label {label} outside 0..{logp.shape[-1] - 1}")
    if lam < 0:
        raise ValueError("L2 weight must be nonnegative")
    p = np.asarray(params_flat, dtype=np.float64)
    return float(-logp[label] + lam * np.dot(p, p))


def xent_logit_grad(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, float]:
    """Summed cross-entropy over all leading axes and its gradient w.r.t. logits."""
    logp = log_softmax(logits)
    num_classes = logp.shape[-1]
    labels = np.broadcast_to(labels, logp.shape[:-1])
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelError(f"labels must lie in 0..{num_classes - 1}")
    onehot = labels[..., None] == np.arange(num_classes)
    loss = -float(np.sum(logp[onehot]))
    return np.exp(logp) - onehot, loss


def flatten(params: MlpParams) -> np.ndarray:
    return np.concatenate([a.ravel() for layer in params for a in layer])


def param_shapes(params: MlpParams) -> list[tuple[int, ...]]:
    return [a.shape for layer in params for a in layer]


def unflatten(flat: np.ndarray, shapes: Sequence[tuple[int, ...]]) -> MlpParams:
    """Views into ``flat`` shaped like the ``(W, b)`` pairs described by ``shapes``."""
    total = sum(math.prod(s) for s in shapes)
    if total != flat.size:
        raise DimensionError(f"flat vector of size {flat.size} does not match shapes ({total})")
    arrays, pos = [], 0
    for shape in shapes:
        n = math.prod(shape)
        arrays.append(flat[pos:pos + n].reshape(shape))
        pos += n
    return [(arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2)]


@dataclass(frozen=True)
class AdamState:
    step: int
    m: np.ndarray
    v: np.ndarray
    lr: float | np.ndarray = 1e-3
    b1: float = 0.9
    b2: float = 0.95
    eps: float = 1e-8
    clip_norm: float | None = 1.0

    def __post_init__(self):
        if not (0 <= self.b1 < 1 and 0 <= self.b2 < 1):
            raise ValueError("Adam decay rates must lie in [0, 1)")


def adam_init(shape, lr=1e-3, b1: float = 0.9, b2: float = 0.95, eps: float = 1e-8,
              clip_norm: float | None = 1.0) -> AdamState:
    return AdamState(0, np.zeros(shape), np.zeros(shape), lr, b1, b2, eps, clip_norm)


def clip_by_global_norm(grad: np.ndarray, max_norm: float | None) -> np.ndarray:
    """Rescale so the L2 norm is at most ``max_norm``; rows of a 2-D array clip separately."""
    if max_norm is None:
        return grad
    if grad.ndim == 1:
        norm = math.sqrt(float(np.dot(grad, grad)))
        return grad * (max_norm / norm) if norm > max_norm else grad
    norm = np.sqrt(np.einsum("ij,ij->i", grad, grad))[:, None]
    return grad * np.minimum(1.0, max_norm / np.maximum(norm, 1e-300))


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray):
    """One clipped Adam update; returns ``(new_params, new_state)``.

    A 2-D ``params`` is treated as independent stacked models (one per row),
    each clipped by its own global norm; ``state.lr`` may then be a column.
    """
    if grad.shape != params.shape:
        raise DimensionError(f"gradient shape {grad.shape} != params shape {params.shape}")
    g = clip_by_global_norm(grad, state.clip_norm)
    step = state.step + 1
    m = state.m * state.b1
    m += (1.0 - state.b1) * g
    v = g * g
    v *= 1.0 - state.b2
    v += state.b2 * state.v
    # bias-corrected m_hat / (sqrt(v_hat) + eps), computed with few temporaries
    denom = np.sqrt(v)
    denom *= 1.0 / math.sqrt(1.0 - state.b2 ** step)
    denom += state.eps
    update = m * (np.asarray(state.lr) / (1.0 - state.b1 ** step))
    update /= denom
    new_params = params - update
    return new_params, replace(state, step=step, m=m, v=v)


def finite_diff_grad(loss_fn: Callable[[np.ndarray], float], params_flat,
                     h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient, one coordinate at a time."""
    p = np.array(params_flat, dtype=np.float64)
    grad = np.empty_like(p)
    for i in range(p.size):
        old = p[i]
        p[i] = old + h
        up = loss_fn(p)
        p[i] = old - h
        down = loss_fn(p)
        p[i] = old
        grad[i] = (up - down) / (2.0 * h)
    return grad
