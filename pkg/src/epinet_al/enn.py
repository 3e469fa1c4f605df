"""Epistemic neural networks ``f(x, z)`` with a reference distribution over ``z``.

Four architectures share one representation: all trainable parameters live in
a single flat vector ``theta`` (base network first, then the epinet head), and
views into it give the per-layer ``(W, b)`` pairs.

* ``mlp``      -- a conventional network; the index is ignored.
* ``ensemble`` -- K stacked members, index = member id (zero-based).
* ``dropout``  -- index = seed of Bernoulli keep-masks over hidden units.
* ``epinet``   -- base net plus ``(h_eta(c) + scale * h_prior(c))^T z`` with
  ``c = concat(features, z)``, ``z`` standard normal and ``features`` the base
  net's last hidden layer, detached from the gradient.  ``h_prior`` is frozen.

Indices are passed in batches: gaussian ``(S, D_Z)`` floats, discrete ``(S,)``
member ids, mask ``(S,)`` integer seeds.  Batched forward passes return logits
of shape ``(S, n, C)``.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from .numerics import (DimensionError, MlpParams, _apply_one, flatten, init_mlp, mlp_apply,
                       mlp_backward, mlp_forward, softmax, unflatten, xent_logit_grad)

ARCHITECTURES = ("mlp", "ensemble", "dropout", "epinet")
CHECKPOINT_VERSION = 1


class IndexMismatchError(ValueError):
    """Epistemic index does not match the model's reference distribution."""


@dataclass(frozen=True)
class Reference:
    kind: str                 # "gaussian" | "discrete" | "mask"
    dim: int = 1              # D_Z (gaussian)
    size: int = 1             # K (discrete)
    rate: float = 0.0         # dropout probability (mask)

    def __post_init__(self):
        if self.kind not in ("gaussian", "discrete", "mask"):
            raise ValueError(f"unknown reference kind {self.kind!r}")
        if self.dim < 1 or self.size < 1:
            raise ValueError("reference dimensions must be >= 1")
        if not 0.0 <= self.rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")


def sample_index(ref: Reference, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Draw ``n`` epistemic indices (or a single one when ``n`` is None)."""
    count = 1 if n is None else n
    if ref.kind == "gaussian":
        z = rng.standard_normal((count, ref.dim))
    elif ref.kind == "discrete":
        z = rng.integers(0, ref.size, size=count)
    else:
        z = rng.integers(0, 2**63 - 1, size=count, dtype=np.int64)
    return z[0] if n is None else z


@dataclass(frozen=True)
class EnnModel:
    arch: str
    sizes: tuple[int, ...]               # base widths: input, hidden..., classes
    reference: Reference
    theta: np.ndarray = field(repr=False)
    shapes: tuple = field(repr=False)    # trainable array shapes, base then epinet
    n_base: int = 0                      # number of base arrays in ``shapes``
    epinet_sizes: tuple[int, ...] = ()   # features + D_Z, hidden..., C * D_Z
    prior: np.ndarray | None = field(default=None, repr=False)
    prior_scale: float = 0.0
    prior_seed: int | None = None

    @property
    def num_classes(self) -> int:
        return self.sizes[-1]

    @property
    def z_independent(self) -> bool:
        return self.arch == "mlp"

    @property
    def feature_width(self) -> int:
        return self.sizes[-2]

    def base_params(self, theta: np.ndarray | None = None) -> MlpParams:
        theta = self.theta if theta is None else theta
        layers = unflatten(theta, self.shapes)
        return layers[: self.n_base // 2]

    def epinet_params(self, theta: np.ndarray | None = None) -> MlpParams:
        theta = self.theta if theta is None else theta
        layers = unflatten(theta, self.shapes)
        return layers[self.n_base // 2:]

    def prior_params(self) -> MlpParams:
        shapes = [s for layer in self._epinet_shapes() for s in layer]
        return unflatten(self.prior, shapes)

    def _epinet_shapes(self):
        return list(zip(self.shapes[self.n_base::2], self.shapes[self.n_base + 1::2]))

    def with_theta(self, theta: np.ndarray) -> "EnnModel":
        return replace(self, theta=theta)


def make_enn(arch: str, sizes: Sequence[int], seed: int, *, ensemble_size: int = 10,
             dropout_rate: float = 0.1, index_dim: int = 10,
             epinet_hidden: Sequence[int] = (50, 50), prior_scale: float = 1.0,
             glorot: str = "uniform") -> EnnModel:
    """Build an ENN with Glorot-initialised weights and zero biases.

    ``sizes`` are the base-network widths ``(input, hidden..., classes)``.  The
    base, the epinet head and the prior network draw from independent streams
    derived from ``seed``.
    """
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2 or min(sizes) < 1:
        raise DimensionError(f"invalid network widths {sizes}")
    base_ss, head_ss, prior_ss = np.random.SeedSequence(seed).spawn(3)
    base_rng = np.random.default_rng(base_ss)
    stack = ensemble_size if arch == "ensemble" else None
    base = init_mlp(sizes, base_rng, glorot, stack=stack)
    arrays = [a for layer in base for a in layer]
    epinet_sizes: tuple[int, ...] = ()
    prior = None
    prior_seed = None
    if arch == "mlp":
        ref = Reference("discrete", size=1)
    elif arch == "ensemble":
        ref = Reference("discrete", size=ensemble_size)
    elif arch == "dropout":
        if len(sizes) < 3:
            raise DimensionError("dropout needs at least one hidden layer")
        ref = Reference("mask", rate=dropout_rate)
    else:
        ref = Reference("gaussian", dim=index_dim)
        c = sizes[-1]
        epinet_sizes = (sizes[-2] + index_dim, *map(int, epinet_hidden), c * index_dim)
        head = init_mlp(epinet_sizes, np.random.default_rng(head_ss), glorot)
        arrays += [a for layer in head for a in layer]
        prior_seed = int(prior_ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
        prior = flatten(init_mlp(epinet_sizes, np.random.default_rng(prior_seed), glorot))
        prior.flags.writeable = False
    theta = np.concatenate([a.ravel() for a in arrays])
    return EnnModel(arch, sizes, ref, theta, tuple(a.shape for a in arrays),
                    2 * (len(sizes) - 1), epinet_sizes, prior, float(prior_scale), prior_seed)


# -- dropout masks -----------------------------------------------------------

@lru_cache(maxsize=64)
def _masks_from_seeds(seed_bytes: bytes, widths: tuple[int, ...], rate: float):
    seeds = np.frombuffer(seed_bytes, dtype=np.int64)
    per_layer = [np.empty((seeds.size, 1, w)) for w in widths]
    scale = 1.0 / (1.0 - rate)
    for s, seed in enumerate(seeds):
        rng = np.random.default_rng(int(seed))
        for k, w in enumerate(widths):
            per_layer[k][s, 0] = (rng.random(w) >= rate) * scale
    for m in per_layer:
        m.flags.writeable = False
    return per_layer


def dropout_masks(model: EnnModel, seeds: np.ndarray) -> list[np.ndarray]:
    """Scaled keep-masks ``(S, 1, width)`` for every hidden layer, one row per seed."""
    seeds = np.ascontiguousarray(seeds, dtype=np.int64).reshape(-1)
    return _masks_from_seeds(seeds.tobytes(), model.sizes[1:-1], model.reference.rate)


# -- forward / backward --------------------------------------------------------

def _check_index(model: EnnModel, zs: np.ndarray) -> np.ndarray:
    ref = model.reference
    zs = np.asarray(zs)
    if ref.kind == "gaussian":
        if zs.ndim != 2 or zs.shape[1] != ref.dim:
            raise IndexMismatchError(f"expected gaussian indices of shape (S, {ref.dim}), got {zs.shape}")
        if not np.all(np.isfinite(zs)):
            raise IndexMismatchError("gaussian index entries must be finite")
    else:
        if zs.ndim != 1 or not np.issubdtype(zs.dtype, np.integer):
            raise IndexMismatchError(f"expected a 1-D integer index batch for {ref.kind}, got {zs.shape}")
        if ref.kind == "discrete" and zs.size and (zs.min() < 0 or zs.max() >= ref.size):
            raise IndexMismatchError(f"member ids must lie in 0..{ref.size - 1}")
    if zs.shape[0] < 1:
        raise IndexMismatchError("need at least one index sample")
    return zs


def _epinet_head(layers: MlpParams, feats: np.ndarray, zs: np.ndarray, num_classes: int,
                 return_cache: bool = False):
    """``h(concat(feats, z))^T z`` for every z; output ``(S, n, C)``.

    The first layer is split into feature and index blocks so the feature
    product is computed once and shared across indices.
    """
    w0, b0 = layers[0]
    width = feats.shape[-1]
    pre0 = (feats @ w0[:width])[None] + (zs @ w0[width:] + b0)[:, None, :]
    if len(layers) > 1:
        h0 = np.maximum(pre0, 0.0)
        out, cache = mlp_forward(layers[1:], h0, return_cache=True)
    else:
        h0, out, cache = None, pre0, None
    s, n = out.shape[0], out.shape[1]
    out = out.reshape(s, n, num_classes, -1)
    sigma = np.einsum("sncd,sd->snc", out, zs)
    if return_cache:
        return sigma, (pre0, h0, cache)
    return sigma


def _epinet_head_apply(layers: MlpParams, feats: np.ndarray, zs: np.ndarray,
                       num_classes: int) -> np.ndarray:
    """Inference version of ``_epinet_head``, one index at a time.

    The contraction with ``z`` is folded into the output layer's weights, so
    the last matmul produces ``C`` columns instead of ``C * D_Z``.
    """
    w0, b0 = layers[0]
    width = feats.shape[-1]
    fx = feats @ w0[:width]
    zpart = zs @ w0[width:] + b0
    n = len(feats)
    out = np.empty((len(zs), n, num_classes))
    if len(layers) == 1:
        for s in range(len(zs)):
            out[s] = (fx + zpart[s]).reshape(n, num_classes, -1) @ zs[s]
        return out
    w_out, b_out = layers[-1]
    w_z = np.einsum("hcd,sd->shc", w_out.reshape(w_out.shape[0], num_classes, -1), zs)
    b_z = b_out.reshape(num_classes, -1) @ zs.T
    for s in range(len(zs)):
        a = fx + zpart[s]
        np.maximum(a, 0.0, out=a)
        for w, b in layers[1:-1]:
            a = a @ w
            a += b
            np.maximum(a, 0.0, out=a)
        np.matmul(a, w_z[s], out=out[s])
        out[s] += b_z[:, s]
    return out


def _epinet_head_backward(layers: MlpParams, feats, zs, num_classes, fcache, upstream):
    pre0, h0, cache = fcache
    s, n = upstream.shape[0], upstream.shape[1]
    dout = (upstream[..., :, None] * zs[:, None, None, :]).reshape(s, n, -1)
    grads = []
    if len(layers) > 1:
        tail, delta = mlp_backward(layers[1:], None, dout, cache=cache, return_input_grad=True)
        delta = delta * (pre0 > 0)
    else:
        tail, delta = [], dout
    width = feats.shape[-1]
    w0 = layers[0][0]
    dw0 = np.empty_like(w0)
    dw0[:width] = feats.T @ delta.sum(axis=0)
    dw0[width:] = zs.T @ delta.sum(axis=1)
    grads.append((dw0, delta.sum(axis=(0, 1))))
    return grads + tail


@dataclass
class _Trace:
    base_cache: object = None
    members: np.ndarray | None = None
    masks: list | None = None
    feats: np.ndarray | None = None
    head_cache: object = None


def _forward(model: EnnModel, x, zs, features=None, theta=None, trace=False):
    """Logits ``(S, n, C)``; for z-independent models ``S`` is 1."""
    theta = model.theta if theta is None else theta
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.shape[-1] != model.sizes[0]:
        raise DimensionError(f"input width {x.shape[-1]} != model input {model.sizes[0]}")
    if model.z_independent:
        if len(zs) < 1:
            raise IndexMismatchError("need at least one index sample")
    else:
        zs = _check_index(model, zs)
    base = model.base_params(theta)
    if not trace:
        return _apply(model, base, x, zs, features, theta)
    tr = _Trace()
    arch = model.arch
    if arch == "mlp":
        logits, tr.base_cache = mlp_forward(base, x, return_cache=True)
        logits = logits[None]
    elif arch == "ensemble":
        tr.members = zs
        picked = [(w[zs], b[zs]) for w, b in base]
        logits, tr.base_cache = mlp_forward(picked, x, return_cache=True)
    elif arch == "dropout":
        tr.masks = dropout_masks(model, zs)
        logits, tr.base_cache = mlp_forward(base, x, masks=tr.masks, return_cache=True)
    else:
        mu, tr.base_cache = mlp_forward(base, x, return_cache=True)
        feats = tr.base_cache.inputs[-1] if features is None else np.asarray(features, float)
        tr.feats = feats
        zf = zs.astype(np.float64)
        c = model.num_classes
        sigma, tr.head_cache = _epinet_head(model.epinet_params(theta), feats, zf, c, True)
        logits = mu[None] + sigma
        if model.prior_scale != 0.0:
            logits = logits + model.prior_scale * _epinet_head(model.prior_params(), feats, zf, c)
    if trace:
        return logits, tr
    return logits


def _apply(model: EnnModel, base, x, zs, features, theta):
    arch = model.arch
    if arch == "mlp":
        return mlp_apply(base, x)[None]
    if arch == "ensemble":
        return mlp_apply([(w[zs], b[zs]) for w, b in base], x)
    if arch == "dropout":
        return mlp_apply(base, x, dropout_masks(model, zs))
    w_last, b_last = base[-1]
    if len(base) > 1:
        feats = mlp_apply(base[:-1], x)
        np.maximum(feats, 0.0, out=feats)
    else:
        feats = x
    mu = feats @ w_last + b_last
    if features is not None:
        feats = np.asarray(features, dtype=np.float64)
    zf = zs.astype(np.float64)
    c = model.num_classes
    logits = mu[None] + _epinet_head_apply(model.epinet_params(theta), feats, zf, c)
    if model.prior_scale != 0.0:
        logits += model.prior_scale * _epinet_head_apply(model.prior_params(), feats, zf, c)
    return logits


def forward_logits(model: EnnModel, x, zs, features=None) -> np.ndarray:
    """Logits for a batch of indices, shape ``(S, n, C)`` (``S`` = 1 for ``mlp``)."""
    return _forward(model, x, zs, features)


def enn_forward(model: EnnModel, x, z) -> np.ndarray:
    """Logits of ``f(x, z)`` for a single index ``z``; ``(C,)`` or ``(n, C)``."""
    z = np.asarray(z)
    zs = z.reshape(1, -1) if model.reference.kind == "gaussian" else z.reshape(1)
    out = _forward(model, x, zs)[0]
    return out[0] if np.ndim(x) == 1 else out


def sample_probs(model: EnnModel, x, zs) -> np.ndarray:
    """Conditional class probabilities ``(S, n, C)``; one sample for ``mlp``."""
    return softmax(_forward(model, x, zs))


def class_probs_conditional(model: EnnModel, x, z) -> np.ndarray:
    return softmax(enn_forward(model, x, z))


def class_probs_marginal(model: EnnModel, x, zs) -> np.ndarray:
    """Monte-Carlo estimate of the index-averaged class probabilities."""
    if len(zs) == 0:
        raise ValueError("class_probs_marginal needs at least one index sample")
    p = sample_probs(model, x, zs).mean(axis=0)
    return p[0] if np.ndim(x) == 1 else p


def l2_penalty(model: EnnModel) -> float:
    return float(np.dot(model.theta, model.theta))


def enn_loss_grad(model: EnnModel, x, y, zs, lam: float, features=None, theta=None):
    """Loss ``sum_z sum_i [xent + lam * ||theta||^2]`` and its gradient.

    The gradient covers trainable parameters only and never flows from the
    epinet head back into the base network through the features.
    ``features`` overrides the features fed to the epinet (test oracle hook).
    """
    theta = model.theta if theta is None else theta
    y = np.asarray(y)
    if y.ndim == 0:
        y = y[None]
    logits, tr = _forward(model, x, zs, features, theta, trace=True)
    n_samples = len(zs)
    upstream, xent = xent_logit_grad(logits, y)
    if model.z_independent:
        # one shared forward pass stands in for every index sample
        upstream = upstream * n_samples
        xent *= n_samples
    grad = np.zeros_like(theta)
    gviews = unflatten(grad, model.shapes)
    nb = model.n_base // 2
    arch = model.arch
    base = model.base_params(theta)
    if arch == "ensemble":
        picked = [(w[tr.members], b[tr.members]) for w, b in base]
        for (gw, gb), (dw, db) in zip(gviews[:nb], mlp_backward(picked, None, upstream,
                                                               cache=tr.base_cache)):
            np.add.at(gw, tr.members, dw)
            np.add.at(gb, tr.members, db)
    else:
        base_up = upstream.sum(axis=0) if arch in ("mlp", "epinet") else upstream
        for (gw, gb), (dw, db) in zip(gviews[:nb], mlp_backward(base, None, base_up,
                                                               cache=tr.base_cache)):
            gw += dw
            gb += db
    if arch == "epinet":
        head = model.epinet_params(theta)
        hgrads = _epinet_head_backward(head, tr.feats, np.asarray(zs, float),
                                       model.num_classes, tr.head_cache, upstream)
        for (gw, gb), (dw, db) in zip(gviews[nb:], hgrads):
            gw += dw
            gb += db
    n_terms = n_samples * y.size
    sq = float(np.dot(theta, theta))
    grad += (2.0 * lam * n_terms) * theta
    return xent + lam * n_terms * sq, grad


# -- checkpoints -----------------------------------------------------------------

def save_checkpoint(model: EnnModel, path) -> None:
    """Write a versioned ``.npz`` container.

    ``theta`` holds the trainable arrays in order: base layers ``W0, b0, W1, b1, ...``
    followed by epinet layers in the same pattern, each raveled row-major.
    ``prior`` holds the frozen prior network in the epinet layout.
    """
    meta = {
        "version": CHECKPOINT_VERSION,
        "arch": model.arch,
        "sizes": list(model.sizes),
        "reference": {"kind": model.reference.kind, "dim": model.reference.dim,
                      "size": model.reference.size, "rate": model.reference.rate},
        "shapes": [list(s) for s in model.shapes],
        "n_base": model.n_base,
        "epinet_sizes": list(model.epinet_sizes),
        "prior_scale": model.prior_scale,
        "prior_seed": model.prior_seed,
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
              "theta": model.theta}
    if model.prior is not None:
        arrays["prior"] = model.prior
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> EnnModel:
    with np.load(path) as data:
        meta = json.loads(data["meta"].tobytes().decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        theta = data["theta"].copy()
        prior = data["prior"].copy() if "prior" in data else None
    if prior is not None:
        prior.flags.writeable = False
    return EnnModel(meta["arch"], tuple(meta["sizes"]), Reference(**meta["reference"]), theta,
                    tuple(tuple(s) for s in meta["shapes"]), meta["n_base"],
                    tuple(meta["epinet_sizes"]), prior, meta["prior_scale"], meta["prior_seed"])


__all__ = [
    "ARCHITECTURES", "EnnModel", "IndexMismatchError", "Reference", "make_enn", "sample_index", "enn_forward",
    "forward_logits", "sample_probs", "class_probs_conditional", "class_probs_marginal",
    "enn_loss_grad", "dropout_masks", "save_checkpoint", "load_checkpoint",
]
