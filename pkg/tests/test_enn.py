import dataclasses

import numpy as np
import pytest

from epinet_al.enn import (ARCHITECTURES, IndexMismatchError, Reference, class_probs_conditional,
                           class_probs_marginal, dropout_masks, enn_forward, enn_loss_grad,
                           forward_logits, load_checkpoint, make_enn, sample_index, sample_probs,
                           save_checkpoint)
from epinet_al.numerics import finite_diff_grad, log_softmax, mlp_forward, softmax

from conftest import rel_err

SIZES = (3, 5, 4, 2)


def small(arch, seed=0, **kw):
    kw.setdefault("ensemble_size", 3)
    kw.setdefault("index_dim", 2)
    kw.setdefault("epinet_hidden", (4,))
    return make_enn(arch, SIZES, seed, **kw)


def oracle_loss(model, x, y, zs, lam, features=None):
    """Eq.-style loss summed over indices and examples, via forward passes only."""
    total = 0.0
    for z in zs:
        logits = forward_logits(model, x, np.asarray([z]), features)[0]
        logp = log_softmax(logits)
        total += sum(-logp[i, y[i]] + lam * model.theta @ model.theta for i in range(len(y)))
    return total


class TestSampleIndex:
    def test_single_member(self, rng):
        ref = Reference("discrete", size=1)
        assert set(sample_index(ref, rng, 50).tolist()) == {0}

    def test_gaussian_moments(self, rng):
        z = sample_index(Reference("gaussian", dim=10), rng, 100_000)
        assert np.abs(z.mean(axis=0)).max() < 0.02
        assert np.abs(z.var(axis=0) - 1).max() < 0.02

    def test_deterministic(self):
        ref = Reference("gaussian", dim=3)
        a = sample_index(ref, np.random.default_rng(4))
        b = sample_index(ref, np.random.default_rng(4))
        assert np.array_equal(a, b) and a.shape == (3,)

    def test_mask_seeds_are_int64(self, rng):
        z = sample_index(Reference("mask", rate=0.1), rng, 5)
        assert z.dtype == np.int64 and z.shape == (5,)


class TestForward:
    def test_mlp_ignores_index(self, rng):
        m = small("mlp")
        x = rng.standard_normal(3)
        assert np.array_equal(enn_forward(m, x, 0), enn_forward(m, x, 0))
        assert np.array_equal(forward_logits(m, x, np.array([0])),
                              forward_logits(m, x, np.array([0, 0, 0])))

    def test_epinet_zero_head_is_base(self, rng):
        m = small("epinet", prior_scale=0.0)
        theta = m.theta.copy()
        n_base = sum(np.prod(s) for s in m.shapes[:m.n_base])
        theta[n_base:] = 0.0
        m = m.with_theta(theta)
        x = rng.standard_normal((4, 3))
        z = rng.standard_normal(2)
        np.testing.assert_array_equal(enn_forward(m, x, z), mlp_forward(m.base_params(), x))

    def test_identical_ensemble_members(self, rng):
        m = make_enn("ensemble", SIZES, 0, ensemble_size=2)
        theta = m.theta.copy()
        for w, b in m.base_params(theta):
            w[1] = w[0]
            b[1] = b[0]
        m = m.with_theta(theta)
        x = rng.standard_normal(3)
        assert np.array_equal(enn_forward(m, x, 0), enn_forward(m, x, 1))

    def test_tiny_epinet_by_hand(self):
        # C=2, D_Z=1, one hidden unit in the head, all head and prior weights 1
        m = make_enn("epinet", (1, 1, 2), 0, index_dim=1, epinet_hidden=(1,), prior_scale=0.5)
        theta = m.theta.copy()
        base = m.base_params(theta)
        base[0][0][:] = 2.0
        base[0][1][:] = 0.5
        base[1][0][:] = [[1.0, -1.0]]
        base[1][1][:] = [0.1, 0.2]
        for w, b in m.epinet_params(theta):
            w[:] = 1.0
            b[:] = 0.0
        m = m.with_theta(theta)
        prior = np.ones_like(m.prior)
        m = dataclasses.replace(m, prior=prior)
        for _, b in m.prior_params():
            b[:] = 0.0
        x, z = 0.75, -1.5
        phi = max(2.0 * x + 0.5, 0.0)                 # 2.0
        mu = np.array([phi + 0.1, -phi + 0.2])
        hidden = max(phi + z, 0.0)                    # head input concat(phi, z)
        h = np.array([hidden, hidden])                # C * D_Z = 2 outputs
        want = mu + (h + 0.5 * h) * z
        np.testing.assert_allclose(enn_forward(m, np.array([x]), np.array([z])), want, atol=1e-14)

    def test_conditional_matches_softmax(self, rng):
        m = small("epinet")
        x, z = rng.standard_normal(3), rng.standard_normal(2)
        p = class_probs_conditional(m, x, z)
        np.testing.assert_allclose(p, softmax(enn_forward(m, x, z)), atol=1e-15)
        assert np.all((p > 0) & (p < 1)) and abs(p.sum() - 1) < 1e-12

    def test_zero_logits_uniform(self, rng):
        m = make_enn("mlp", (3, 4, 3), 0)
        m = m.with_theta(np.zeros_like(m.theta))
        np.testing.assert_allclose(class_probs_conditional(m, rng.standard_normal(3), 0), 1 / 3)

    def test_index_validation(self, rng):
        with pytest.raises(IndexMismatchError):
            forward_logits(small("epinet"), rng.standard_normal(3), np.zeros((1, 5)))
        with pytest.raises(IndexMismatchError):
            forward_logits(small("ensemble"), rng.standard_normal(3), np.array([3]))

    @pytest.mark.parametrize("arch", ARCHITECTURES)
    def test_fast_path_equals_traced_path(self, arch, rng):
        from epinet_al.enn import _forward
        m = make_enn(arch, (6, 9, 9, 3), 2, index_dim=4, epinet_hidden=(7, 5))
        x = rng.standard_normal((11, 6))
        zs = sample_index(m.reference, rng, 5)
        fast = _forward(m, x, zs)
        slow, _ = _forward(m, x, zs, trace=True)
        np.testing.assert_allclose(fast, slow, atol=1e-12)


class TestMarginal:
    def test_z_independent(self, rng):
        m = small("mlp")
        x = rng.standard_normal(3)
        np.testing.assert_allclose(class_probs_marginal(m, x, np.array([0, 0])),
                                   class_probs_conditional(m, x, 0))

    def test_two_member_mixture(self):
        m = make_enn("ensemble", (1, 2), 0, ensemble_size=2)
        theta = m.theta.copy()
        (w, b), = m.base_params(theta)
        w[:] = 0.0
        b[0, 0] = [50.0, -50.0]
        b[1, 0] = [-50.0, 50.0]
        m = m.with_theta(theta)
        np.testing.assert_allclose(class_probs_marginal(m, np.zeros(1), np.arange(2)), [0.5, 0.5],
                                   atol=1e-12)

    @pytest.mark.parametrize("arch", ARCHITECTURES)
    def test_sums_to_one(self, arch, rng):
        m = small(arch)
        zs = sample_index(m.reference, rng, 7)
        p = class_probs_marginal(m, rng.standard_normal((5, 3)), zs)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_exhaustive_ensemble_is_analytic_mixture(self, rng):
        m = small("ensemble")
        x = rng.standard_normal((4, 3))
        members = [softmax(mlp_forward([(w[k], b[k, 0]) for w, b in m.base_params()], x))
                   for k in range(3)]
        np.testing.assert_allclose(class_probs_marginal(m, x, np.arange(3)), np.mean(members, 0),
                                   atol=1e-12)


class TestDropout:
    def test_same_seed_same_masks(self):
        m = small("dropout")
        a = dropout_masks(m, np.array([7, 8]))
        b = dropout_masks(m, np.array([7, 8]))
        for u, v in zip(a, b):
            assert np.array_equal(u, v)

    def test_mask_scaling(self):
        m = make_enn("dropout", (3, 400, 2), 0, dropout_rate=0.25)
        (mask,) = dropout_masks(m, np.arange(50))
        assert set(np.unique(mask)) <= {0.0, 1 / 0.75}
        assert abs(mask.mean() - 1.0) < 0.02

    def test_deterministic_forward(self, rng):
        m = small("dropout")
        x = rng.standard_normal(3)
        assert np.array_equal(enn_forward(m, x, 123), enn_forward(m, x, 123))


class TestGradient:
    @pytest.mark.parametrize("arch", ARCHITECTURES)
    def test_finite_differences(self, arch, rng):
        m = small(arch)
        x = rng.standard_normal((3, 3))
        y = np.array([0, 1, 1])
        zs = sample_index(m.reference, rng, 4)
        lam = 1e-2
        feats = None
        if arch == "epinet":
            feats = np.maximum(mlp_forward(m.base_params()[:-1], x), 0)
        _, grad = enn_loss_grad(m, x, y, zs, lam)
        fd = finite_diff_grad(lambda p: oracle_loss(m.with_theta(p), x, y, zs, lam, feats), m.theta)
        assert rel_err(grad, fd) < 1e-5

    def test_loss_value(self, rng):
        m = small("epinet")
        x, y = rng.standard_normal((2, 3)), np.array([1, 0])
        zs = sample_index(m.reference, rng, 3)
        loss, _ = enn_loss_grad(m, x, y, zs, 0.1)
        assert loss == pytest.approx(oracle_loss(m, x, y, zs, 0.1), rel=1e-12)

    def test_stop_gradient_base_block(self, rng):
        """Base gradient equals backprop of the full upstream through the base net only."""
        m = small("epinet")
        x, y = rng.standard_normal((3, 3)), np.array([0, 1, 0])
        zs = sample_index(m.reference, rng, 5)
        _, grad = enn_loss_grad(m, x, y, zs, 0.0)
        nb = sum(int(np.prod(s)) for s in m.shapes[:m.n_base])
        feats = np.maximum(mlp_forward(m.base_params()[:-1], x), 0)

        def base_only(p):
            theta = m.theta.copy()
            theta[:nb] = p
            return oracle_loss(m.with_theta(theta), x, y, zs, 0.0, feats)
        fd = finite_diff_grad(base_only, m.theta[:nb])
        assert rel_err(grad[:nb], fd) < 1e-6

    def test_prior_untouched_by_training(self, rng):
        from epinet_al.numerics import adam_init, adam_step
        m = small("epinet")
        before = m.prior.copy()
        opt = adam_init(m.theta.size)
        for _ in range(5):
            zs = sample_index(m.reference, rng, 3)
            _, g = enn_loss_grad(m, rng.standard_normal((2, 3)), np.array([0, 1]), zs, 1e-3)
            theta, opt = adam_step(opt, m.theta, g)
            m = m.with_theta(theta)
        assert np.array_equal(m.prior, before)
        assert not m.prior.flags.writeable
        assert m.theta.size == sum(int(np.prod(s)) for s in m.shapes)

    def test_repeated_member_accumulates(self, rng):
        m = small("ensemble")
        x, y = rng.standard_normal((2, 3)), np.array([0, 1])
        _, g1 = enn_loss_grad(m, x, y, np.array([1]), 0.0)
        _, g2 = enn_loss_grad(m, x, y, np.array([1, 1]), 0.0)
        np.testing.assert_allclose(g2, 2 * g1, rtol=1e-12)


def test_checkpoint_roundtrip(tmp_path, rng):
    for arch in ARCHITECTURES:
        m = small(arch)
        path = tmp_path / f"{arch}.npz"
        save_checkpoint(m, path)
        back = load_checkpoint(path)
        assert np.array_equal(back.theta, m.theta)
        x = rng.standard_normal((2, 3))
        zs = sample_index(m.reference, rng, 3)
        np.testing.assert_array_equal(sample_probs(back, x, zs), sample_probs(m, x, zs))


def test_unknown_architecture():
    with pytest.raises(ValueError):
        make_enn("gp", SIZES, 0)
