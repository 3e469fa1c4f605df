import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from epinet_al.numerics import (AdamState, DimensionError, LabelError, NumericError, adam_init,
                                adam_step, clip_by_global_norm, finite_diff_grad, flatten,
                                glorot_init, init_mlp, log_softmax, mlp_apply, mlp_backward,
                                mlp_forward, param_shapes, softmax, unflatten, xent_l2_loss,
                                xent_logit_grad, zero_bias)

from conftest import rel_err


def naive_forward(params, x):
    """Scalar-loop reference implementation."""
    h = list(map(float, x))
    for k, (w, b) in enumerate(params):
        out = [sum(h[i] * w[i, j] for i in range(len(h))) + b[j] for j in range(w.shape[1])]
        h = out if k == len(params) - 1 else [max(v, 0.0) for v in out]
    return np.array(h)


class TestGlorot:
    def test_variance_matches_closed_form(self):
        w = glorot_init(50, 50, np.random.default_rng(0), stack=4)
        assert w.size >= 10_000
        assert abs(w.var() - 0.02) < 0.1 * 0.02

    def test_normal_variant_variance(self):
        w = glorot_init(30, 70, np.random.default_rng(1), variant="normal", stack=5)
        assert abs(w.var() - 0.02) < 0.1 * 0.02

    def test_uniform_support(self):
        w = glorot_init(10, 40, np.random.default_rng(2))
        assert np.abs(w).max() <= math.sqrt(6 / 50)

    def test_zero_bias(self):
        np.testing.assert_array_equal(zero_bias(2), np.zeros(2))

    def test_deterministic(self):
        a = glorot_init(5, 7, np.random.default_rng(3))
        b = glorot_init(5, 7, np.random.default_rng(3))
        assert np.array_equal(a, b)

    def test_rejects_bad_dims(self):
        with pytest.raises(DimensionError):
            glorot_init(0, 3, np.random.default_rng(0))
        with pytest.raises(ValueError):
            glorot_init(3, 3, np.random.default_rng(0), variant="cauchy")


class TestForward:
    def test_zero_network(self):
        params = [(np.zeros((3, 4)), np.zeros(4)), (np.zeros((4, 2)), np.zeros(2))]
        np.testing.assert_array_equal(mlp_forward(params, np.array([1.0, -2.0, 5.0])), 0.0)

    def test_hand_relu_composition(self):
        params = [(np.ones((1, 1)), np.zeros(1)), (np.ones((1, 1)), np.zeros(1))]
        assert mlp_forward(params, np.array([2.0]))[0] == 2.0
        assert mlp_forward(params, np.array([-2.0]))[0] == 0.0

    def test_output_layer_linearity(self, rng):
        params = init_mlp((4, 6, 3), rng)
        x = rng.standard_normal(4)
        doubled = [params[0], (2 * params[1][0], 2 * params[1][1])]
        np.testing.assert_allclose(mlp_forward(doubled, x), 2 * mlp_forward(params, x))

    def test_matches_scalar_loops(self, rng):
        params = init_mlp((4, 5, 5, 3), rng)
        params = [(w, rng.standard_normal(b.shape)) for w, b in params]
        x = rng.standard_normal(4)
        np.testing.assert_allclose(mlp_forward(params, x), naive_forward(params, x), atol=1e-12)

    def test_stacked_matches_members(self, rng):
        params = init_mlp((4, 5, 3), rng, stack=3)
        x = rng.standard_normal((6, 4))
        out = mlp_forward(params, x)
        for k in range(3):
            member = [(w[k], b[k, 0]) for w, b in params]
            np.testing.assert_allclose(out[k], mlp_forward(member, x), atol=1e-14)
        np.testing.assert_array_equal(mlp_apply(params, x), out)

    def test_width_check(self, rng):
        with pytest.raises(DimensionError):
            mlp_forward(init_mlp((4, 3), rng), np.zeros(5))


class TestLogSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(log_softmax([0.0, 0.0]), [-math.log(2)] * 2, atol=1e-15)

    @given(arrays(np.float64, 4, elements=st.floats(-50, 50)), st.floats(-1e3, 1e3))
    def test_shift_invariance(self, v, c):
        np.testing.assert_allclose(log_softmax(v + c), log_softmax(v), atol=1e-9)

    def test_extreme_against_extended_precision(self):
        got = log_softmax([1000.0, 0.0])
        with mpmath.workdps(50):
            lse = mpmath.log(mpmath.exp(1000) + mpmath.exp(0))
            want = [float(1000 - lse), float(0 - lse)]
        assert np.all(np.isfinite(got))
        np.testing.assert_allclose(got, want, rtol=1e-15, atol=1e-15)

    @given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-1e3, 1e3)))
    def test_normalised(self, v):
        assert abs(np.exp(log_softmax(v)).sum() - 1.0) < 1e-12

    def test_rejects_nonfinite(self):
        with pytest.raises(NumericError):
            log_softmax([np.inf, 0.0])

    def test_softmax_agrees(self, rng):
        v = rng.standard_normal((3, 5)) * 10
        np.testing.assert_allclose(softmax(v), np.exp(log_softmax(v)), atol=1e-15)


class TestLoss:
    def test_uniform_prediction(self):
        assert xent_l2_loss(np.zeros(2), 0, np.ones(3), 0.0) == pytest.approx(0.693147, abs=1e-6)

    def test_vanishing_penalty(self, rng):
        logits = rng.standard_normal(3)
        assert xent_l2_loss(logits, 2, np.zeros(5), 0.7) == pytest.approx(-log_softmax(logits)[2])

    def test_formula(self):
        # logits (2, 0), second class, lam 0.1, ||p||^2 = 4
        want = -math.log(math.exp(0) / (math.exp(2) + math.exp(0))) + 0.4
        assert want == pytest.approx(2.126928 + 0.4, abs=1e-6)
        assert xent_l2_loss(np.array([2.0, 0.0]), 1, np.array([2.0, 0.0]), 0.1) == pytest.approx(want, abs=1e-12)

    def test_label_range(self):
        with pytest.raises(LabelError):
            xent_l2_loss(np.zeros(2), 2, np.zeros(1), 0.0)

    def test_logit_grad_is_softmax_minus_onehot(self, rng):
        logits = rng.standard_normal((4, 3))
        y = np.array([0, 2, 1, 2])
        g, loss = xent_logit_grad(logits, y)
        fd = finite_diff_grad(lambda v: xent_logit_grad(v.reshape(4, 3), y)[1], logits.ravel())
        np.testing.assert_allclose(g.ravel(), fd, atol=1e-8)
        assert loss == pytest.approx(sum(-log_softmax(logits[i])[y[i]] for i in range(4)))


class TestBackward:
    def test_zero_upstream(self, rng):
        params = init_mlp((3, 4, 2), rng)
        for dw, db in mlp_backward(params, rng.standard_normal(3), np.zeros(2)):
            assert not dw.any() and not db.any()

    def test_affine(self):
        grads = mlp_backward([(np.array([[0.5]]), np.array([0.1]))], np.array([3.0]), np.array([1.0]))
        assert grads[0][0][0, 0] == 3.0 and grads[0][1][0] == 1.0

    def test_random_net_against_finite_differences(self, rng):
        params = init_mlp((4, 5, 3), rng)
        params = [(w, rng.standard_normal(b.shape) * 0.1) for w, b in params]
        x, up = rng.standard_normal(4), rng.standard_normal(3)
        shapes = param_shapes(params)
        analytic = flatten(mlp_backward(params, x, up))
        fd = finite_diff_grad(lambda p: float(mlp_forward(unflatten(p, shapes), x) @ up),
                              flatten(params))
        assert rel_err(analytic, fd) < 1e-5

    def test_masked_and_stacked(self, rng):
        params = [(w, rng.standard_normal(b.shape) * 0.1)
                  for w, b in init_mlp((3, 4, 4, 2), rng, stack=2)]
        masks = [(rng.random((2, 1, 4)) > 0.3) / 0.7, (rng.random((2, 1, 4)) > 0.3) / 0.7]
        x, up = rng.standard_normal((5, 3)), rng.standard_normal((2, 5, 2))
        shapes = param_shapes(params)
        analytic = flatten(mlp_backward(params, x, up, masks))
        fd = finite_diff_grad(
            lambda p: float(np.sum(mlp_forward(unflatten(p, shapes), x, masks) * up)), flatten(params))
        assert rel_err(analytic, fd) < 1e-5

    def test_gradient_property_small_mlps(self):
        """100 random MLPs (widths <= 8): xent+L2 gradient vs central differences."""
        gen = np.random.default_rng(7)
        worst = 0.0
        for _ in range(100):
            depth = gen.integers(1, 4)
            sizes = [int(v) for v in gen.integers(1, 9, size=depth + 1)]
            sizes[-1] = max(sizes[-1], 2)
            params = init_mlp(sizes, gen)
            params = [(w, gen.standard_normal(b.shape) * 0.1) for w, b in params]
            shapes = param_shapes(params)
            x = gen.standard_normal(sizes[0])
            y = int(gen.integers(sizes[-1]))
            lam = float(gen.choice([0.0, 1e-3, 0.1]))
            theta = flatten(params)

            def loss(p):
                return xent_l2_loss(mlp_forward(unflatten(p, shapes), x), y, p, lam)

            up, _ = xent_logit_grad(mlp_forward(params, x), np.array(y))
            analytic = flatten(mlp_backward(params, x, up)) + 2 * lam * theta
            worst = max(worst, rel_err(analytic, finite_diff_grad(loss, theta)))
        assert worst <= 1e-5


class TestAdam:
    def test_null_update(self):
        p = np.array([1.0, -2.0])
        new, st_ = adam_step(adam_init(2), p, np.zeros(2))
        np.testing.assert_array_equal(new, p)
        assert st_.step == 1

    def test_clipping_saturates(self):
        new, st_ = adam_step(adam_init(1, lr=1e-3, clip_norm=1.0), np.zeros(1), np.array([10.0]))
        assert st_.m[0] == pytest.approx(0.1 * 1.0)
        assert st_.v[0] == pytest.approx(0.05 * 1.0)

    def test_one_step_by_hand(self):
        lr, b1, b2, eps, g = 1e-3, 0.9, 0.95, 1e-8, 0.5
        m, v = (1 - b1) * g, (1 - b2) * g * g
        want = -lr * (m / (1 - b1)) / (math.sqrt(v / (1 - b2)) + eps)
        new, _ = adam_step(adam_init(1, lr, b1, b2, eps), np.zeros(1), np.array([g]))
        assert new[0] == pytest.approx(want, rel=1e-14)
        assert new[0] == pytest.approx(-1e-3, rel=1e-6)

    def test_deterministic(self, rng):
        p, g = rng.standard_normal(6), rng.standard_normal(6)
        st_ = adam_init(6)
        a, sa = adam_step(st_, p, g)
        b, sb = adam_step(st_, p, g)
        assert np.array_equal(a, b) and np.array_equal(sa.v, sb.v)

    def test_global_norm_clip(self, rng):
        g = rng.standard_normal(10) * 5
        c = clip_by_global_norm(g, 1.0)
        assert np.linalg.norm(c) == pytest.approx(1.0)
        np.testing.assert_allclose(c / np.linalg.norm(c), g / np.linalg.norm(g))
        small = g / (10 * np.linalg.norm(g))
        assert np.array_equal(clip_by_global_norm(small, 1.0), small)

    def test_stacked_rows_are_independent(self, rng):
        p, g = rng.standard_normal((3, 4)), rng.standard_normal((3, 4)) * 3
        lrs = np.array([[1e-3], [1e-2], [1e-1]])
        out, _ = adam_step(adam_init(p.shape, lrs), p, g)
        for i in range(3):
            row, _ = adam_step(adam_init(4, float(lrs[i, 0])), p[i], g[i])
            np.testing.assert_allclose(out[i], row, rtol=1e-15)

    def test_bad_decay(self):
        with pytest.raises(ValueError):
            AdamState(0, np.zeros(1), np.zeros(1), b1=1.0)


class TestFiniteDiff:
    def test_quadratic(self):
        assert finite_diff_grad(lambda p: float(p[0] ** 2), [3.0])[0] == pytest.approx(6, abs=1e-6)

    def test_constant(self):
        np.testing.assert_array_equal(finite_diff_grad(lambda p: 4.0, np.ones(3)), 0.0)

    def test_exp(self):
        assert finite_diff_grad(lambda p: math.exp(p[0]), [0.0])[0] == pytest.approx(1, abs=1e-8)


def test_flatten_roundtrip(rng):
    params = init_mlp((3, 4, 2), rng)
    back = unflatten(flatten(params), param_shapes(params))
    for (w, b), (w2, b2) in zip(params, back):
        assert np.array_equal(w, w2) and np.array_equal(b, b2)
    with pytest.raises(DimensionError):
        unflatten(np.zeros(3), param_shapes(params))
