import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from epinet_al.active import CurveRecord
from epinet_al.enn import class_probs_marginal, make_enn, sample_index
from epinet_al.evaluation import (efficiency_report, envelope, evaluate, geometric_mean_ratio,
                                  labels_to_match, mean_se)


def curve(points):
    return [CurveRecord(i, l, v, 1 - v) for i, (l, v) in enumerate(points)]


def constant_model(logits):
    logits = np.asarray(logits, float)
    m = make_enn("mlp", (2, len(logits)), 0)
    theta = np.zeros_like(m.theta)
    theta[-len(logits):] = logits
    return m.with_theta(theta)


class TestEvaluate:
    def test_uniform_predictions(self):
        y = np.array([0, 1] * 50)
        r = evaluate(constant_model([0.0, 0.0]), np.zeros((100, 2)), y, np.array([0]))
        assert r.nll == pytest.approx(math.log(2)) and r.log_likelihood == pytest.approx(-math.log(2))
        assert r.accuracy == 0.5

    def test_perfect_predictions(self):
        y = np.zeros(5, dtype=int)
        r = evaluate(constant_model([900.0, -900.0]), np.zeros((5, 2)), y, np.array([0]))
        assert r.nll == pytest.approx(0.0, abs=1e-300) and r.accuracy == 1.0

    def test_hand_loop(self, rng):
        m = make_enn("epinet", (3, 6, 3), 2, index_dim=4)
        x, y = rng.standard_normal((5, 3)), np.array([0, 2, 1, 1, 0])
        zs = sample_index(m.reference, rng, 9)
        ll = [math.log(class_probs_marginal(m, x[i], zs)[y[i]]) for i in range(5)]
        assert evaluate(m, x, y, zs, chunk=2).nll == pytest.approx(-np.mean(ll), rel=1e-12)

    def test_z_independent_invariance(self, rng):
        m = make_enn("mlp", (3, 5, 2), 0)
        x, y = rng.standard_normal((20, 3)), rng.integers(0, 2, 20)
        assert evaluate(m, x, y, np.array([0])) == evaluate(m, x, y, np.zeros(7, dtype=int))

    def test_empty(self):
        with pytest.raises(ValueError):
            evaluate(constant_model([0, 0]), np.zeros((0, 2)), np.zeros(0, int), np.array([0]))


class TestLabelsToMatch:
    def test_initial(self):
        assert labels_to_match(curve([(0, 1.0), (5, 0.9)]), 1.5) == 0

    def test_never(self):
        assert labels_to_match(curve([(0, 1.0), (5, 0.9)]), 0.1) is None

    def test_scan(self):
        assert labels_to_match(curve([(0, 1.0), (50, 0.8), (100, 0.6)]), 0.7) == 100

    def test_accuracy(self):
        c = curve([(0, 0.9), (10, 0.4), (20, 0.2)])
        assert labels_to_match(c, 0.7, "accuracy") == 20

    @given(st.lists(st.floats(0.0, 2.0), min_size=1, max_size=20), st.floats(0.0, 1.0),
           st.floats(0.0, 2.0))
    def test_monotone(self, losses, shrink, target):
        labels = list(range(0, 10 * len(losses), 10))
        worse = curve(zip(labels, losses))
        better = curve(zip(labels, [v * shrink for v in losses]))
        a, b = labels_to_match(better, target), labels_to_match(worse, target)
        if b is not None:
            assert a is not None and a <= b


class TestEnvelope:
    def test_running_best(self):
        c = curve([(0, 1.0), (10, 0.5), (10, 0.7), (20, 0.6)])
        np.testing.assert_array_equal(envelope(c, [0, 5, 10, 30]), [1.0, 1.0, 0.5, 0.5])

    def test_before_first(self):
        assert np.isnan(envelope(curve([(5, 1.0)]), [0])[0])


class TestGeometricMean:
    def test_constant(self):
        g = geometric_mean_ratio([2, 2, 2])
        assert g.mean == pytest.approx(2) and g.log_se == 0

    def test_pair(self):
        assert geometric_mean_ratio([1, 4]).mean == pytest.approx(2, abs=1e-12)

    def test_formula(self):
        r = [0.5, 2.0, 1.0]
        g = geometric_mean_ratio(r)
        se = np.std(np.log(r), ddof=1) / math.sqrt(3)
        assert g.mean == pytest.approx(1.0, abs=1e-12)
        assert g.log_se == pytest.approx(se, abs=1e-12)
        assert g.upper == pytest.approx(math.exp(se)) and g.lower == pytest.approx(math.exp(-se))

    @given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=12))
    def test_bounded_by_extremes(self, r):
        g = geometric_mean_ratio(r).mean
        assert min(r) * (1 - 1e-12) <= g <= max(r) * (1 + 1e-12)

    def test_rejects_nonpositive(self):
        for bad in ([1.0, 0.0], [-1.0], [math.inf]):
            with pytest.raises(ValueError):
                geometric_mean_ratio(bad)


def test_efficiency_report_unbounded():
    rep = efficiency_report("x", [50, None, 100, 0], 200)
    assert rep.ratios[1] == math.inf and rep.n_unbounded == 1
    assert rep.ratios[3] == 1 / 200
    assert rep.geo.mean == pytest.approx((0.25 * 0.5 * 0.005) ** (1 / 3))


def test_mean_se():
    m, s = mean_se([1.0, 2.0, 3.0])
    assert m == 2.0 and s == pytest.approx(1 / math.sqrt(3))
    assert mean_se([4.0])[1] == 0.0
