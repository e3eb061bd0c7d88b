import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sfdalab.nn import softmax
from sfdalab.pseudo import (
    SoftPseudoLabel,
    consistency_loss,
    decide,
    hard_label,
    sample_coefficients,
    selection_probability,
    sharpen,
    weighted_batch_loss,
)
from sfdalab.rng import stream


def entropy(p):
    p = np.asarray(p)
    return float(-np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)))


class TestSharpen:
    @pytest.mark.parametrize("t", [0.1, 0.5, 1.0, 3.0])
    def test_symmetric(self, t):
        np.testing.assert_allclose(sharpen(np.zeros(2), t).probs, [0.5, 0.5], atol=1e-15)

    def test_identity_temperature(self):
        logits = np.random.default_rng(0).normal(size=(20, 5))
        np.testing.assert_allclose(sharpen(logits, 1.0).probs, softmax(logits), rtol=0, atol=1e-12)

    def test_direct(self):
        e2 = math.exp(2)
        np.testing.assert_allclose(sharpen(np.array([1.0, 0.0]), 0.5).probs, [e2 / (e2 + 1), 1 / (e2 + 1)], atol=1e-15)

    @pytest.mark.parametrize("t", [0.0, -1.0])
    def test_bad_temperature(self, t):
        with pytest.raises(ValueError):
            sharpen(np.zeros(3), t)

    def test_zero_temperature_limit(self):
        p = sharpen(np.array([0.3, 1.2, -0.4]), 1e-3).probs
        np.testing.assert_allclose(p, [0, 1, 0], atol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-20, 20), min_size=2, max_size=6), st.sampled_from([0.1, 0.25, 0.5, 0.9]))
    def test_entropy_drops(self, logits, t):
        logits = np.array(logits)
        assert entropy(sharpen(logits, t).probs) <= entropy(softmax(logits)) + 1e-12

    def test_label_properties(self):
        lab = sharpen(np.array([[0.0, 2.0, 1.0], [3.0, 3.0, 0.0]]), 0.5)
        np.testing.assert_array_equal(lab.predicted_class, [1, 0])
        assert np.all(lab.confidence >= 1 / 3) and np.all(lab.confidence <= 1)


class TestConsistencyLoss:
    def test_one_hot(self):
        assert consistency_loss(np.array([0, 0, 1.0]), np.array([0.2, 0.3, 0.5])) == pytest.approx(-math.log(0.5))

    def test_uniform(self):
        u = np.full(4, 0.25)
        assert consistency_loss(SoftPseudoLabel(u), u) == pytest.approx(math.log(4))

    def test_direct(self):
        assert consistency_loss(np.array([0.9, 0.1]), np.array([0.5, 0.5])) == pytest.approx(math.log(2), abs=1e-15)


class TestSelection:
    def test_top_probability(self):
        assert selection_probability(np.array([0.7, 0.2, 0.1])) == 0.7

    def test_uniform(self):
        assert selection_probability(np.full(5, 0.2)) == pytest.approx(0.2)

    def test_one_hot(self):
        assert selection_probability(np.array([0.0, 1.0])) == 1.0

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0.01, 1), min_size=3, max_size=6), st.floats(0, 1))
    def test_monotone_in_confidence(self, raw, boost):
        p = np.array(raw) / sum(raw)
        top = p.argmax()
        q = p.copy()
        q[top] = p[top] + boost * (1 - p[top])
        rest = np.arange(len(p)) != top
        q[rest] = p[rest] * (1 - q[top]) / p[rest].sum()
        assert selection_probability(q) >= selection_probability(p) - 1e-15


class TestDecide:
    def test_certain(self):
        d = decide(np.ones(1000), "bernoulli", rng=stream(0, "test"))
        assert d.accepted.all()

    def test_bernoulli_rate(self):
        n = 100_000
        d = decide(np.full(n, 0.3), "bernoulli", rng=stream(1, "test"))
        se = math.sqrt(0.3 * 0.7 / n)
        assert abs(d.accepted.mean() - 0.3) < 3 * se

    def test_threshold_boundary(self):
        d = decide(np.array([0.79, 0.8, 0.95]), "threshold", threshold=0.8)
        np.testing.assert_array_equal(d.accepted, [False, True, True])
        np.testing.assert_array_equal(d.weight, [0, 1, 1])

    def test_expectation_weight_is_xi(self):
        xi = np.random.default_rng(0).random(50)
        d = decide(xi, "expectation")
        assert np.array_equal(d.weight, xi)

    def test_all(self):
        d = decide(np.array([0.0, 0.5]), "all")
        assert d.accepted.all() and np.all(d.weight == 1)

    def test_errors(self):
        with pytest.raises(ValueError):
            decide(np.array([0.5]), "nope")
        with pytest.raises(ValueError):
            decide(np.array([1.5]), "all")
        with pytest.raises(ValueError):
            decide(np.array([0.5]), "bernoulli")


class TestWeightedLoss:
    def test_plain_mean(self):
        losses = np.array([1.0, 2.0, 4.0])
        assert weighted_batch_loss(losses, np.ones(3), np.ones(3), np.ones(3)) == pytest.approx(7 / 3)

    def test_gate(self):
        losses = np.array([1.0, 100.0])
        assert weighted_batch_loss(losses, np.ones(2), np.ones(2), np.array([1, 0])) == pytest.approx(0.5)

    def test_normalized_by_batch(self):
        assert weighted_batch_loss(np.array([2.0, 2.0]), np.array([0.5, 0.0]), np.ones(2), np.ones(2)) == pytest.approx(0.5)

    def test_coefficients(self):
        c = sample_coefficients([0.5, 1.0], [2.0, 1.0], [1, 0])
        np.testing.assert_allclose(c, [0.5, 0.0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            weighted_batch_loss(np.ones(3), np.ones(2), np.ones(2), np.ones(2))
        with pytest.raises(ValueError):
            sample_coefficients([1.0], [-1.0], [1.0])

    def test_expectation_matches_sampling(self):
        rng = np.random.default_rng(0)
        n = 256
        losses = rng.exponential(size=n)
        xi = rng.random(n)
        w_div = 1 + rng.random(n)
        gate = rng.integers(0, 2, n)
        expected = weighted_batch_loss(losses, xi, w_div, gate)
        totals = []
        for rep in range(2000):
            d = decide(xi, "bernoulli", rng=stream(3, "test.bernoulli", rep))
            totals.append(weighted_batch_loss(losses, d.weight, w_div, gate))
        totals = np.array(totals)
        se = totals.std(ddof=1) / math.sqrt(len(totals))
        assert abs(totals.mean() - expected) < 3 * se


class TestHardLabel:
    def test_argmax(self):
        np.testing.assert_array_equal(hard_label(np.array([0.2, 0.5, 0.3])).probs, [0, 1, 0])

    def test_tie(self):
        np.testing.assert_array_equal(hard_label(np.array([0.5, 0.5])).probs, [1, 0])

    def test_idempotent(self):
        p = np.array([[0, 0, 1.0], [1.0, 0, 0]])
        np.testing.assert_array_equal(hard_label(p).probs, p)
