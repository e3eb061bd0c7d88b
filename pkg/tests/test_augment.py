import math

import numpy as np
import pytest

from sfdalab.augment import AugmentConfig, epoch_views, input_scale, strong_augment, weak_augment
from sfdalab.rng import stream


def test_weak_zero_sigma_is_identity():
    x = np.array([0.5, -1.0, 2.0])
    out = weak_augment(x, stream(0, "t"), np.ones(3), AugmentConfig(weak_noise_sigma=0.0))
    assert np.array_equal(out, x)


def test_weak_deterministic():
    x = np.random.default_rng(0).normal(size=(10, 3))
    a = weak_augment(x, stream(4, "t", 1), np.ones(3))
    b = weak_augment(x, stream(4, "t", 1), np.ones(3))
    assert np.array_equal(a, b)


def test_weak_noise_mean_zero():
    n = 10_000
    sigma = np.array([1.0, 2.0])
    x = np.tile([0.3, -0.7], (n, 1))
    dev = weak_augment(x, stream(1, "t"), sigma) - x
    se = 0.05 * sigma / math.sqrt(n)
    assert np.all(np.abs(dev.mean(axis=0)) < 3 * se)
    np.testing.assert_allclose(dev.std(axis=0), 0.05 * sigma, rtol=0.05)


def test_strong_vanishing_magnitude():
    x = np.array([1.0, -2.0, 0.5])
    cfg = AugmentConfig(strong_magnitude=1e-9, op_pool=["noise"])
    np.testing.assert_allclose(strong_augment(x, stream(0, "t"), cfg, np.ones(3)), x, atol=1e-8)


def test_mask_count():
    cfg = AugmentConfig(strong_magnitude=1.0, strong_ops_per_sample=1, op_pool=["mask"])
    out = strong_augment(np.ones(8), stream(2, "t"), cfg, np.ones(8))
    assert int(np.sum(out == 0)) == 2


def test_scale_range():
    cfg = AugmentConfig(strong_magnitude=0.8, strong_ops_per_sample=1, op_pool=["scale"])
    x = np.ones((2000, 3))
    factors = strong_augment(x, stream(3, "t"), cfg, np.ones(3))[:, 0]
    assert factors.min() >= 0.6 and factors.max() <= 1.4
    assert np.allclose(factors[:, None], strong_augment(x, stream(3, "t"), cfg, np.ones(3)))


def test_rotate_preserves_norm():
    cfg = AugmentConfig(strong_magnitude=1.0, strong_ops_per_sample=2, op_pool=["rotate"])
    x = np.random.default_rng(0).normal(size=(500, 4))
    out = strong_augment(x, stream(5, "t"), cfg, np.ones(4))
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), np.linalg.norm(x, axis=1), rtol=1e-12)
    assert not np.allclose(out, x)


def test_strong_displaces_more_than_weak():
    x = np.random.default_rng(0).normal(size=(1000, 2))
    sigma = input_scale(x)
    cfg = AugmentConfig()
    weak = np.linalg.norm(weak_augment(x, stream(0, "w"), sigma, cfg) - x, axis=1).mean()
    strong = np.linalg.norm(strong_augment(x, stream(0, "s"), cfg, sigma) - x, axis=1).mean()
    assert strong > weak


def test_single_matches_batch_layout():
    x = np.random.default_rng(1).normal(size=(1, 3))
    cfg = AugmentConfig()
    a = strong_augment(x[0], stream(9, "t"), cfg, np.ones(3))
    b = strong_augment(x, stream(9, "t"), cfg, np.ones(3))[0]
    assert np.array_equal(a, b)


def test_epoch_views_keyed():
    x = np.random.default_rng(2).normal(size=(50, 2))
    cfg = AugmentConfig()
    w1, s1 = epoch_views(x, 3, 0, cfg, np.ones(2))
    w2, s2 = epoch_views(x, 3, 0, cfg, np.ones(2))
    w3, _ = epoch_views(x, 3, 1, cfg, np.ones(2))
    assert np.array_equal(w1, w2) and np.array_equal(s1, s2)
    assert not np.array_equal(w1, w3)


@pytest.mark.parametrize("kwargs", [
    {"weak_noise_sigma": -0.1},
    {"strong_ops_per_sample": 0},
    {"strong_magnitude": 0.0},
    {"strong_magnitude": 1.5},
    {"op_pool": []},
    {"op_pool": ["blur"]},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        AugmentConfig(**kwargs)


def test_input_scale_zero_variance():
    np.testing.assert_array_equal(input_scale(np.array([[1.0, 2.0], [1.0, 4.0]])), [1.0, 1.0])
