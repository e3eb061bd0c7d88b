"""Weak and strong stochastic views for vector inputs.

The weak view adds mild Gaussian noise.  The strong view composes
``strong_ops_per_sample`` operations drawn with replacement from the op pool,
each at ``strong_magnitude`` (m):

``noise``
    Gaussian noise with per-dimension std ``4 * weak_noise_sigma * m * sigma_dim``.
``mask``
    zero ``round(0.25 * m * n_in)`` randomly chosen coordinates.
``scale``
    multiply by a factor drawn from ``U[1 - m/2, 1 + m/2]``.
``rotate``
    rotate a uniformly chosen coordinate pair by an angle from
    ``U[-m*pi/4, m*pi/4]``.

``sigma_dim`` is the per-dimension standard deviation of the target-train
inputs, fitted once per run (see :func:`input_scale`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import stream

OPS = ("noise", "mask", "scale", "rotate")


@dataclass
class AugmentConfig:
    weak_noise_sigma: float = 0.05
    strong_ops_per_sample: int = 2
    strong_magnitude: float = 0.5
    op_pool: list[str] = field(default_factory=lambda: list(OPS))

    def __post_init__(self):
        if self.weak_noise_sigma < 0:
            raise ValueError("weak_noise_sigma must be non-negative")
        if self.strong_ops_per_sample < 1:
            raise ValueError("strong_ops_per_sample must be at least 1")
        if not 0.0 < self.strong_magnitude <= 1.0:
            raise ValueError("strong_magnitude must lie in (0, 1]")
        if not self.op_pool:
            raise ValueError("op_pool must not be empty")
        unknown = [op for op in self.op_pool if op not in OPS]
        if unknown:
            raise ValueError(f"unknown augmentation op(s) {unknown}; known: {list(OPS)}")


def input_scale(inputs: np.ndarray) -> np.ndarray:
    """Per-dimension std used to scale augmentation noise (zeros become 1)."""
    sigma = np.asarray(inputs, dtype=np.float64).std(axis=0)
    return np.where(sigma > 0, sigma, 1.0)


def weak_augment(x: np.ndarray, rng: np.random.Generator, sigma: np.ndarray, cfg: AugmentConfig | None = None) -> np.ndarray:
    """``x + N(0, (weak_noise_sigma * sigma)^2)``; works on one sample or a batch."""
    cfg = cfg or AugmentConfig()
    x = np.asarray(x, dtype=np.float64)
    noise = rng.standard_normal(x.shape)
    if cfg.weak_noise_sigma == 0:
        return x.copy()
    return x + noise * (cfg.weak_noise_sigma * sigma)


def strong_augment(x: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig, sigma: np.ndarray) -> np.ndarray:
    """Apply ``cfg.strong_ops_per_sample`` random ops; one sample or a batch.

    All random numbers for the batch are drawn up front in a fixed layout
    (row ``i`` of every table belongs to ``x[i]``).
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x).copy()
    n, d = xb.shape
    n_ops = cfg.strong_ops_per_sample
    m = cfg.strong_magnitude
    pool = np.array([OPS.index(op) for op in cfg.op_pool])

    op_ids = pool[rng.integers(0, len(pool), size=(n, n_ops))]
    normals = rng.standard_normal((n, n_ops, d))
    mask_keys = rng.random((n, n_ops, d))
    u = rng.random((n, n_ops))
    pair_u = rng.random((n, n_ops))

    n_mask = int(round(0.25 * m * d))
    pairs = [(a, b) for a in range(d) for b in range(a + 1, d)]
    noise_std = 4.0 * cfg.weak_noise_sigma * m * sigma

    for j in range(n_ops):
        op = op_ids[:, j]
        rows = op == 0
        if rows.any():
            xb[rows] += normals[rows, j] * noise_std
        rows = op == 1
        if rows.any() and n_mask > 0:
            order = np.argsort(mask_keys[rows, j], axis=1, kind="stable")[:, :n_mask]
            sub = xb[rows]
            np.put_along_axis(sub, order, 0.0, axis=1)
            xb[rows] = sub
        rows = op == 2
        if rows.any():
            xb[rows] *= (1.0 + 0.5 * m * (2.0 * u[rows, j] - 1.0))[:, None]
        rows = np.flatnonzero(op == 3)
        if rows.size and pairs:
            choice = np.minimum((pair_u[rows, j] * len(pairs)).astype(int), len(pairs) - 1)
            theta = m * (math.pi / 4) * (2.0 * u[rows, j] - 1.0)
            c, s = np.cos(theta), np.sin(theta)
            for k, (a, b) in enumerate(pairs):
                sel = rows[choice == k]
                if sel.size == 0:
                    continue
                ck, sk = c[choice == k], s[choice == k]
                col_a, col_b = xb[sel, a].copy(), xb[sel, b].copy()
                xb[sel, a] = ck * col_a - sk * col_b
                xb[sel, b] = sk * col_a + ck * col_b
    return xb[0] if single else xb


def epoch_views(inputs: np.ndarray, seed: int, epoch: int, cfg: AugmentConfig, sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Weak and strong views of every sample for one epoch.

    Each view is keyed by ``(seed, view tag, epoch)`` and row ``i`` always
    belongs to sample ``i``, so views do not depend on batch composition.
    """
    weak = weak_augment(inputs, stream(seed, "augment.weak", epoch), sigma, cfg)
    strong = strong_augment(inputs, stream(seed, "augment.strong", epoch), cfg, sigma)
    return weak, strong


def bank_views(inputs: np.ndarray, seed: int, cfg: AugmentConfig, sigma: np.ndarray) -> np.ndarray:
    """Weak views used for the initial memory-bank pass."""
    return weak_augment(inputs, stream(seed, "augment.bank_init"), sigma, cfg)
