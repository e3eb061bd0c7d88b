"""Pseudo-labels for consistency training: sharpening, the soft cross-entropy
between a weak-view label and a strong-view prediction, and confidence-based
sample selection.

All functions accept a single vector or a batch (rows = samples).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import soft_cross_entropy, softmax

SELECTION_MODES = ("expectation", "bernoulli", "threshold", "all")


@dataclass
class SoftPseudoLabel:
    probs: np.ndarray

    @property
    def confidence(self) -> np.ndarray:
        return self.probs.max(axis=-1)

    @property
    def predicted_class(self) -> np.ndarray:
        # np.argmax already returns the lowest index on ties
        return self.probs.argmax(axis=-1)


@dataclass
class SelectionDecision:
    xi: np.ndarray
    mode: str
    accepted: np.ndarray
    weight: np.ndarray


def sharpen(logits: np.ndarray, temperature: float) -> SoftPseudoLabel:
    """Temperature softmax ``exp(h_k/T) / sum_j exp(h_j/T)``."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return SoftPseudoLabel(softmax(np.asarray(logits, dtype=np.float64) / temperature))


def hard_label(probs: np.ndarray) -> SoftPseudoLabel:
    """One-hot at the argmax (lowest index wins ties)."""
    probs = np.asarray(probs, dtype=np.float64)
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, probs.argmax(axis=-1)[..., None], 1.0, axis=-1)
    return SoftPseudoLabel(onehot)


def consistency_loss(pseudo: SoftPseudoLabel | np.ndarray, strong_probs: np.ndarray) -> np.ndarray:
    """``H(p_hat, p')``.  The pseudo-label is a constant target (no gradient)."""
    target = pseudo.probs if isinstance(pseudo, SoftPseudoLabel) else np.asarray(pseudo)
    return soft_cross_entropy(target, strong_probs)


def selection_probability(probs: np.ndarray) -> np.ndarray:
    """Selection probability from the identity mapping of the top probability."""
    return np.asarray(probs, dtype=np.float64).max(axis=-1)


def decide(xi, mode: str, rng: np.random.Generator | None = None, threshold: float = 0.8) -> SelectionDecision:
    """Turn selection probabilities into loss weights.

    ``expectation`` weights each sample by ``xi``; ``bernoulli`` keeps it with
    probability ``xi``; ``threshold`` keeps it iff ``xi >= threshold``; ``all``
    keeps everything.  Kept samples have weight 1 outside expectation mode.
    """
    xi = np.asarray(xi, dtype=np.float64)
    if np.any((xi < 0) | (xi > 1)):
        raise ValueError("xi must lie in [0, 1]")
    if mode == "expectation":
        accepted = np.ones(xi.shape, dtype=bool)
        weight = xi.copy()
    elif mode == "bernoulli":
        if rng is None:
            raise ValueError("bernoulli selection needs a random stream")
        accepted = rng.random(xi.shape) < xi
        weight = accepted.astype(np.float64)
    elif mode == "threshold":
        if not 0.0 <= threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        accepted = xi >= threshold
        weight = accepted.astype(np.float64)
    elif mode == "all":
        accepted = np.ones(xi.shape, dtype=bool)
        weight = np.ones(xi.shape)
    else:
        raise ValueError(f"unknown selection mode {mode!r}; expected one of {SELECTION_MODES}")
    return SelectionDecision(xi=xi, mode=mode, accepted=accepted, weight=weight)


def sample_coefficients(xis, w_div, w_proto) -> np.ndarray:
    """Per-sample multipliers of :func:`weighted_batch_loss` (they include 1/B)."""
    xis, w_div, w_proto = (np.asarray(a, dtype=np.float64) for a in (xis, w_div, w_proto))
    if not xis.shape == w_div.shape == w_proto.shape:
        raise ValueError(f"length mismatch: {xis.shape}, {w_div.shape}, {w_proto.shape}")
    for arr in (xis, w_div, w_proto):
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ValueError("weights must be finite and non-negative")
    return xis * w_div * w_proto * (1.0 / len(xis))


def weighted_batch_loss(losses, xis, w_div, w_proto) -> float:
    """``(1/B) sum_i xi_i * w_div_i * w_proto_i * loss_i`` (normalized by B, not by the weights)."""
    losses = np.asarray(losses, dtype=np.float64)
    coef = sample_coefficients(xis, w_div, w_proto)
    if losses.shape != coef.shape:
        raise ValueError(f"length mismatch: losses {losses.shape} vs weights {coef.shape}")
    return float(np.sum(coef * losses))
