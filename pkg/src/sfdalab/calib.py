"""Global statistics over the target set.

A memory bank keeps the latest weak-view probability and feature of every
target sample.  From it we derive confident class counts, class-wise loss
weights, class prototypes (mean features) and the prototype agreement gate.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .nn import LOG_FLOOR, ModelParams, forward, softmax

log = logging.getLogger(__name__)

DISTANCES = ("cosine", "euclidean")


class DegenerateCountsError(ValueError):
    """No sample is confidently predicted; class weights are undefined."""


@dataclass
class MemoryBank:
    probs: np.ndarray  # (n_t, K)
    features: np.ndarray  # (n_t, d)
    initialized: np.ndarray  # (n_t,) bool

    @classmethod
    def empty(cls, n: int, k: int, d: int) -> "MemoryBank":
        return cls(np.zeros((n, k)), np.zeros((n, d)), np.zeros(n, dtype=bool))

    def __len__(self) -> int:
        return len(self.probs)


@dataclass
class ClassStats:
    alpha: np.ndarray
    w_div: np.ndarray
    prototypes: np.ndarray
    prototype_valid: np.ndarray


def bank_init(params: ModelParams, weak_inputs: np.ndarray, batch_size: int = 512) -> MemoryBank:
    """Fill every row with a forward pass over (already weak-augmented) inputs, in order."""
    weak_inputs = np.asarray(weak_inputs, dtype=np.float64)
    n = len(weak_inputs)
    if n == 0:
        raise ValueError("cannot build a memory bank from an empty dataset")
    bank = MemoryBank.empty(n, params.class_count, params.feature_dim)
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        feats, logits = forward(params, weak_inputs[idx])
        bank_update(bank, idx, softmax(logits), feats)
    return bank


def bank_update(bank: MemoryBank, sample_indices, probs, features) -> None:
    """Overwrite the given rows; with repeated indices the last write wins."""
    idx = np.asarray(sample_indices)
    if idx.size and (idx.min() < 0 or idx.max() >= len(bank)):
        raise IndexError(f"sample index out of range for a bank of {len(bank)} rows")
    probs = np.asarray(probs)
    features = np.asarray(features)
    # keep only the last occurrence of each index
    rev_unique, rev_pos = np.unique(idx[::-1], return_index=True)
    src = len(idx) - 1 - rev_pos
    bank.probs[rev_unique] = probs[src]
    bank.features[rev_unique] = features[src]
    bank.initialized[rev_unique] = True


def class_counts(probs: np.ndarray, tau: float) -> np.ndarray:
    """``alpha_c = #{i : max_k p_ik > tau and argmax_k p_ik = c}``."""
    probs = probs.probs if isinstance(probs, MemoryBank) else np.asarray(probs)
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"tau must lie in [0, 1), got {tau}")
    confident = probs.max(axis=1) > tau
    return np.bincount(probs.argmax(axis=1)[confident], minlength=probs.shape[1])


def class_weights(alpha) -> np.ndarray:
    """``1 - ln(alpha_c / max alpha)``, zero counts replaced by the smallest non-zero count."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha < 0):
        raise ValueError("counts must be non-negative")
    positive = alpha[alpha > 0]
    if positive.size == 0:
        raise DegenerateCountsError("no confidently predicted samples; class weights undefined")
    filled = np.where(alpha > 0, alpha, positive.min())
    return 1.0 - np.log(filled / filled.max())


def compute_prototypes(bank_or_probs, features: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Mean feature per predicted class; ``valid[c]`` is False for empty classes."""
    if isinstance(bank_or_probs, MemoryBank):
        probs, features = bank_or_probs.probs, bank_or_probs.features
    else:
        probs = np.asarray(bank_or_probs)
    k = probs.shape[1]
    pred = probs.argmax(axis=1)
    counts = np.bincount(pred, minlength=k)
    sums = np.zeros((k, features.shape[1]))
    np.add.at(sums, pred, features)
    valid = counts > 0
    eta = np.zeros_like(sums)
    eta[valid] = sums[valid] / counts[valid, None]
    return eta, valid


def proto_agreement(features, probs, eta, valid, distance: str = "cosine") -> np.ndarray:
    """1 where the nearest valid prototype is the predicted class, else 0.

    Samples predicted as a class without a valid prototype are accepted.
    """
    if distance not in DISTANCES:
        raise ValueError(f"unknown distance {distance!r}")
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise ValueError("need at least one valid prototype")
    pred = probs.argmax(axis=1)
    if distance == "cosine":
        norms = np.linalg.norm(features, axis=1)
        if np.any(norms == 0):
            raise ValueError("zero-norm feature has no cosine distance")
        proto = eta[valid]
        proto_norms = np.linalg.norm(proto, axis=1, keepdims=True)
        proto = proto / np.where(proto_norms > 0, proto_norms, 1.0)
        dist = 1.0 - (features / norms[:, None]) @ proto.T
    else:
        diff = features[:, None, :] - eta[valid][None, :, :]
        dist = np.sum(diff * diff, axis=2)
    nearest = np.flatnonzero(valid)[dist.argmin(axis=1)]
    gate = (nearest == pred) | ~valid[pred]
    return gate.astype(np.int64)


def refresh_stats(bank: MemoryBank, tau: float, previous: ClassStats | None = None) -> ClassStats:
    """Recompute counts, weights and prototypes from the bank.

    Weights fall back to ones when nothing is confident; classes that lost
    all their samples keep the previous prototype.
    """
    alpha = class_counts(bank.probs, tau)
    try:
        w_div = class_weights(alpha)
    except DegenerateCountsError:
        log.info("no confident predictions in the bank; using unit class weights")
        w_div = np.ones(len(alpha))
    eta, valid = compute_prototypes(bank)
    if previous is not None:
        keep = ~valid & previous.prototype_valid
        eta[keep] = previous.prototypes[keep]
        valid = valid | keep
    return ClassStats(alpha=alpha, w_div=w_div, prototypes=eta, prototype_valid=valid)


def diversity_loss(mean_probs) -> float:
    """KL divergence of the mean prediction from uniform, ``sum_k p_k log(K p_k)``."""
    p = np.asarray(mean_probs, dtype=np.float64)
    k = p.shape[-1]
    return float(np.sum(p * np.log(np.maximum(k * p, LOG_FLOOR))))


def diversity_loss_grad(probs: np.ndarray) -> np.ndarray:
    """Gradient of ``diversity_loss(probs.mean(0))`` w.r.t. the logits behind ``probs``."""
    probs = np.asarray(probs, dtype=np.float64)
    b, k = probs.shape
    mean = probs.mean(axis=0)
    kp = k * mean
    # d/dp_k [p_k log(max(K p_k, floor))]
    g = np.log(np.maximum(kp, LOG_FLOOR)) + (kp > LOG_FLOOR)
    return probs * (g[None, :] - (probs @ g)[:, None]) / b
