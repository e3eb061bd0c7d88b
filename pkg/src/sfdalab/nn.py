"""Minimal differentiable core: an MLP feature extractor followed by a
weight-normalized linear classifier, with exact backpropagation.

Architecture ``arch = [n_in, h_1, ..., d, K]``:

* extractor layers ``n_in -> h_1 -> ... -> d``; ReLU after every layer except
  the last, whose (identity) output is the feature ``z``
* classifier ``logits = z @ W.T`` with ``W[c] = scale[c] * v[c] / ||v[c]||``
  (no bias)

Everything is float64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import stream

LOG_FLOOR = 1e-12
CHECKPOINT_MAGIC = "sfdalab-checkpoint"
CHECKPOINT_VERSION = 1


class NumericalError(FloatingPointError):
    """A non-finite value appeared in a loss, gradient or parameter."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class CheckpointError(ValueError):
    pass


@dataclass
class ModelParams:
    extractor: list[tuple[np.ndarray, np.ndarray]]
    direction: np.ndarray  # (K, d) weight-norm direction v
    scale: np.ndarray  # (K,) weight-norm magnitude

    @property
    def feature_dim(self) -> int:
        return self.direction.shape[1]

    @property
    def class_count(self) -> int:
        return self.direction.shape[0]

    @property
    def arch(self) -> list[int]:
        return [self.extractor[0][0].shape[1]] + [w.shape[0] for w, _ in self.extractor] + [self.class_count]

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Every learnable array, in checkpoint order (references, not copies)."""
        out = []
        for i, (w, b) in enumerate(self.extractor):
            out.append((f"extractor.{i}.weight", w))
            out.append((f"extractor.{i}.bias", b))
        out.append(("classifier.direction", self.direction))
        out.append(("classifier.scale", self.scale))
        return out

    def classifier_weight(self) -> np.ndarray:
        norms = np.linalg.norm(self.direction, axis=1)
        return (self.scale / norms)[:, None] * self.direction

    def copy(self) -> "ModelParams":
        return ModelParams(
            extractor=[(w.copy(), b.copy()) for w, b in self.extractor],
            direction=self.direction.copy(),
            scale=self.scale.copy(),
        )

    def zeros_like(self) -> "ModelParams":
        return ModelParams(
            extractor=[(np.zeros_like(w), np.zeros_like(b)) for w, b in self.extractor],
            direction=np.zeros_like(self.direction),
            scale=np.zeros_like(self.scale),
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for _, a in self.named_arrays())


@dataclass
class OptState:
    velocity: ModelParams
    momentum: float = 0.9
    weight_decay: float = 1e-3

    @classmethod
    def for_params(cls, params: ModelParams, momentum: float = 0.9, weight_decay: float = 1e-3) -> "OptState":
        return cls(params.zeros_like(), momentum, weight_decay)


@dataclass
class Batch:
    inputs: np.ndarray
    sample_indices: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        if len(self.inputs) < 1:
            raise ValueError("empty batch")
        if len(np.unique(self.sample_indices)) != len(self.sample_indices):
            raise ValueError("sample indices must be unique within a batch")


def _uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    # He-uniform: U(-b, b) with b = sqrt(6 / fan_in)
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def init_params(arch: list[int], seed: int) -> ModelParams:
    """Deterministic initialization.

    Weights are He-uniform ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``, biases zero.
    The classifier draws a full matrix the same way, uses it as the direction
    and sets ``scale`` to its row norms so the effective weights equal the draw.
    """
    arch = [int(a) for a in arch]
    if len(arch) < 3:
        raise ValueError(f"arch needs at least an input, a feature and an output size, got {arch}")
    if any(a <= 0 for a in arch):
        raise ValueError(f"all layer sizes must be positive, got {arch}")
    if arch[-1] < 2:
        raise ValueError("need at least two classes")
    rng = stream(seed, "init")
    extractor = []
    for fan_in, fan_out in zip(arch[:-2], arch[1:-1]):
        extractor.append((_uniform(rng, fan_in, fan_out), np.zeros(fan_out)))
    w = _uniform(rng, arch[-2], arch[-1])
    return ModelParams(extractor=extractor, direction=w, scale=np.linalg.norm(w, axis=1))


def _check_inputs(params: ModelParams, inputs: np.ndarray) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float64)
    n_in = params.extractor[0][0].shape[1]
    if inputs.ndim != 2 or inputs.shape[1] != n_in:
        raise ValueError(f"expected inputs of shape (B, {n_in}), got {inputs.shape}")
    return inputs


def _extract(params: ModelParams, inputs: np.ndarray):
    """Run the extractor, returning the activations needed for backprop."""
    acts = [inputs]  # inputs to each layer
    pre = []
    h = inputs
    last = len(params.extractor) - 1
    for i, (w, b) in enumerate(params.extractor):
        a = h @ w.T + b
        pre.append(a)
        h = np.maximum(a, 0.0) if i < last else a
        acts.append(h)
    return acts, pre


def forward(params: ModelParams, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(features, logits)`` for a batch of inputs."""
    inputs = _check_inputs(params, inputs)
    acts, _ = _extract(params, inputs)
    features = acts[-1]
    return features, features @ params.classifier_weight().T


def backward(params: ModelParams, inputs: np.ndarray, grad_logits: np.ndarray) -> ModelParams:
    """Gradients of a scalar loss given ``dL/dlogits``, shaped like ``params``."""
    inputs = _check_inputs(params, inputs)
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    if grad_logits.shape != (len(inputs), params.class_count):
        raise ValueError(f"grad_logits shape {grad_logits.shape} does not match batch {len(inputs)} x {params.class_count}")
    acts, pre = _extract(params, inputs)
    z = acts[-1]

    v, g = params.direction, params.scale
    norms = np.linalg.norm(v, axis=1)
    w_eff = (g / norms)[:, None] * v
    d_weff = grad_logits.T @ z
    # weight-norm chain rule
    d_scale = np.sum(d_weff * v, axis=1) / norms
    d_dir = (g / norms)[:, None] * (d_weff - (d_scale / norms)[:, None] * v)

    grads = []
    d_a = grad_logits @ w_eff
    for i in range(len(params.extractor) - 1, -1, -1):
        w, _ = params.extractor[i]
        grads.append((d_a.T @ acts[i], d_a.sum(axis=0)))
        if i > 0:
            d_a = (d_a @ w) * (pre[i - 1] > 0)
    grads.reverse()
    return ModelParams(extractor=grads, direction=d_dir, scale=d_scale)


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise NumericalError("softmax received non-finite logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def soft_cross_entropy(target: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Per-sample ``-sum_k target_k log probs_k`` with ``log`` floored at 1e-12."""
    return -np.sum(target * np.log(np.maximum(probs, LOG_FLOOR)), axis=-1)


def soft_cross_entropy_grad(target: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """``d soft_cross_entropy / d logits`` per sample, where ``probs = softmax(logits)``.

    Entries clamped by the log floor contribute no gradient.
    """
    live = target * (probs > LOG_FLOOR)
    return probs * live.sum(axis=-1, keepdims=True) - live


def label_smoothed_ce(logits: np.ndarray, labels: np.ndarray, eps: float) -> float:
    loss, _ = label_smoothed_ce_with_grad(logits, labels, eps)
    return loss


def label_smoothed_ce_with_grad(logits: np.ndarray, labels: np.ndarray, eps: float) -> tuple[float, np.ndarray]:
    """Mean cross-entropy against ``(1-eps)*onehot + eps/K`` and its logit gradient."""
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"smoothing must lie in [0, 1), got {eps}")
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    k = logits.shape[1]
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    target = np.full(logits.shape, eps / k)
    target[np.arange(len(labels)), labels] += 1.0 - eps
    probs = softmax(logits)
    b = len(labels)
    return float(soft_cross_entropy(target, probs).mean()), soft_cross_entropy_grad(target, probs) / b


def sgd_momentum_step(params: ModelParams, grads: ModelParams, state: OptState, lr: float):
    """Classical momentum with coupled weight decay, applied in place.

    ``v <- momentum*v + grad + weight_decay*theta``; ``theta <- theta - lr*v``.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    triples = zip(params.named_arrays(), grads.named_arrays(), state.velocity.named_arrays())
    for (name, theta), (_, grad), (_, vel) in triples:
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite gradient for {name}")
        vel *= state.momentum
        vel += grad
        if state.weight_decay:
            vel += state.weight_decay * theta
        theta -= lr * vel
    return params, state


def lr_at_progress(gamma0: float, p: float) -> float:
    """``gamma0 * (1 + 10 p) ** -0.75`` for training progress ``p`` in [0, 1]."""
    if gamma0 <= 0:
        raise ValueError("gamma0 must be positive")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"progress must lie in [0, 1], got {p}")
    return gamma0 * (1.0 + 10.0 * p) ** -0.75


# -- checkpoints -------------------------------------------------------------

def checkpoint_text(params: ModelParams) -> str:
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}", "arch " + " ".join(map(str, params.arch))]
    arrays = params.named_arrays()
    for name, arr in arrays:
        lines.append(f"array {name} " + " ".join(map(str, arr.shape)))
        lines.append(" ".join(format(float(x), ".17g") for x in arr.ravel()))
    lines.append(f"end {len(arrays)}")
    return "\n".join(lines) + "\n"


def save_checkpoint(params: ModelParams, path) -> None:
    Path(path).write_text(checkpoint_text(params))


def parse_checkpoint(text: str) -> ModelParams:
    lines = text.splitlines()
    try:
        magic, version = lines[0].split()
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError("not a checkpoint file")
        if int(version) != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        head, *arch = lines[1].split()
        if head != "arch":
            raise CheckpointError("missing arch line")
        params = init_params([int(a) for a in arch], seed=0)
        expected = params.named_arrays()
        pos = 2
        for name, arr in expected:
            tag, got_name, *shape = lines[pos].split()
            if tag != "array" or got_name != name or tuple(map(int, shape)) != arr.shape:
                raise CheckpointError(f"unexpected array header {lines[pos]!r}, wanted {name} {arr.shape}")
            values = np.array([float(x) for x in lines[pos + 1].split()], dtype=np.float64)
            if values.size != arr.size:
                raise CheckpointError(f"{name}: expected {arr.size} values, found {values.size}")
            arr[...] = values.reshape(arr.shape)
            pos += 2
        if lines[pos].split() != ["end", str(len(expected))]:
            raise CheckpointError("missing or malformed end marker")
    except CheckpointError:
        raise
    except (IndexError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    if not params.is_finite():
        raise CheckpointError("checkpoint contains non-finite values")
    return params


def load_checkpoint(path) -> ModelParams:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return parse_checkpoint(text)
