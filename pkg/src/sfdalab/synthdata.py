"""Synthetic source/target domain pairs built from Gaussian class blobs.

Source samples are ``N(mean_y, cov_scale * I)`` with uniformly drawn labels.
Target samples come from the same blobs with labels drawn from
``target_class_weights`` and are then mapped by ``x -> scale * R x +
translation`` (``R`` rotates the coordinate plane ``rotation_plane``).  One
target draw is split into train and test parts, so the two are i.i.d.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .rng import stream

log = logging.getLogger(__name__)

SPLITS = ("source", "target_train", "target_test")
DATASET_MAGIC = "#sfdalab-dataset"
DATASET_VERSION = 1


def circle_means(k: int, radius: float = 1.0) -> list[list[float]]:
    angles = 2.0 * math.pi * np.arange(k) / k
    return [[radius * math.cos(a), radius * math.sin(a)] for a in angles]


@dataclass
class DomainShiftSpec:
    class_means: list[list[float]] = field(default_factory=lambda: circle_means(4))
    class_cov_scale: float = 0.15
    rotation_angle: float = math.pi / 6
    rotation_plane: tuple[int, int] = (0, 1)
    translation: list[float] = field(default_factory=lambda: [0.3, -0.2])
    scale: float = 1.1
    target_class_weights: list[float] = field(default_factory=lambda: [0.25] * 4)
    n_source: int = 4000
    n_target_train: int = 2000
    n_target_test: int = 2000
    seed: int = 0

    @property
    def class_count(self) -> int:
        return len(self.class_means)

    @property
    def input_dim(self) -> int:
        return len(self.class_means[0])

    def validate(self) -> None:
        means = np.asarray(self.class_means, dtype=np.float64)
        k, n_in = self.class_count, self.input_dim
        if means.ndim != 2 or k < 2:
            raise ValueError("class_means must be a K x n_in matrix with K >= 2")
        for a in range(k):
            for b in range(a + 1, k):
                if np.array_equal(means[a], means[b]):
                    raise ValueError(f"class means {a} and {b} coincide")
        if self.class_cov_scale <= 0:
            raise ValueError("class_cov_scale must be positive")
        if len(self.translation) != n_in:
            raise ValueError(f"translation must have {n_in} entries")
        p, q = self.rotation_plane
        if not (0 <= p < n_in and 0 <= q < n_in and p != q) and self.rotation_angle != 0:
            raise ValueError(f"rotation_plane {self.rotation_plane} invalid for {n_in} dimensions")
        w = np.asarray(self.target_class_weights, dtype=np.float64)
        if len(w) != k or np.any(w < 0) or not math.isclose(w.sum(), 1.0, abs_tol=1e-9):
            raise ValueError("target_class_weights must be a length-K probability vector")
        for name in ("n_source", "n_target_train", "n_target_test"):
            if getattr(self, name) < k:
                raise ValueError(f"{name} must be at least K={k}")

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form."""
        blob = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def default_spec(seed: int = 0) -> DomainShiftSpec:
    return DomainShiftSpec(seed=seed)


def imbalanced_spec(seed: int = 0) -> DomainShiftSpec:
    return DomainShiftSpec(target_class_weights=[0.05, 0.35, 0.30, 0.30], seed=seed)


def identity_spec(seed: int = 0) -> DomainShiftSpec:
    return DomainShiftSpec(rotation_angle=0.0, translation=[0.0, 0.0], scale=1.0, seed=seed)


def diagonal_spec(seed: int = 0) -> DomainShiftSpec:
    """45 degree rotation: every target mean lands on a source decision boundary."""
    return DomainShiftSpec(rotation_angle=math.pi / 4, seed=seed)


PRESETS = {"default": default_spec, "imbalanced": imbalanced_spec, "identity": identity_spec, "diagonal": diagonal_spec}


@dataclass
class Split:
    inputs: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class Standardization:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


@dataclass
class DomainPair:
    source: Split
    target_train: Split
    target_test: Split
    class_count: int
    stats: Standardization | None = None

    def split(self, name: str) -> Split:
        if name not in SPLITS:
            raise KeyError(f"unknown split {name!r}")
        return getattr(self, name)


def _rotation(n_in: int, plane: tuple[int, int], angle: float) -> np.ndarray:
    r = np.eye(n_in)
    if angle != 0:
        p, q = plane
        c, s = math.cos(angle), math.sin(angle)
        r[p, p], r[p, q], r[q, p], r[q, q] = c, -s, s, c
    return r


def _blobs(rng: np.random.Generator, means: np.ndarray, labels: np.ndarray, cov_scale: float) -> np.ndarray:
    noise = rng.standard_normal((len(labels), means.shape[1]))
    return means[labels] + math.sqrt(cov_scale) * noise


def generate(spec: DomainShiftSpec) -> DomainPair:
    spec.validate()
    k = spec.class_count
    means = np.asarray(spec.class_means, dtype=np.float64)

    rng = stream(spec.seed, "data.source")
    src_labels = rng.integers(0, k, size=spec.n_source)
    src = Split(_blobs(rng, means, src_labels, spec.class_cov_scale), src_labels)

    rng = stream(spec.seed, "data.target")
    n_t = spec.n_target_train + spec.n_target_test
    weights = np.asarray(spec.target_class_weights, dtype=np.float64)
    tgt_labels = rng.choice(k, size=n_t, p=weights / weights.sum())
    x = _blobs(rng, means, tgt_labels, spec.class_cov_scale)
    rot = _rotation(spec.input_dim, spec.rotation_plane, spec.rotation_angle)
    x = spec.scale * x @ rot.T + np.asarray(spec.translation, dtype=np.float64)
    cut = spec.n_target_train
    return DomainPair(
        source=src,
        target_train=Split(x[:cut], tgt_labels[:cut]),
        target_test=Split(x[cut:], tgt_labels[cut:]),
        class_count=k,
    )


def standardize(pair: DomainPair) -> DomainPair:
    """Shift and scale every split by statistics of the source split only."""
    x = pair.source.inputs
    if len(x) == 0:
        raise ValueError("cannot standardize without source samples")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    flat = std == 0
    if flat.any():
        log.warning("source has zero variance in dimension(s) %s; left unscaled", np.flatnonzero(flat).tolist())
        std = np.where(flat, 1.0, std)
    stats = Standardization(mean, std)
    return replace(
        pair,
        source=Split(stats.apply(pair.source.inputs), pair.source.labels),
        target_train=Split(stats.apply(pair.target_train.inputs), pair.target_train.labels),
        target_test=Split(stats.apply(pair.target_test.inputs), pair.target_test.labels),
        stats=stats,
    )


# -- columnar text format ------------------------------------------------------
#
#   #sfdalab-dataset 1 K=4 n_in=2 source=4000 target_train=2000 target_test=2000
#   split,label,x0,x1
#   source,2,0.123...,-1.05...
#
# values are written with 17 significant digits, rows grouped by split.

def write_dataset(pair: DomainPair, path) -> None:
    n_in = pair.source.inputs.shape[1] if len(pair.source) else pair.target_train.inputs.shape[1]
    sizes = " ".join(f"{name}={len(pair.split(name))}" for name in SPLITS)
    lines = [
        f"{DATASET_MAGIC} {DATASET_VERSION} K={pair.class_count} n_in={n_in} {sizes}",
        ",".join(["split", "label"] + [f"x{j}" for j in range(n_in)]),
    ]
    for name in SPLITS:
        sp = pair.split(name)
        for label, row in zip(sp.labels, sp.inputs):
            lines.append(",".join([name, str(int(label))] + [format(float(v), ".17g") for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")


class DatasetFormatError(ValueError):
    pass


def read_dataset(path) -> DomainPair:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DatasetFormatError(f"cannot read dataset {path}: {exc}") from exc
    lines = text.splitlines()
    try:
        head = lines[0].split()
        if head[0] != DATASET_MAGIC or int(head[1]) != DATASET_VERSION:
            raise DatasetFormatError("not a dataset file")
        meta = dict(item.split("=") for item in head[2:])
        k, n_in = int(meta["K"]), int(meta["n_in"])
        sizes = {name: int(meta[name]) for name in SPLITS}
        rows = {name: ([], []) for name in SPLITS}
        for line in lines[2:]:
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != n_in + 2:
                raise DatasetFormatError(f"row has {len(cells)} cells, expected {n_in + 2}")
            labels, values = rows[cells[0]]
            labels.append(int(cells[1]))
            values.append([float(c) for c in cells[2:]])
    except DatasetFormatError:
        raise
    except (IndexError, KeyError, ValueError) as exc:
        raise DatasetFormatError(f"corrupt dataset file: {exc}") from exc
    splits = {}
    for name in SPLITS:
        labels, values = rows[name]
        if len(labels) != sizes[name]:
            raise DatasetFormatError(f"{name}: header says {sizes[name]} rows, found {len(labels)}")
        lab = np.array(labels, dtype=np.int64)
        if lab.size and (lab.min() < 0 or lab.max() >= k):
            raise DatasetFormatError(f"{name}: label outside [0, {k})")
        splits[name] = Split(np.array(values, dtype=np.float64).reshape(-1, n_in), lab)
    return DomainPair(class_count=k, **splits)
