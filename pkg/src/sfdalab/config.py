"""Flat experiment configuration with dotted keys.

A config file is a JSON object whose keys are dotted names such as
``adapt.lr`` or ``calib.tau``.  Only ``seed`` is required; everything else
falls back to the defaults in :data:`KEYS`.  ``data.*`` keys left unset are
taken from the chosen ``data.preset``.  A run manifest (which stores the
resolved config under ``"config"``) is accepted wherever a config is.

>>> cfg = resolve({"seed": 3, "adapt.epochs": 5})
>>> cfg["adapt.epochs"], cfg["calib.tau"]
(5, 0.8)
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, replace
from pathlib import Path

from . import synthdata
from .augment import OPS, AugmentConfig
from .calib import DISTANCES
from .engine import AdaptConfig, PretrainConfig
from .pseudo import SELECTION_MODES


class ConfigError(ValueError):
    """Invalid or incomplete configuration; the message names the key."""


_SPEC_FIELDS = {
    "data.class_means": "class_means",
    "data.class_cov_scale": "class_cov_scale",
    "data.rotation_angle": "rotation_angle",
    "data.rotation_plane": "rotation_plane",
    "data.translation": "translation",
    "data.scale": "scale",
    "data.target_class_weights": "target_class_weights",
    "data.n_source": "n_source",
    "data.n_target_train": "n_target_train",
    "data.n_target_test": "n_target_test",
}

_ad = AdaptConfig()
_pre = PretrainConfig()
_aug = AugmentConfig()


def _positive(v):
    return None if v > 0 else "must be positive"


def _non_negative(v):
    return None if v >= 0 else "must be non-negative"


def _unit_open(v):
    return None if 0 <= v < 1 else "must lie in [0, 1)"


def _unit_closed(v):
    return None if 0 <= v <= 1 else "must lie in [0, 1]"


def _one_of(options):
    return lambda v: None if v in options else f"must be one of {list(options)}"


def _arch(v):
    if len(v) < 3 or any(not isinstance(s, int) or s <= 0 for s in v):
        return "must list at least three positive layer sizes"
    return None


def _ops(v):
    if not v or any(op not in OPS for op in v):
        return f"must be a non-empty list drawn from {list(OPS)}"
    return None


# key -> (default, type, check).  Types: int, float, bool, str, list, "str?" (string or null)
KEYS: dict[str, tuple] = {
    "seed": (None, int, _non_negative),
    "data.preset": ("default", str, _one_of(synthdata.PRESETS)),
    "data.path": (None, "str?", None),
    **{key: (None, "data", None) for key in _SPEC_FIELDS},
    "model.arch": (list(_pre.arch), list, _arch),
    "pretrain.epochs": (_pre.epochs, int, _non_negative),
    "pretrain.batch_size": (_pre.batch_size, int, _positive),
    "pretrain.lr": (_pre.lr, float, _positive),
    "pretrain.label_smoothing": (_pre.label_smoothing, float, _unit_open),
    "pretrain.holdout": (_pre.holdout, float, _unit_open),
    "adapt.epochs": (_ad.epochs, int, _non_negative),
    "adapt.batch_size": (_ad.batch_size, int, _positive),
    "adapt.lr": (_ad.lr, float, _positive),
    "optim.momentum": (_ad.momentum, float, _unit_open),
    "optim.weight_decay": (_ad.weight_decay, float, _non_negative),
    "pseudo.temperature": (_ad.temperature, float, _positive),
    "selection.mode": (_ad.selection_mode, str, _one_of(SELECTION_MODES)),
    "selection.threshold": (_ad.threshold, float, _unit_closed),
    "selection.use_sharpened_confidence": (_ad.sharpened_confidence, bool, None),
    "calib.tau": (_ad.tau, float, _unit_open),
    "calib.refresh_every_epochs": (_ad.refresh_every_epochs, int, _positive),
    "calib.distance": (_ad.distance, str, _one_of(DISTANCES)),
    "ablation.use_cr": (_ad.use_cr, bool, None),
    "ablation.use_sampling": (_ad.use_sampling, bool, None),
    "ablation.use_class_weights": (_ad.use_class_weights, bool, None),
    "ablation.use_proto_gate": (_ad.use_proto_gate, bool, None),
    "baseline.vanilla_self_training": (_ad.vanilla_self_training, bool, None),
    "baseline.hard_labels": (_ad.hard_labels, bool, None),
    "baseline.use_div_loss": (_ad.use_div_loss, bool, None),
    "baseline.div_weight": (_ad.div_weight, float, _non_negative),
    "augment.weak_noise_sigma": (_aug.weak_noise_sigma, float, _non_negative),
    "augment.strong_ops_per_sample": (_aug.strong_ops_per_sample, int, _positive),
    "augment.strong_magnitude": (_aug.strong_magnitude, float, lambda v: None if 0 < v <= 1 else "must lie in (0, 1]"),
    "augment.op_pool": (list(_aug.op_pool), list, _ops),
}

REQUIRED = ("seed",)


def _check_type(key: str, value, kind):
    if kind == "data":
        return value
    if kind == "str?":
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string or null, got {value!r}")
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"{key}: expected a finite number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if kind is list:
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return list(value)
    raise AssertionError(kind)


def resolve(raw: dict) -> dict:
    """Validate ``raw`` and return a config with every key materialized."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object of dotted keys")
    for key in raw:
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
    for key in REQUIRED:
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")
    cfg = {}
    for key, (default, kind, check) in KEYS.items():
        value = _check_type(key, raw[key], kind) if key in raw else default
        if check is not None and value is not None:
            problem = check(value)
            if problem:
                raise ConfigError(f"{key} {problem} (got {value!r})")
        cfg[key] = value
    # materialize the dataset spec from the preset
    spec = synthdata.PRESETS[cfg["data.preset"]](cfg["seed"])
    for key, name in _SPEC_FIELDS.items():
        if cfg[key] is None:
            value = getattr(spec, name)
            cfg[key] = list(value) if isinstance(value, tuple) else value
    data_spec(cfg)
    adapt_config(cfg)
    return cfg


def load(path) -> dict:
    """Read a config file (or a run manifest) and resolve it."""
    raw = read_json(path)
    if isinstance(raw, dict) and "config" in raw and isinstance(raw["config"], dict):
        raw = raw["config"]
    return resolve(raw)


def read_json(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def with_overrides(cfg: dict, **dotted) -> dict:
    """Copy of a resolved config with some keys replaced and re-validated."""
    raw = dict(cfg)
    raw.update(dotted)
    return resolve(raw)


def data_spec(cfg: dict, seed: int | None = None) -> synthdata.DomainShiftSpec:
    kwargs = {name: cfg[key] for key, name in _SPEC_FIELDS.items()}
    kwargs["rotation_plane"] = tuple(kwargs["rotation_plane"])
    for name in ("class_cov_scale", "rotation_angle", "scale"):
        if isinstance(kwargs[name], bool) or not isinstance(kwargs[name], (int, float)):
            raise ConfigError(f"data.{name}: expected a number, got {kwargs[name]!r}")
    spec = synthdata.DomainShiftSpec(seed=cfg["seed"] if seed is None else seed, **kwargs)
    try:
        spec.validate()
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"data: {exc}") from exc
    return spec


def pretrain_config(cfg: dict, seed: int | None = None) -> PretrainConfig:
    return PretrainConfig(
        arch=list(cfg["model.arch"]),
        epochs=cfg["pretrain.epochs"],
        batch_size=cfg["pretrain.batch_size"],
        lr=cfg["pretrain.lr"],
        momentum=cfg["optim.momentum"],
        weight_decay=cfg["optim.weight_decay"],
        label_smoothing=cfg["pretrain.label_smoothing"],
        holdout=cfg["pretrain.holdout"],
        seed=cfg["seed"] if seed is None else seed,
    )


def adapt_config(cfg: dict, seed: int | None = None) -> AdaptConfig:
    try:
        aug = AugmentConfig(
            weak_noise_sigma=cfg["augment.weak_noise_sigma"],
            strong_ops_per_sample=cfg["augment.strong_ops_per_sample"],
            strong_magnitude=cfg["augment.strong_magnitude"],
            op_pool=list(cfg["augment.op_pool"]),
        )
        out = AdaptConfig(
            epochs=cfg["adapt.epochs"],
            batch_size=cfg["adapt.batch_size"],
            lr=cfg["adapt.lr"],
            momentum=cfg["optim.momentum"],
            weight_decay=cfg["optim.weight_decay"],
            temperature=cfg["pseudo.temperature"],
            tau=cfg["calib.tau"],
            selection_mode=cfg["selection.mode"],
            threshold=cfg["selection.threshold"],
            sharpened_confidence=cfg["selection.use_sharpened_confidence"],
            use_cr=cfg["ablation.use_cr"],
            use_sampling=cfg["ablation.use_sampling"],
            use_class_weights=cfg["ablation.use_class_weights"],
            use_proto_gate=cfg["ablation.use_proto_gate"],
            vanilla_self_training=cfg["baseline.vanilla_self_training"],
            hard_labels=cfg["baseline.hard_labels"],
            use_div_loss=cfg["baseline.use_div_loss"],
            div_weight=cfg["baseline.div_weight"],
            refresh_every_epochs=cfg["calib.refresh_every_epochs"],
            distance=cfg["calib.distance"],
            seed=cfg["seed"] if seed is None else seed,
            augment=aug,
        )
        out.validate()
    except ValueError as exc:
        raise ConfigError(f"adapt/ablation/baseline keys: {exc}") from exc
    return out


def from_adapt_config(ad: AdaptConfig) -> dict:
    """Dotted keys for an :class:`AdaptConfig` (inverse of :func:`adapt_config`)."""
    return {
        "adapt.epochs": ad.epochs,
        "adapt.batch_size": ad.batch_size,
        "adapt.lr": ad.lr,
        "optim.momentum": ad.momentum,
        "optim.weight_decay": ad.weight_decay,
        "pseudo.temperature": ad.temperature,
        "calib.tau": ad.tau,
        "selection.mode": ad.selection_mode,
        "selection.threshold": ad.threshold,
        "selection.use_sharpened_confidence": ad.sharpened_confidence,
        "ablation.use_cr": ad.use_cr,
        "ablation.use_sampling": ad.use_sampling,
        "ablation.use_class_weights": ad.use_class_weights,
        "ablation.use_proto_gate": ad.use_proto_gate,
        "baseline.vanilla_self_training": ad.vanilla_self_training,
        "baseline.hard_labels": ad.hard_labels,
        "baseline.use_div_loss": ad.use_div_loss,
        "baseline.div_weight": ad.div_weight,
        "calib.refresh_every_epochs": ad.refresh_every_epochs,
        "calib.distance": ad.distance,
        **{f"augment.{k}": v for k, v in asdict(ad.augment).items()},
    }


def dump(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def spec_with_seed(spec: synthdata.DomainShiftSpec, seed: int) -> synthdata.DomainShiftSpec:
    return replace(spec, seed=seed)
