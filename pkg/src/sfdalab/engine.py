"""Source pretraining, target adaptation, evaluation and ablation runs."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import calib
from .augment import AugmentConfig, bank_views, epoch_views, input_scale
from .nn import (
    ModelParams,
    NumericalError,
    OptState,
    backward,
    forward,
    init_params,
    label_smoothed_ce_with_grad,
    lr_at_progress,
    sgd_momentum_step,
    soft_cross_entropy_grad,
    softmax,
)
from .pseudo import (
    SELECTION_MODES,
    consistency_loss,
    decide,
    hard_label,
    sample_coefficients,
    selection_probability,
    sharpen,
)
from .rng import stream
from .synthdata import DomainPair, Split

log = logging.getLogger(__name__)


@dataclass
class PretrainConfig:
    arch: list[int] = field(default_factory=lambda: [2, 64, 64, 4])
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 1e-3
    label_smoothing: float = 0.1
    holdout: float = 0.1
    seed: int = 0


@dataclass
class AdaptConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 4e-4
    momentum: float = 0.9
    weight_decay: float = 1e-3
    temperature: float = 0.5
    tau: float = 0.8
    selection_mode: str = "expectation"
    threshold: float = 0.8
    sharpened_confidence: bool = False
    use_cr: bool = True
    use_sampling: bool = True
    use_class_weights: bool = True
    use_proto_gate: bool = True
    vanilla_self_training: bool = False
    hard_labels: bool = False
    use_div_loss: bool = False
    div_weight: float = 0.1
    refresh_every_epochs: int = 1
    distance: str = "cosine"
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.refresh_every_epochs < 1:
            raise ValueError("epochs must be >= 0, batch_size and refresh_every_epochs >= 1")
        for name in ("lr", "temperature"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.tau < 1.0:
            raise ValueError("tau must lie in [0, 1)")
        if self.selection_mode not in SELECTION_MODES:
            raise ValueError(f"selection mode must be one of {SELECTION_MODES}")
        if self.distance not in calib.DISTANCES:
            raise ValueError(f"distance must be one of {calib.DISTANCES}")
        if self.use_cr and self.vanilla_self_training:
            raise ValueError("use_cr and vanilla_self_training are mutually exclusive")
        if not self.trains:
            extras = [n for n in ("use_sampling", "use_class_weights", "use_proto_gate", "use_div_loss", "hard_labels") if getattr(self, n)]
            if extras:
                raise ValueError(f"{extras} need a training objective (use_cr or vanilla_self_training)")
        if self.use_div_loss and self.div_weight < 0:
            raise ValueError("div_weight must be non-negative")

    @property
    def trains(self) -> bool:
        return self.use_cr or self.vanilla_self_training


# -- reports -----------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_acc: float
    test_acc: float
    mean_loss: float
    selected_ratio: float
    gate_ratio: float
    pseudo_acc: float
    lr: float
    train_per_class: list[float]
    test_per_class: list[float]


@dataclass
class RunReport:
    class_count: int
    epochs: list[EpochRecord] = field(default_factory=list)
    zero_weight_batches: int = 0

    @property
    def final(self) -> EpochRecord:
        return self.epochs[-1]

    @property
    def train_acc(self) -> float:
        return self.final.train_acc

    @property
    def test_acc(self) -> float:
        return self.final.test_acc

    @property
    def drop(self) -> float:
        return self.final.train_acc - self.final.test_acc

    @property
    def relative_drop(self) -> float:
        return 100.0 * self.drop / self.final.train_acc if self.final.train_acc else float("nan")

    def columns(self) -> list[str]:
        k = self.class_count
        return (
            ["epoch", "train_acc", "test_acc", "mean_loss", "selected_ratio", "gate_ratio", "pseudo_acc", "lr"]
            + [f"train_class_{c}" for c in range(k)]
            + [f"test_class_{c}" for c in range(k)]
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        for r in self.epochs:
            w.writerow(
                [r.epoch] + [_num(x) for x in (r.train_acc, r.test_acc, r.mean_loss, r.selected_ratio, r.gate_ratio, r.pseudo_acc, r.lr)]
                + [_num(x) for x in r.train_per_class] + [_num(x) for x in r.test_per_class]
            )
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "train_acc": self.train_acc,
            "test_acc": self.test_acc,
            "drop": self.drop,
            "relative_drop": self.relative_drop,
            "train_per_class": self.final.train_per_class,
            "test_per_class": self.final.test_per_class,
            "zero_weight_batches": self.zero_weight_batches,
            "epochs_run": len(self.epochs) - 1,
        }


def _num(x: float) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else format(float(x), ".17g")


# -- evaluation ----------------------------------------------------------------

def predict(params: ModelParams, inputs: np.ndarray, batch_size: int = 4096) -> np.ndarray:
    out = []
    for start in range(0, len(inputs), batch_size):
        _, logits = forward(params, inputs[start:start + batch_size])
        out.append(logits.argmax(axis=1))
    return np.concatenate(out)


def evaluate(params: ModelParams, split: Split) -> tuple[float, np.ndarray]:
    """Top-1 accuracy (%) on raw inputs and per-class recall (%, NaN if absent)."""
    if len(split) == 0:
        raise ValueError("cannot evaluate on an empty split")
    pred = predict(params, split.inputs)
    correct = pred == split.labels
    k = params.class_count
    totals = np.bincount(split.labels, minlength=k)
    hits = np.bincount(split.labels[correct], minlength=k)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(totals > 0, 100.0 * hits / np.maximum(totals, 1), np.nan)
    return 100.0 * int(correct.sum()) / len(correct), per_class


# -- source pretraining ----------------------------------------------------------

@dataclass
class PretrainResult:
    params: ModelParams
    source_test_acc: float
    losses: list[float]


def pretrain_source(pair: DomainPair, cfg: PretrainConfig) -> PretrainResult:
    """Supervised training on the source split with label smoothing.

    A fixed ``holdout`` fraction of the source samples is kept aside to report
    source test accuracy.
    """
    src = pair.source
    if len(src) == 0:
        raise ValueError("pretraining needs a labeled source split")
    perm = stream(cfg.seed, "pretrain.holdout").permutation(len(src))
    n_hold = int(round(cfg.holdout * len(src)))
    hold, train = perm[:n_hold], perm[n_hold:]
    x, y = src.inputs[train], src.labels[train]

    params = init_params(cfg.arch, cfg.seed)
    state = OptState.for_params(params, cfg.momentum, cfg.weight_decay)
    steps = math.ceil(len(x) / cfg.batch_size)
    total = steps * cfg.epochs
    losses = []
    step = 0
    for epoch in range(cfg.epochs):
        order = stream(cfg.seed, "pretrain.shuffle", epoch).permutation(len(x))
        running = 0.0
        for b in range(steps):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            _, logits = forward(params, x[idx])
            loss, grad = label_smoothed_ce_with_grad(logits, y[idx], cfg.label_smoothing)
            if not math.isfinite(loss):
                raise NumericalError("non-finite pretraining loss", step)
            sgd_momentum_step(params, backward(params, x[idx], grad), state, lr_at_progress(cfg.lr, step / total))
            running += loss
            step += 1
        losses.append(running / steps)
    acc = evaluate(params, Split(src.inputs[hold], src.labels[hold]))[0] if n_hold else float("nan")
    log.info("source pretraining done: final loss %.4f, source test acc %.2f", losses[-1] if losses else float("nan"), acc)
    return PretrainResult(params, acc, losses)


# -- adaptation ----------------------------------------------------------------

def _record(params, epoch, train, test, loss, selected, gate, pseudo_acc, lr) -> EpochRecord:
    train_acc, train_pc = evaluate(params, train)
    if test is not None and len(test):
        test_acc, test_pc = evaluate(params, test)
    else:
        test_acc, test_pc = float("nan"), np.full(params.class_count, np.nan)
    return EpochRecord(epoch, train_acc, test_acc, loss, selected, gate, pseudo_acc, lr, train_pc.tolist(), test_pc.tolist())


def adapt(params: ModelParams, target_train: Split, cfg: AdaptConfig, target_test: Split | None = None) -> tuple[ModelParams, RunReport]:
    """Adapt a source model to the unlabeled target-train inputs.

    Labels in ``target_train`` and ``target_test`` are only read for the
    per-epoch evaluation.  Returns the adapted copy of ``params`` and a report
    whose epoch 0 row is the unadapted model.
    """
    cfg.validate()
    params = params.copy()
    report = RunReport(params.class_count)
    nan = float("nan")
    report.epochs.append(_record(params, 0, target_train, target_test, nan, nan, nan, nan, nan))
    if cfg.epochs == 0 or not cfg.trains:
        return params, report

    x_all = target_train.inputs
    n = len(x_all)
    sigma = input_scale(x_all)
    state = OptState.for_params(params, cfg.momentum, cfg.weight_decay)
    try:
        bank = calib.bank_init(params, bank_views(x_all, cfg.seed, cfg.augment, sigma))
    except NumericalError as exc:
        raise NumericalError(f"memory bank pass: {exc}", 0) from exc
    stats = None
    steps = math.ceil(n / cfg.batch_size)
    total = steps * cfg.epochs
    step = 0

    for epoch in range(cfg.epochs):
        if epoch % cfg.refresh_every_epochs == 0:
            stats = calib.refresh_stats(bank, cfg.tau, stats)
        weak_all, strong_all = epoch_views(x_all, cfg.seed, epoch, cfg.augment, sigma)
        order = stream(cfg.seed, "adapt.shuffle", epoch).permutation(n)
        sel_rng = stream(cfg.seed, "adapt.selection", epoch)
        loss_sum = selected = gated = pseudo_hits = 0.0
        lr = nan
        for b in range(steps):
            try:
                idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                x_weak = weak_all[idx]
                feats_w, logits_w = forward(params, x_weak)
                probs_w = softmax(logits_w)
                calib.bank_update(bank, idx, probs_w, feats_w)

                pseudo = hard_label(probs_w) if cfg.hard_labels else sharpen(logits_w, cfg.temperature)
                ones = np.ones(len(idx))
                if cfg.use_sampling:
                    conf_src = pseudo.probs if cfg.sharpened_confidence else probs_w
                    decision = decide(selection_probability(conf_src), cfg.selection_mode, sel_rng, cfg.threshold)
                    xi, accepted = decision.weight, decision.accepted
                else:
                    xi, accepted = ones, ones.astype(bool)
                w_div = stats.w_div[pseudo.predicted_class] if cfg.use_class_weights else ones
                if cfg.use_proto_gate and stats.prototype_valid.any():
                    w_proto = calib.proto_agreement(feats_w, probs_w, stats.prototypes, stats.prototype_valid, cfg.distance).astype(np.float64)
                else:
                    w_proto = ones

                if cfg.use_cr:
                    x_train = strong_all[idx]
                    _, logits_s = forward(params, x_train)
                    probs_s = softmax(logits_s)
                else:
                    x_train, probs_s = x_weak, probs_w

                coef = sample_coefficients(xi, w_div, w_proto)
                if not np.any(coef > 0):
                    report.zero_weight_batches += 1
                loss = float(np.sum(coef * consistency_loss(pseudo, probs_s)))
                grad = coef[:, None] * soft_cross_entropy_grad(pseudo.probs, probs_s)
                if cfg.use_div_loss:
                    loss += cfg.div_weight * calib.diversity_loss(probs_s.mean(axis=0))
                    grad = grad + cfg.div_weight * calib.diversity_loss_grad(probs_s)
                if not math.isfinite(loss):
                    raise NumericalError("non-finite adaptation loss", step)

                lr = lr_at_progress(cfg.lr, step / total)
                sgd_momentum_step(params, backward(params, x_train, grad), state, lr)
            except NumericalError as exc:
                if exc.step is not None:
                    raise
                raise NumericalError(str(exc), step) from exc
            step += 1
            loss_sum += loss
            keep = accepted & (w_proto > 0)
            selected += keep.sum()
            gated += w_proto.sum()
            pseudo_hits += np.sum(pseudo.predicted_class == target_train.labels[idx])
        report.epochs.append(
            _record(params, epoch + 1, target_train, target_test, loss_sum / steps, selected / n, gated / n, 100.0 * pseudo_hits / n, lr)
        )
        log.debug("epoch %d: train %.2f test %.2f", epoch + 1, report.final.train_acc, report.final.test_acc)
    return params, report


# -- experiments -------------------------------------------------------------------

ABLATION_ROWS = {
    "source_only": dict(use_cr=False, use_sampling=False, use_class_weights=False, use_proto_gate=False),
    "cr": dict(use_cr=True, use_sampling=False, use_class_weights=False, use_proto_gate=False),
    "cr_ss": dict(use_cr=True, use_sampling=True, use_class_weights=False, use_proto_gate=False),
    "cr_ss_pc": dict(use_cr=True, use_sampling=True, use_class_weights=False, use_proto_gate=True),
    "cr_ss_cw": dict(use_cr=True, use_sampling=True, use_class_weights=True, use_proto_gate=False),
    "full": dict(use_cr=True, use_sampling=True, use_class_weights=True, use_proto_gate=True),
}

BASELINES = {
    "full": dict(),
    "vanilla_self_training": dict(use_cr=False, vanilla_self_training=True),
    "hard_labels": dict(hard_labels=True),
}


def variant(cfg: AdaptConfig, **changes) -> AdaptConfig:
    base = dict(vanilla_self_training=False, hard_labels=False, use_div_loss=False)
    base.update(changes)
    return replace(cfg, **base)


def run_ablation(source: ModelParams, pair: DomainPair, cfg: AdaptConfig, seed: int | None = None) -> list[dict]:
    """Run the module-ablation rows on one pretrained source model.

    The source-only row is the unadapted model, so it equals the source
    evaluation exactly.
    """
    rows = []
    for name, toggles in ABLATION_ROWS.items():
        run_cfg = variant(cfg, **toggles)
        if seed is not None:
            run_cfg = replace(run_cfg, seed=seed)
        _, report = adapt(source, pair.target_train, run_cfg, pair.target_test)
        rows.append({"config": name, "seed": run_cfg.seed, **report.summary()})
    return rows


def config_echo(cfg) -> dict:
    return asdict(cfg)
