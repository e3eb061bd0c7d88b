"""Command-line harness: ``sfdalab <command> --config FILE --out DIR``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, config, engine, nn, synthdata
from .config import ConfigError
from .nn import CheckpointError, NumericalError
from .synthdata import DatasetFormatError

log = logging.getLogger("sfdalab")

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3, 4

SWEEP_AXES = ("selection.threshold", "baseline.div_weight", "calib.tau", "seed")

RESULT_COLUMNS = ["train_acc", "test_acc", "drop", "relative_drop", "zero_weight_batches"]

HELP_EPILOG = """\
files written (s = seed):
  gen       dataset_seed<s>.csv
  pretrain  source_seed<s>.ckpt, pretrain_seed<s>.json
  adapt     adapted_seed<s>.ckpt, report_seed<s>.csv, summary_seed<s>.json
  eval      eval_seed<s>.json
  ablate    ablation.csv, ablation_curves.csv
  sweep     sweep.csv, sweep_curves.csv
  every command also writes manifest.json; pass it back as --config to rerun.

CSV column order (K = class count):
  report_seed<s>.csv   epoch, train_acc, test_acc, mean_loss, selected_ratio,
                       gate_ratio, pseudo_acc, lr, train_class_0..K-1,
                       test_class_0..K-1
  ablation.csv         config, seed, train_acc, test_acc, drop, relative_drop,
                       zero_weight_batches, train_class_0..K-1, test_class_0..K-1
  sweep.csv            axis, value, seed, train_acc, test_acc, drop,
                       relative_drop, zero_weight_batches, train_class_0..K-1,
                       test_class_0..K-1
  *_curves.csv         config (ablate) or axis, value (sweep), seed, then the
                       report_seed<s>.csv columns

exit codes: 0 success, 2 config error, 3 missing/corrupt input, 4 numeric failure
"""


class InputError(Exception):
    pass


# -- helpers ---------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "nan" if math.isnan(x) else format(float(x), ".17g")
    return str(x)


def _csv_line(values) -> str:
    return ",".join(_fmt(v) for v in values)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _parse_seeds(text: str | None, cfg: dict) -> list[int]:
    if text is None:
        return [cfg["seed"]]
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"--seeds must be comma-separated integers, got {text!r}") from exc
    if not seeds or any(s < 0 for s in seeds):
        raise ConfigError(f"--seeds must list non-negative integers, got {text!r}")
    return seeds


def _parse_sweep(text: str) -> tuple[str, list]:
    if "=" not in text:
        raise ConfigError(f"--sweep expects key=v1,v2,..., got {text!r}")
    key, _, values = text.partition("=")
    key = key.strip()
    if key not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {key!r}; choose from {list(SWEEP_AXES)}")
    out = []
    for item in values.split(","):
        item = item.strip()
        if not item:
            continue
        if key == "selection.threshold" and item == "sampling":
            out.append(item)
            continue
        try:
            out.append(int(item) if key == "seed" else float(item))
        except ValueError as exc:
            raise ConfigError(f"--sweep {key}: bad value {item!r}") from exc
    if not out:
        raise ConfigError(f"--sweep {key}: no values given")
    return key, out


def _dataset_path(directory: Path, seed: int) -> Path:
    return directory / f"dataset_seed{seed}.csv"


def _load_pair(cfg: dict, seed: int, in_dir: Path | None) -> tuple[synthdata.DomainPair, str]:
    """Dataset for ``seed``: an external file, a generated file in ``in_dir``, or a fresh draw."""
    if cfg["data.path"]:
        path = Path(cfg["data.path"])
    elif in_dir is not None:
        path = _dataset_path(in_dir, seed)
    else:
        spec = config.data_spec(cfg, seed)
        return synthdata.standardize(synthdata.generate(spec)), spec.digest()
    if not path.exists():
        raise InputError(f"dataset not found: {path}")
    pair = synthdata.read_dataset(path)
    return synthdata.standardize(pair), hashlib.sha256(path.read_bytes()).hexdigest()


def _load_checkpoint(path: Path) -> nn.ModelParams:
    if not path.exists():
        raise InputError(f"checkpoint not found: {path}")
    return nn.load_checkpoint(path)


class Run:
    """Collects emitted files and writes the manifest."""

    def __init__(self, command: str, cfg: dict, out: Path, seeds: list[int], extra: dict | None = None):
        self.command, self.cfg, self.out, self.seeds = command, cfg, out, seeds
        self.files: list[str] = []
        self.dataset_hashes: dict[str, str] = {}
        self.extra = extra or {}
        out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def finish(self) -> None:
        manifest = {
            "tool": "sfdalab",
            "version": __version__,
            "command": self.command,
            "config": self.cfg,
            "seeds": self.seeds,
            "dataset_hashes": self.dataset_hashes,
            "files": sorted(set(self.files)),
            **self.extra,
        }
        _write_json(self.out / "manifest.json", manifest)


# -- commands -------------------------------------------------------------------

def cmd_gen(cfg, args, seeds) -> None:
    run = Run("gen", cfg, args.out, seeds)
    for seed in seeds:
        spec = config.data_spec(cfg, seed)
        synthdata.write_dataset(synthdata.generate(spec), run.path(_dataset_path(Path(), seed).name))
        run.dataset_hashes[str(seed)] = spec.digest()
    run.finish()


def cmd_pretrain(cfg, args, seeds) -> None:
    run = Run("pretrain", cfg, args.out, seeds, {"inputs": _inputs(args)})
    for seed in seeds:
        pair, digest = _load_pair(cfg, seed, args.in_dir)
        run.dataset_hashes[str(seed)] = digest
        result = engine.pretrain_source(pair, config.pretrain_config(cfg, seed))
        nn.save_checkpoint(result.params, run.path(f"source_seed{seed}.ckpt"))
        target_acc, _ = engine.evaluate(result.params, pair.target_train)
        _write_json(run.path(f"pretrain_seed{seed}.json"), {
            "seed": seed,
            "source_test_acc": result.source_test_acc,
            "target_train_acc": target_acc,
            "epoch_losses": result.losses,
        })
    run.finish()


def _source_checkpoint(args, seed: int) -> Path:
    if args.checkpoint is not None:
        return args.checkpoint
    return (args.in_dir or args.out) / f"source_seed{seed}.ckpt"


def cmd_adapt(cfg, args, seeds) -> None:
    run = Run("adapt", cfg, args.out, seeds, {"inputs": _inputs(args)})
    for seed in seeds:
        pair, digest = _load_pair(cfg, seed, args.in_dir)
        run.dataset_hashes[str(seed)] = digest
        source = _load_checkpoint(_source_checkpoint(args, seed))
        adapted, report = engine.adapt(source, pair.target_train, config.adapt_config(cfg, seed), pair.target_test)
        nn.save_checkpoint(adapted, run.path(f"adapted_seed{seed}.ckpt"))
        run.path(f"report_seed{seed}.csv").write_text(report.to_csv())
        _write_json(run.path(f"summary_seed{seed}.json"), {"seed": seed, **report.summary(), "config": engine.config_echo(config.adapt_config(cfg, seed))})
    run.finish()


def cmd_eval(cfg, args, seeds) -> None:
    run = Run("eval", cfg, args.out, seeds, {"inputs": _inputs(args)})
    for seed in seeds:
        pair, digest = _load_pair(cfg, seed, args.in_dir)
        run.dataset_hashes[str(seed)] = digest
        if args.checkpoint is not None:
            ckpt = args.checkpoint
        else:
            base = args.in_dir or args.out
            ckpt = base / f"adapted_seed{seed}.ckpt"
            if not ckpt.exists():
                ckpt = base / f"source_seed{seed}.ckpt"
        params = _load_checkpoint(ckpt)
        train_acc, train_pc = engine.evaluate(params, pair.target_train)
        test_acc, test_pc = engine.evaluate(params, pair.target_test)
        drop = train_acc - test_acc
        _write_json(run.path(f"eval_seed{seed}.json"), {
            "seed": seed,
            "checkpoint": ckpt.name,
            "train_acc": train_acc,
            "test_acc": test_acc,
            "drop": drop,
            "relative_drop": 100.0 * drop / train_acc if train_acc else float("nan"),
            "train_per_class": train_pc,
            "test_per_class": test_pc,
        })
    run.finish()


def _result_row(report: engine.RunReport) -> list:
    s = report.summary()
    return [s[c] for c in RESULT_COLUMNS] + list(s["train_per_class"]) + list(s["test_per_class"])


def _result_header(k: int) -> list[str]:
    return RESULT_COLUMNS + [f"train_class_{c}" for c in range(k)] + [f"test_class_{c}" for c in range(k)]


def _curve_lines(prefix: list, report: engine.RunReport) -> list[str]:
    lines = report.to_csv().splitlines()[1:]
    return [_csv_line(prefix) + "," + line for line in lines]


def _pretrained(cfg, seed, args, run) -> tuple[synthdata.DomainPair, nn.ModelParams]:
    pair, digest = _load_pair(cfg, seed, args.in_dir)
    run.dataset_hashes[str(seed)] = digest
    return pair, engine.pretrain_source(pair, config.pretrain_config(cfg, seed)).params


def cmd_ablate(cfg, args, seeds) -> None:
    run = Run("ablate", cfg, args.out, seeds, {"inputs": _inputs(args)})
    base = config.adapt_config(cfg)
    table, curves, k = [], [], None
    for seed in seeds:
        pair, source = _pretrained(cfg, seed, args, run)
        k = pair.class_count
        for name, toggles in engine.ABLATION_ROWS.items():
            _, report = engine.adapt(source, pair.target_train, engine.variant(base, seed=seed, **toggles), pair.target_test)
            table.append(_csv_line([name, seed] + _result_row(report)))
            curves.extend(_curve_lines([name, seed], report))
    run.path("ablation.csv").write_text("\n".join([",".join(["config", "seed"] + _result_header(k))] + table) + "\n")
    columns = engine.RunReport(k).columns()
    run.path("ablation_curves.csv").write_text("\n".join([",".join(["config", "seed"] + columns)] + curves) + "\n")
    run.finish()


def sweep_point(cfg: dict, axis: str, value) -> dict:
    """Config for one sweep value.

    Sweeping ``baseline.div_weight`` swaps class weights for the diversity
    loss; sweeping ``selection.threshold`` switches to threshold selection,
    except for the value ``"sampling"`` which keeps the configured mode.
    """
    if axis == "seed":
        return config.with_overrides(cfg, seed=value)
    if axis == "baseline.div_weight":
        return config.with_overrides(cfg, **{axis: value, "baseline.use_div_loss": True, "ablation.use_class_weights": False})
    if axis == "selection.threshold":
        if value == "sampling":
            return cfg
        return config.with_overrides(cfg, **{axis: value, "selection.mode": "threshold", "ablation.use_sampling": True})
    return config.with_overrides(cfg, **{axis: value})


def cmd_sweep(cfg, args, seeds) -> None:
    if args.sweep is None:
        raise ConfigError("sweep needs --sweep key=v1,v2,...")
    axis, values = _parse_sweep(args.sweep)
    if axis == "seed":
        seeds = [0]
    run = Run("sweep", cfg, args.out, values if axis == "seed" else seeds, {"sweep": args.sweep, "inputs": _inputs(args)})
    table, curves, k = [], [], None
    sources = {}
    for value in values:
        point = sweep_point(cfg, axis, value)
        for seed in ([value] if axis == "seed" else seeds):
            if seed not in sources:
                sources[seed] = _pretrained(cfg, seed, args, run)
            pair, source = sources[seed]
            k = pair.class_count
            _, report = engine.adapt(source, pair.target_train, config.adapt_config(point, seed), pair.target_test)
            table.append(_csv_line([axis, str(value), seed] + _result_row(report)))
            curves.extend(_curve_lines([axis, str(value), seed], report))
    run.path("sweep.csv").write_text("\n".join([",".join(["axis", "value", "seed"] + _result_header(k))] + table) + "\n")
    columns = engine.RunReport(k).columns()
    run.path("sweep_curves.csv").write_text("\n".join([",".join(["axis", "value", "seed"] + columns)] + curves) + "\n")
    run.finish()


COMMANDS = {
    "gen": (cmd_gen, "generate synthetic domain-pair datasets"),
    "pretrain": (cmd_pretrain, "train source models on the labeled source split"),
    "adapt": (cmd_adapt, "adapt source checkpoints to the target-train split"),
    "eval": (cmd_eval, "evaluate a checkpoint on target train and test splits"),
    "ablate": (cmd_ablate, "run the module ablation rows (source-only plus five toggle sets)"),
    "sweep": (cmd_sweep, f"sweep one axis: {', '.join(SWEEP_AXES)}"),
}


def _inputs(args) -> dict:
    return {
        "in": str(args.in_dir) if args.in_dir is not None else None,
        "checkpoint": str(args.checkpoint) if args.checkpoint is not None else None,
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sfdalab",
        description="Source-free domain adaptation experiments on synthetic domain pairs.",
        epilog=HELP_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"sfdalab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, text) in COMMANDS.items():
        p = sub.add_parser(name, help=text, description=text, epilog=HELP_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", type=Path, required=True, help="JSON config of dotted keys, or a manifest.json to rerun")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--seeds", help="comma-separated seeds (default: the config's seed, or the manifest's seeds)")
        p.add_argument("--in", dest="in_dir", type=Path, help="directory with datasets/checkpoints from an earlier command")
        p.add_argument("--checkpoint", type=Path, help="explicit checkpoint file (adapt: source model, eval: model to score)")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        if name == "sweep":
            p.add_argument("--sweep", help="axis=v1,v2,... with axis in " + ", ".join(SWEEP_AXES))
    return parser


def _apply_manifest(args) -> None:
    """Fill seeds, sweep and inputs from a manifest passed as --config."""
    raw = config.read_json(args.config)
    if not (isinstance(raw, dict) and isinstance(raw.get("config"), dict)):
        return
    if args.seeds is None and raw.get("seeds"):
        if not (args.command == "sweep" and str(raw.get("sweep", "")).startswith("seed=")):
            args.seeds = ",".join(str(s) for s in raw["seeds"])
    if args.command == "sweep" and getattr(args, "sweep", None) is None:
        args.sweep = raw.get("sweep")
    inputs = raw.get("inputs") or {}
    if args.in_dir is None and inputs.get("in"):
        args.in_dir = Path(inputs["in"])
    if args.checkpoint is None and inputs.get("checkpoint"):
        args.checkpoint = Path(inputs["checkpoint"])


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config.load(args.config)
        _apply_manifest(args)
        seeds = _parse_seeds(args.seeds, cfg)
        COMMANDS[args.command][0](cfg, args, seeds)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, CheckpointError, DatasetFormatError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numeric failure at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
