"""Command-line entry point.

Subcommands: ``synth-data``, ``train``, ``evaluate``, ``analyze`` and
``inspect-checkpoint``.  A run is described by one declarative YAML file
with ``model``, ``train``, ``data`` and ``synth`` sections; flags and
``TDCN_``-prefixed environment variables (``TDCN_TRAIN__SEED=7``) override
individual keys, which keeps CI sweeps out of the config files.

Exit codes: 0 success, 2 config error, 3 data error, 4 checkpoint
mismatch, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import analysis, data as datalib, training
from .model import (
    DEFAULT_BRANCH_WIDTHS,
    BranchConfig,
    CheckpointError,
    Model,
    ModelConfig,
    load_checkpoint,
    model_from_checkpoint,
)

__all__ = ["main", "build_model_config", "load_config"]

ENV_PREFIX = "TDCN_"


class ConfigError(ValueError):
    """Raised when the run configuration is missing or inconsistent."""


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, dict):
        raise ConfigError(f"config root must be a mapping, got {type(cfg).__name__}")
    return cfg


def apply_env_overrides(cfg: dict, environ=None) -> dict:
    """``TDCN_SECTION__KEY=value`` sets cfg[section][key] (values parsed as YAML)."""
    environ = os.environ if environ is None else environ
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        dotted = name[len(ENV_PREFIX) :].lower().split("__")
        node = cfg
        for key in dotted[:-1]:
            node = node.setdefault(key, {})
        node[dotted[-1]] = yaml.safe_load(raw)
    return cfg


def _section(cfg: dict, name: str) -> dict:
    section = cfg.get(name) or {}
    if not isinstance(section, dict):
        raise ConfigError(f"config section '{name}' must be a mapping")
    return section


def _selected_cues(cfg: dict, args) -> list[str]:
    if getattr(args, "cues", None):
        cues = [c.strip() for c in args.cues.split(",") if c.strip()]
    else:
        cues = _section(cfg, "model").get("cues", ["landmarks2d", "pose"])
    if not cues:
        raise ConfigError("cue selection is empty")
    unknown = [c for c in cues if c not in datalib.CUE_NAMES]
    if unknown:
        raise ConfigError(f"unknown cues {unknown}; valid cues are {list(datalib.CUE_NAMES)}")
    return sorted(cues)


def _dataset_schema(cfg: dict) -> dict[str, list[str]]:
    root = _section(cfg, "data").get("root")
    if root:
        schema_path = Path(root) / "cue_schema.json"
        if schema_path.exists():
            return datalib.load_schema(schema_path)
    return datalib.default_schema()


def build_model_config(cfg: dict, cues: list[str]) -> ModelConfig:
    model_cfg = _section(cfg, "model")
    schema = _dataset_schema(cfg)
    widths_map = model_cfg.get("widths", {})
    input_dims = model_cfg.get("input_dims", {})
    branches = []
    for cue in cues:
        widths = widths_map.get(cue) or DEFAULT_BRANCH_WIDTHS.get(cue) or DEFAULT_BRANCH_WIDTHS["pose"]
        dim = input_dims.get(cue) or datalib.cue_dim(cue, schema)
        branches.append(BranchConfig(cue=cue, input_dim=int(dim), widths=tuple(widths)))
    return ModelConfig(
        branches=branches,
        sequence_length=int(model_cfg.get("sequence_length", 5000)),
        classifier_dims=tuple(model_cfg.get("classifier_dims", (256, 32, 2))),
        attention_reduction=int(model_cfg.get("attention_reduction", 4)),
        pooling=model_cfg.get("pooling", "max"),
        use_attention=bool(model_cfg.get("use_attention", True)),
        backbone=model_cfg.get("backbone", "tdcn"),
        tcn_width=model_cfg.get("tcn_width"),
    )


def build_train_config(cfg: dict, args) -> training.TrainConfig:
    section = _section(cfg, "train")
    seed = args.seed if getattr(args, "seed", None) is not None else section.get("seed", 0)
    return training.TrainConfig(
        learning_rate=float(section.get("learning_rate", 2e-5)),
        momentum=float(section.get("momentum", 0.9)),
        batch_size=int(section.get("batch_size", 8)),
        epochs=int(section.get("epochs", 10)),
        seed=int(seed),
    )


def _data_root(cfg: dict, args, must_exist: bool) -> Path:
    root = _section(cfg, "data").get("root")
    if root is None:
        raise ConfigError("config data.root is required")
    root = Path(root)
    if must_exist and not (root / "manifest.csv").exists():
        raise ConfigError(f"dataset manifest not found under {root}")
    return root


def _out_dir(cfg: dict, args) -> Path:
    out = getattr(args, "out", None) or _section(cfg, "output").get("dir") or "runs/default"
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: dict, args) -> int:
    section = _section(cfg, "synth")
    if "cue_dims" not in section:
        raise ConfigError("config synth.cue_dims is required (cue -> feature count)")
    seed = args.seed if args.seed is not None else int(section.get("seed", 0))
    span = section.get("signal_span")
    spec = datalib.SyntheticSpec(
        subjects_per_class=int(section.get("subjects_per_class", 8)),
        sequence_length=int(section.get("sequence_length", 5000)),
        cue_dims={k: int(v) for k, v in section["cue_dims"].items()},
        seed=seed,
        amplitude=float(section.get("amplitude", 1.5)),
        period=float(section.get("period", 500.0)),
        noise_std=float(section.get("noise_std", 1.0)),
        informative_fraction=float(section.get("informative_fraction", 0.5)),
        mode=section.get("mode", datalib.STANDARD_MODE),
        signal_span=tuple(span) if span else None,
    )
    root = Path(args.out) if args.out else _data_root(cfg, args, must_exist=False)
    subjects = datalib.generate_synthetic_dataset(spec)
    fractions = tuple(section.get("split_fractions", (0.6, 0.2, 0.2)))
    splits = datalib.assign_splits(subjects, seed=seed, fractions=fractions)
    meta = {
        "generator": "synthetic",
        "mode": spec.mode,
        "seed": spec.seed,
        "subjects_per_class": spec.subjects_per_class,
        "sequence_length": spec.sequence_length,
        "cue_dims": spec.cue_dims,
        "amplitude": spec.amplitude,
        "period": spec.period,
        "noise_std": spec.noise_std,
        "informative_fraction": spec.informative_fraction,
        "signal_span": list(spec.signal_span) if spec.signal_span else None,
        "split_fractions": list(fractions),
    }
    datalib.write_dataset(root, subjects, splits, meta=meta)
    by_class = {0: 0, 1: 0}
    for s in subjects:
        by_class[s.label] += 1
    print(f"wrote {len(subjects)} subjects to {root}")
    print(f"class 0: {by_class[0]}  class 1: {by_class[1]}")
    for split in ("train", "validation", "test"):
        count = sum(1 for sid in splits.values() if sid == split)
        print(f"{split}: {count}")
    return 0


def cmd_train(cfg: dict, args) -> int:
    cues = _selected_cues(cfg, args)
    root = _data_root(cfg, args, must_exist=True)
    splits = datalib.load_dataset(root, cues)
    model_config = build_model_config(cfg, cues)
    train_config = build_train_config(cfg, args)
    out_dir = _out_dir(cfg, args)
    model = Model(model_config, seed=train_config.seed)
    strategy = getattr(args, "strategy", None) or _section(cfg, "data").get("strategy", training.HEAD_FIRST)
    logs, _ = training.train(model, splits, train_config, out_dir=out_dir, eval_strategy=strategy)
    last = logs[-1]
    best_f1 = max(entry.val_f1 for entry in logs)
    print(f"trained {train_config.epochs} epochs on {len(splits['train'])} subjects")
    print(f"final train accuracy {last.train_acc:.3f}, best validation F1 {best_f1:.3f}")
    print(f"checkpoint: {out_dir / 'checkpoint.bin'}")
    print(f"log: {out_dir / 'training_log.csv'}")
    return 0


def cmd_eval(cfg: dict, args) -> int:
    cues = _selected_cues(cfg, args)
    root = _data_root(cfg, args, must_exist=True)
    expected = build_model_config(cfg, cues)
    model, extras = model_from_checkpoint(args.checkpoint, expected=expected)
    stats = training.stats_from_arrays(extras) or None
    splits = datalib.load_dataset(root, cues)
    strategies = [args.strategy] if args.strategy else [training.HEAD_FIRST, training.AVERAGE]
    rows = []
    for strategy in strategies:
        for split_name, subjects in splits.items():
            if not subjects:
                continue
            counts, metrics = training.evaluate(model, subjects, strategy, stats)
            rows.append(
                {
                    "strategy": strategy,
                    "split": split_name,
                    "accuracy": repr(metrics.accuracy),
                    "recall": repr(metrics.recall),
                    "precision": repr(metrics.precision),
                    "f1": repr(metrics.f1),
                    "tp": counts.tp,
                    "tn": counts.tn,
                    "fp": counts.fp,
                    "fn": counts.fn,
                }
            )
    if not rows:
        raise datalib.DataError("no non-empty splits to evaluate")
    out_dir = _out_dir(cfg, args)
    report = out_dir / "metrics_report.csv"
    training.write_metrics_report(report, rows)
    for row in rows:
        print(
            f"{row['strategy']:>10} {row['split']:>10}  acc={float(row['accuracy']):.3f} "
            f"recall={float(row['recall']):.3f} precision={float(row['precision']):.3f} "
            f"f1={float(row['f1']):.3f}"
        )
    print(f"report: {report}")
    return 0


def cmd_analyze(cfg: dict, args) -> int:
    cues = _selected_cues(cfg, args)
    config = build_model_config(cfg, cues)
    own = analysis.model_summary(config)
    comparison = analysis.flops_comparison(config)
    baseline = analysis.model_summary(analysis.matched_tcn_config(config))
    print(analysis.render_text(own, title=f"model ({config.backbone})"))
    print()
    print(analysis.render_text(baseline, title=f"matched causal baseline (width {comparison['tcn_width']})"))
    print()
    relation = "<" if comparison["tdcn_cheaper"] else ">="
    print(
        f"ordering: TDCN {comparison['tdcn_flops']} FLOPs {relation} "
        f"TCN {comparison['tcn_flops']} FLOPs"
    )
    if args.out:
        out_dir = _out_dir(cfg, args)
        analysis.write_summary_csv(own, out_dir / "analysis_model.csv")
        analysis.write_summary_csv(baseline, out_dir / "analysis_tcn.csv")
        print(f"reports under {out_dir}")
    return 0


def cmd_inspect(args) -> int:
    config, arrays = load_checkpoint(args.checkpoint)
    print(f"checkpoint: {args.checkpoint}")
    print(f"config: {json.dumps(config.to_dict(), sort_keys=True)}")
    total = 0
    for name, arr in arrays.items():
        print(f"  {name}  shape={tuple(arr.shape)}")
        total += arr.size
    print(f"tensors: {len(arrays)}  scalars: {total}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tdcn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--cues", default=None, help="comma-separated cue selection")
        p.add_argument("--out", default=None, help="output directory")

    p_synth = sub.add_parser("synth-data", help="generate a labeled synthetic dataset")
    add_common(p_synth)

    p_train = sub.add_parser("train", help="train a model and write checkpoint + log")
    add_common(p_train)
    p_train.add_argument("--strategy", choices=[training.HEAD_FIRST, training.AVERAGE], default=None)

    p_eval = sub.add_parser("evaluate", help="evaluate a checkpoint and write a metrics report")
    add_common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--strategy", choices=[training.HEAD_FIRST, training.AVERAGE], default=None)

    p_an = sub.add_parser("analyze", help="receptive-field / parameter / FLOPs report")
    add_common(p_an)

    p_ins = sub.add_parser("inspect-checkpoint", help="print checkpoint header and tensors")
    p_ins.add_argument("checkpoint")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = _make_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "inspect-checkpoint":
            return cmd_inspect(args)
        cfg = apply_env_overrides(load_config(args.config))
        if args.command == "synth-data":
            return cmd_synth(cfg, args)
        if args.command == "train":
            return cmd_train(cfg, args)
        if args.command == "evaluate":
            return cmd_eval(cfg, args)
        if args.command == "analyze":
            return cmd_analyze(cfg, args)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"error(config): {exc}", file=sys.stderr)
        return 2
    except datalib.DataError as exc:
        print(f"error(data): {exc}", file=sys.stderr)
        return 3
    except CheckpointError as exc:
        print(f"error(checkpoint): {exc}", file=sys.stderr)
        return 4
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
