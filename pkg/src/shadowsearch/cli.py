"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 numeric error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness as hn
from . import shadow as sh
from . import trainers as tr
from .envproc import MixtureSpec
from .errors import ConfigError, NumericError
from .inversion import InversionConfig, Objective, Regularizer, invert
from .sim import StrategyKind, load_dataset, params_from_vector, save_dataset
from .baselines import baseline_fixed

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _load_json(path) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _experiment_config(args) -> hn.ExperimentConfig:
    if args.config:
        cfg = hn.ExperimentConfig.from_json_file(args.config)
    elif args.preset:
        cfg = hn.preset(args.preset)
    else:
        raise ConfigError("need --config <path> or --preset <name>")
    if args.seed is not None:
        print(f"provenance: --seed {args.seed} overrides config seed {cfg.seed}")
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _cmd_gen_data(args) -> int:
    kind = StrategyKind(args.kind)
    mixture = MixtureSpec()
    source = tr.build_source_dataset(kind, args.m, args.n, seed=args.seed or 0,
                                     mixture_spec=mixture)
    out = Path(args.out or "data")
    out.mkdir(parents=True, exist_ok=True)
    mixtures = []
    for i, task in enumerate(source.tasks):
        save_dataset(task, out / f"task{i:05d}.bin")
        mixtures.append(task.mixture.to_dict())
    (out / "mixtures.json").write_text(json.dumps(mixtures, sort_keys=True))
    print(f"wrote {len(source.tasks)} task datasets to {out}")
    return EXIT_OK


def _cmd_pretrain(args) -> int:
    cfg = _experiment_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    from .cache import ArtifactCache, resolve_cache_dir

    cache = ArtifactCache(resolve_cache_dir(out / "cache"))
    model = hn.ensure_pretrained(cfg, cache, no_train=args.no_train, out_dir=out)
    path = out / "pretrained.ckpt"
    sh.save_checkpoint(model, path)
    print(f"pretrained checkpoint: {path}")
    return EXIT_OK


def _cmd_finetune(args) -> int:
    model = sh.load_checkpoint(args.model)
    dataset = load_dataset(args.data)
    cfg = tr.TrainConfig.finetune_default(seed=args.seed or 0)
    tuned = tr.finetune(model, dataset.records, cfg)
    out = Path(args.out or "finetuned.ckpt")
    sh.save_checkpoint(tuned, out)
    print(f"finetuned checkpoint: {out}")
    return EXIT_OK


def _cmd_optimize(args) -> int:
    spec = _load_json(args.config) if args.config else {}
    model = sh.load_checkpoint(args.model if args.model else spec["model"])
    x0 = (
        np.asarray(spec["x_init"], dtype=np.float64)
        if "x_init" in spec
        else baseline_fixed(model.kind).to_vector()
    )
    obj = Objective(
        alpha_cycle=spec.get("alpha_cycle", 0.02 if model.kind is StrategyKind.SPIRAL else 0.0),
        alpha_fail=spec.get("alpha_fail", 1.0),
        regularizer=Regularizer(spec.get("regularizer", "none")),
        lambda_init=spec.get("lambda_init", 0.05),
        lambda_cdist=spec.get("lambda_cdist", 0.5),
        d_target=spec.get("d_target", 2.0),
        x0=x0,
    )
    cfg = InversionConfig(
        steps=spec.get("steps", 400),
        lr=spec.get("lr", 0.01),
        restarts=spec.get("restarts", 8),
        seed=args.seed if args.seed is not None else spec.get("seed", 0),
    )
    result = invert(model, params_from_vector(model.kind, x0), obj, cfg)
    out = Path(args.out or "inversion.json")
    out.write_text(result.to_json())
    print(f"optimized params -> {out} (predicted fail {result.predicted_fail:.4f})")
    return EXIT_OK


def _cmd_run_stationary(args) -> int:
    cfg = _experiment_config(args)
    path = hn.run_stationary(cfg, no_train=args.no_train, threads=args.threads)
    print(f"metrics: {path}")
    print(hn.aggregate_report(cfg.out_dir))
    return EXIT_OK


def _cmd_run_nonstationary(args) -> int:
    cfg = _experiment_config(args)
    path = hn.run_nonstationary(cfg, no_train=args.no_train)
    print(f"steps: {path}")
    print(hn.aggregate_report(cfg.out_dir))
    return EXIT_OK


def _cmd_run_meta(args) -> int:
    cfg = _experiment_config(args)
    path = hn.run_meta_comparison(cfg, no_train=args.no_train)
    print(f"meta metrics: {path}")
    print(hn.aggregate_report(cfg.out_dir))
    return EXIT_OK


def _cmd_report(args) -> int:
    if not args.out:
        raise ConfigError("report needs --out <dir>")
    print(hn.aggregate_report(args.out))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shadowsearch",
        description="Optimize robot search strategies with a differentiable surrogate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config path")
        p.add_argument("--preset", help="named preset config")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", help="output directory/file")
        p.add_argument("--no-train", action="store_true", help="require cached checkpoints")
        p.add_argument("--threads", type=int, default=1, help="worker threads across seeds")

    p = sub.add_parser("gen-data", help="generate a simulated source dataset")
    common(p)
    p.add_argument("--kind", choices=["spiral", "probe"], default="probe")
    p.add_argument("--m", type=int, default=200, help="number of tasks")
    p.add_argument("--n", type=int, default=128, help="records per task")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("pretrain", help="pretrain the shadow model for a config")
    common(p)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("finetune", help="finetune a checkpoint on a task dataset")
    common(p)
    p.add_argument("--model", required=True, help="pretrained checkpoint path")
    p.add_argument("--data", required=True, help="task dataset path")
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("optimize", help="invert a checkpoint into optimized params")
    common(p)
    p.add_argument("--model", help="checkpoint path (or 'model' key in config)")
    p.set_defaults(func=_cmd_optimize)

    p = sub.add_parser("run-stationary", help="stationary benchmark")
    common(p)
    p.set_defaults(func=_cmd_run_stationary)

    p = sub.add_parser("run-nonstationary", help="nonstationary continuous benchmark")
    common(p)
    p.set_defaults(func=_cmd_run_nonstationary)

    p = sub.add_parser("run-meta", help="transfer vs meta-learning comparison")
    common(p)
    p.set_defaults(func=_cmd_run_meta)

    p = sub.add_parser("report", help="summarize metrics in an output directory")
    common(p)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
