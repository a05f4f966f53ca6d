"""Command-line surface.

Subcommands: zero-shot, train, eval, synth, gradcheck, dump-embeddings.
Exit codes: 0 success, 2 usage/config error, 3 data or format error,
4 numeric failure. All numeric JSON output uses 17 significant digits so
logged values round-trip binary64 exactly; metrics files carry a
``generated_at`` timestamp which is the only field allowed to differ
between identical runs.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import aggregate
from .encoder import EncoderParams
from .errors import (ConfigError, DataError, DimensionError, FormatError,
                     NumericError, PevaError)
from .store import Manifest, load_dataset, load_manifest
from .synth import SynthConfig, write_dataset
from .trainer import TrainConfig, evaluate, gradcheck_suite, sample_k_shot, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


# ---------------------------------------------------------------------------
# serialization helpers
# ---------------------------------------------------------------------------

def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def json_dumps(value, indent: int = 0) -> str:
    """JSON with floats at 17 significant digits and stable key order."""
    pad = " " * indent
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "null"
    if isinstance(value, float):
        return fmt_float(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, dict):
        items = [f'{json.dumps(str(k))}: {json_dumps(v)}' for k, v in value.items()]
        return "{" + ", ".join(items) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(json_dumps(v) for v in value) + "]"
    if isinstance(value, np.floating):
        return fmt_float(float(value))
    raise TypeError(f"cannot serialize {type(value).__name__}")


def write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json_dumps(doc) + "\n")


def write_jsonl(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json_dumps(row) + "\n" for row in rows))


def _timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())


# ---------------------------------------------------------------------------
# config assembly: defaults < manifest config < flags
# ---------------------------------------------------------------------------

_TRAIN_FIELDS = {f.name: f.type for f in fields(TrainConfig)}


def build_train_config(manifest: Manifest, flag_overrides: dict) -> TrainConfig:
    config = TrainConfig()
    merged = dict(manifest.config)
    merged.update({k: v for k, v in flag_overrides.items() if v is not None})
    for key, value in merged.items():
        if key not in _TRAIN_FIELDS:
            raise ConfigError(f"unknown training option {key!r}")
        current = getattr(config, key)
        try:
            if isinstance(current, bool):
                value = bool(value)
            elif isinstance(current, int):
                value = int(value)
            elif isinstance(current, float):
                value = float(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
        setattr(config, key, value)
    return config


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_zero_shot(args) -> int:
    manifest = load_manifest(args.manifest)
    features, bank = load_dataset(manifest, args.split)
    mode = "zero_peva" if args.agg == "peva" else "zero_avg"
    report = evaluate(features, bank, mode, scale=args.scale, threads=args.threads)
    doc = {
        "accuracy": report.accuracy,
        "per_class": report.per_class,
        "mode": report.mode,
        "agg_mode": args.agg,
        "seed": args.seed,
        "config_echo": {"scale": args.scale, "split": args.split},
        "generated_at": _timestamp(),
    }
    write_json(Path(args.out), doc)
    if args.report:
        lines = ["shape_id,label,view_index,score,weight\n"]
        for rec in features.shapes:
            agg = aggregate.aggregate_peva(bank.features, rec.views)
            for v in range(rec.views.shape[0]):
                lines.append(
                    f"{rec.shape_id},{rec.label_index},{v},"
                    f"{fmt_float(agg.scores[v])},{fmt_float(agg.weights[v])}\n")
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text("".join(lines))
    print(f"{mode} accuracy: {report.accuracy:.4f} over {report.total} shapes")
    return EXIT_OK


def cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    features, bank = load_dataset(manifest, "train")
    flag_overrides = {
        "shots": args.k,
        "epochs": args.epochs,
        "learning_rate": args.lr,
        "batch_size": args.batch_size,
        "logit_scale": args.scale,
        "weight_decay": args.weight_decay,
        "seed": args.seed,
    }
    if args.no_distill:
        flag_overrides["distill_on"] = False
    config = build_train_config(manifest, flag_overrides)
    try:
        config.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    sampled = sample_k_shot(features, config.shots, config.seed)
    eval_features = None
    if args.eval_per_epoch:
        eval_features, _ = load_dataset(manifest, args.eval_split)
    params, logs = train(sampled, bank, config, eval_features=eval_features)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    params.save(out_dir / "checkpoint.pevf")
    write_jsonl(out_dir / "train_log.jsonl", logs)
    print(f"trained {config.epochs} epochs on {len(sampled.shapes)} shapes "
          f"({config.shots}-shot); final loss {logs[-1]['loss_total']:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    features, bank = load_dataset(manifest, args.split)
    params = EncoderParams.load(args.checkpoint)
    if params.config.dim != features.dim:
        raise DimensionError(
            f"checkpoint dim {params.config.dim} does not match features dim {features.dim}")
    report = evaluate(features, bank, "few", params=params, scale=args.scale,
                      threads=args.threads)
    doc = {
        "accuracy": report.accuracy,
        "per_class": report.per_class,
        "mode": report.mode,
        "seed": args.seed,
        "config_echo": {"scale": args.scale, "split": args.split,
                        "checkpoint": str(args.checkpoint)},
        "generated_at": _timestamp(),
    }
    write_json(Path(args.out), doc)
    print(f"few-shot accuracy: {report.accuracy:.4f} over {report.total} shapes")
    return EXIT_OK


def cmd_synth(args) -> int:
    config = SynthConfig(
        classes=args.classes, views=args.views, dim=args.dim,
        shots=args.shots, test_per_class=args.test_per_class,
        prompt_alignment=args.alignment, view_noise=args.noise,
        degenerate_fraction=args.degenerate_fraction, seed=args.seed)
    manifest_path = write_dataset(config, args.out)
    print(f"wrote synthetic dataset to {manifest_path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = gradcheck_suite(seed=args.seed, tol=args.tol)
    for name in sorted(report.per_param):
        print(f"  {name}: max_rel_err={fmt_float(report.per_param[name])}")
    status = "PASS" if report.passed else "FAIL"
    print(f"gradcheck {status}: {report.n_checked} partials, "
          f"max_rel_err={fmt_float(report.max_rel_err)} "
          f"(worst: {report.worst}), tol={fmt_float(report.tol)}")
    return EXIT_OK if report.passed else EXIT_NUMERIC


def cmd_dump_embeddings(args) -> int:
    manifest = load_manifest(args.manifest)
    features, bank = load_dataset(manifest, args.split)
    params = None
    if args.checkpoint:
        params = EncoderParams.load(args.checkpoint)
        if params.config.dim != features.dim:
            raise DimensionError(
                f"checkpoint dim {params.config.dim} does not match features dim {features.dim}")
    header = "id,label," + ",".join(f"e{i}" for i in range(features.dim))
    lines = [header + "\n"]
    for rec in features.shapes:
        if params is not None:
            from .encoder import encode
            descriptor = encode(rec.views, params).data
        else:
            descriptor = aggregate.aggregate_peva(bank.features, rec.views).descriptor
        values = ",".join(fmt_float(x) for x in descriptor)
        lines.append(f"{rec.shape_id},{rec.label_index},{values}\n")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(lines))
    print(f"wrote {len(features.shapes)} descriptor rows to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="peva",
        description="zero/few-shot multi-view shape recognition on precomputed features")
    sub = parser.add_subparsers(dest="command", required=True)

    zs = sub.add_parser("zero-shot", help="training-free evaluation of a test split")
    zs.add_argument("--manifest", required=True)
    zs.add_argument("--agg", choices=["peva", "avg"], default="peva")
    zs.add_argument("--scale", type=float, default=aggregate.DEFAULT_LOGIT_SCALE)
    zs.add_argument("--split", default="test")
    zs.add_argument("--out", required=True, help="metrics JSON path")
    zs.add_argument("--report", default=None, help="optional per-view weight CSV")
    zs.add_argument("--threads", type=int, default=1)
    zs.add_argument("--seed", type=int, default=None)
    zs.set_defaults(func=cmd_zero_shot)

    tr = sub.add_parser("train", help="K-shot training of the aggregation encoder")
    tr.add_argument("--manifest", required=True)
    tr.add_argument("--k", type=int, default=None, help="shots per class")
    tr.add_argument("--epochs", type=int, default=None)
    tr.add_argument("--lr", type=float, default=None)
    tr.add_argument("--batch-size", type=int, default=None)
    tr.add_argument("--scale", type=float, default=None)
    tr.add_argument("--weight-decay", type=float, default=None)
    tr.add_argument("--no-distill", action="store_true",
                    help="train with the classification loss only")
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--eval-per-epoch", action="store_true")
    tr.add_argument("--eval-split", default="test")
    tr.add_argument("--out", required=True, help="output directory")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a trained checkpoint")
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--scale", type=float, default=aggregate.DEFAULT_LOGIT_SCALE)
    ev.add_argument("--split", default="test")
    ev.add_argument("--out", required=True)
    ev.add_argument("--threads", type=int, default=1)
    ev.add_argument("--seed", type=int, default=None)
    ev.set_defaults(func=cmd_eval)

    sy = sub.add_parser("synth", help="generate a synthetic dataset")
    sy.add_argument("--out", required=True, help="output directory")
    sy.add_argument("--classes", type=int, default=10)
    sy.add_argument("--views", type=int, default=8)
    sy.add_argument("--dim", type=int, default=64)
    sy.add_argument("--shots", type=int, default=16)
    sy.add_argument("--test-per-class", type=int, default=20)
    sy.add_argument("--alignment", type=float, default=0.9)
    sy.add_argument("--noise", type=float, default=0.3)
    sy.add_argument("--degenerate-fraction", type=float, default=0.0)
    sy.add_argument("--seed", type=int, default=0)
    sy.set_defaults(func=cmd_synth)

    gc = sub.add_parser("gradcheck", help="finite-difference check of the full backward pass")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.set_defaults(func=cmd_gradcheck)

    de = sub.add_parser("dump-embeddings", help="write per-shape descriptors as CSV")
    de.add_argument("--manifest", required=True)
    de.add_argument("--checkpoint", default=None)
    de.add_argument("--split", default="test")
    de.add_argument("--out", required=True)
    de.set_defaults(func=cmd_dump_embeddings)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, DataError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PevaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
