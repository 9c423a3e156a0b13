"""Command-line front door.

Subcommands: ``train`` (one method, one config), ``lr-range`` (bound scan),
``compare`` (multi-method table), ``ensemble`` (recombine a saved checkpoint
directory), ``report`` (re-emit tables from logs). Exit codes: 0 success,
2 config error, 3 run failure, 4 io error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .collect import load_checkpoint
from .ensemble import EnsembleSpec, evaluate_ensemble, train_combiner
from .errors import (
    CheckpointCorruptionError,
    CheckpointFormatError,
    CollectionFailureError,
    ConfigurationError,
    CsvParseError,
    InputError,
    NoSignalError,
    NumericError,
    ShapeError,
    StateError,
    StratificationError,
)
from .netcore import evaluate, init_model
from .schedule import lr_range_scan, suggest_bounds

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUN = 3
EXIT_IO = 4

_CONFIG_ERRORS = (ConfigurationError, CsvParseError, StratificationError, InputError, ShapeError)
_RUN_ERRORS = (CollectionFailureError, NumericError, StateError, NoSignalError)
_IO_ERRORS = (CheckpointFormatError, CheckpointCorruptionError, OSError)


def _load_config(args) -> harness.ExperimentConfig:
    if args.config:
        return harness.ExperimentConfig.from_file(args.config, seed=args.seed)
    return harness.ExperimentConfig.from_mapping({}, seed=args.seed)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    method = args.method or cfg.method
    out_dir = Path(args.out) / method
    run = harness.run_one_method(cfg, method, out_dir)
    harness.write_run_artifacts(run, out_dir, fmt=args.format)
    print(
        f"{method}: {len(run.members)} members, "
        f"ensemble test acc {run.report.metrics.accuracy:.4f} "
        f"(best single {run.report.best_member_acc:.4f})"
    )
    print(f"artifacts in {out_dir}")
    return EXIT_OK


def cmd_lr_range(args) -> int:
    cfg = _load_config(args)
    train_ds, _, _ = harness.prepare_splits(cfg)
    model = init_model(cfg.model.layer_dims, cfg.seed)
    curve = lr_range_scan(
        model,
        train_ds.as_batch(),
        cfg.scan_lo,
        cfg.scan_hi,
        cfg.scan_steps,
        batch_size=cfg.model.batch_size,
        seed=cfg.seed,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    harness.write_scan_curve(curve, out_dir / "accuracy_vs_lr.csv")
    low_range, high_range = suggest_bounds(curve)
    bounds = {
        "alpha2_range": list(low_range),
        "alpha1_range": list(high_range),
        "scan_points": len(curve),
    }
    (out_dir / "bounds.json").write_text(json.dumps(bounds, sort_keys=True, indent=2) + "\n")
    print(f"low-bound range  {low_range[0]:.6g} .. {low_range[1]:.6g}")
    print(f"high-bound range {high_range[0]:.6g} .. {high_range[1]:.6g}")
    print(f"artifacts in {out_dir}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    methods = [args.method] if args.method else list(cfg.methods)
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    report = harness.compare_methods(cfg, methods, out_root)
    suffix = harness._FORMAT_SUFFIX.get(args.format)
    if suffix is None:
        raise ConfigurationError(f"unknown format {args.format!r}")
    renderers = {
        "csv": harness.comparison_to_csv,
        "jsonl": harness.comparison_to_jsonl,
        "md": harness.comparison_to_markdown,
    }
    (out_root / f"comparison.{suffix}").write_text(renderers[args.format](report))
    print(harness.comparison_to_markdown(report), end="")
    if report.has_errors:
        failed = ", ".join(row.method for row in report.rows if row.error)
        print(f"failed methods: {failed}", file=sys.stderr)
        return EXIT_RUN
    return EXIT_OK


def cmd_ensemble(args) -> int:
    cfg = _load_config(args)
    run_dir = Path(args.out)
    ckpt_dir = run_dir / "checkpoints"
    if not ckpt_dir.is_dir():
        raise FileNotFoundError(f"no checkpoints directory under {run_dir}")
    records = [load_checkpoint(p) for p in sorted(ckpt_dir.glob("*.aeck"))]
    if not records:
        raise FileNotFoundError(f"no .aeck checkpoints in {ckpt_dir}")
    summary_path = run_dir / "summary.json"
    if summary_path.exists():
        member_ids = set(json.loads(summary_path.read_text()).get("member_ids", []))
        members = [r for r in records if r.id in member_ids] or records
    else:
        members = records
    _, val_ds, test_ds = harness.prepare_splits(cfg)
    val, test = val_ds.as_batch(), test_ds.as_batch()
    spec = EnsembleSpec(
        members=members,
        mode=cfg.ensemble_mode,
        combiner_lr=cfg.combiner_lr,
        combiner_steps=cfg.combiner_steps,
    )
    if spec.mode == "weighted":
        train_combiner(spec, val)
    report = evaluate_ensemble(spec, test)
    summary = {
        "mode": spec.mode,
        "T": spec.size,
        "ensemble_test_acc": report.metrics.accuracy,
        "best_member_acc": report.best_member_acc,
        "mean_member_acc": report.mean_member_acc,
        "improvement": report.improvement,
        "member_ids": [r.id for r in members],
    }
    (run_dir / "ensemble_summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n"
    )
    rows = [
        {
            "member_id": record.id,
            "val_acc": evaluate(record.params, val).accuracy,
            "test_acc": test_acc,
            "weight": float(w),
        }
        for record, test_acc, w in zip(
            members,
            report.member_accuracies,
            spec.weights if spec.mode == "weighted" else [1.0 / spec.size] * spec.size,
        )
    ]
    suffix = harness._FORMAT_SUFFIX[args.format]
    (run_dir / f"members.{suffix}").write_text(
        harness.render_table(rows, harness._MEMBER_COLUMNS, args.format)
    )
    print(
        f"{spec.mode} ensemble of {spec.size}: test acc {report.metrics.accuracy:.4f} "
        f"(best single {report.best_member_acc:.4f})"
    )
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.out)
    log_path = run_dir / "metrics.jsonl"
    if not log_path.exists():
        raise FileNotFoundError(f"no metrics.jsonl under {run_dir}")
    log = harness.read_metrics_log(log_path)
    harness.write_lr_series(log, run_dir / "lr_vs_step.csv")
    members_csv = run_dir / "members.csv"
    if members_csv.exists() and args.format != "csv":
        rows = []
        lines = members_csv.read_text().splitlines()
        for line in lines[1:]:
            mid, val_acc, test_acc, weight = line.split(",")
            rows.append(
                {
                    "member_id": int(mid),
                    "val_acc": float(val_acc),
                    "test_acc": float(test_acc),
                    "weight": float(weight),
                }
            )
        suffix = harness._FORMAT_SUFFIX[args.format]
        (run_dir / f"members.{suffix}").write_text(
            harness.render_table(rows, harness._MEMBER_COLUMNS, args.format)
        )
    print(f"re-emitted series for {len(log)} steps into {run_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="autoens",
        description="Collect diverse checkpoints in one training run and ensemble them.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_method=False):
        p.add_argument("--config", metavar="PATH", help="flat key=value config file")
        p.add_argument("--seed", type=int, metavar="U64", help="override/provide the run seed")
        p.add_argument("--out", metavar="DIR", default="runs", help="output directory")
        p.add_argument(
            "--format", choices=("csv", "jsonl", "md"), default="csv", help="table format"
        )
        if needs_method:
            p.add_argument("--method", choices=harness.ALL_METHODS, help="collector to run")

    p_train = sub.add_parser("train", help="run one collection method end to end")
    common(p_train, needs_method=True)
    p_train.set_defaults(func=cmd_train)

    p_range = sub.add_parser("lr-range", help="scan a rate ramp and suggest bounds")
    common(p_range)
    p_range.set_defaults(func=cmd_lr_range)

    p_cmp = sub.add_parser("compare", help="run several methods and tabulate")
    common(p_cmp, needs_method=True)
    p_cmp.set_defaults(func=cmd_compare)

    p_ens = sub.add_parser("ensemble", help="recombine a saved checkpoint directory")
    common(p_ens)
    p_ens.set_defaults(func=cmd_ensemble)

    p_rep = sub.add_parser("report", help="re-emit tables and series from saved logs")
    common(p_rep)
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _RUN_ERRORS as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN
    except _IO_ERRORS as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
