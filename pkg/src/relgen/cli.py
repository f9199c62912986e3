"""Command line interface: fit, generate, evaluate."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, fields
from pathlib import Path

import yaml

from .data import load_database, write_database
from .gan import TrainConfig
from .metrics import evaluate_databases, load_rules
from .pipeline import (
    FitConfig,
    fit_database,
    generate_database,
    load_bundle,
    save_bundle,
)
from .schema import default_order, load_schema, make_order


def _load_config(path: str | None) -> FitConfig:
    """Config file carries TrainConfig fields plus epsilon / max_modes / seed."""
    raw = {}
    if path:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    train_fields = {f.name for f in fields(TrainConfig)}
    train = TrainConfig(**{k: v for k, v in raw.items() if k in train_fields})
    return FitConfig(
        train=train,
        max_modes=int(raw.get("max_modes", 5)),
        epsilon=float(raw.get("epsilon", 0.05)),
        seed=int(raw.get("seed", train.seed)),
    )


def _cmd_fit(args) -> int:
    schema = load_schema(args.schema)
    db = load_database(args.data, schema)
    config = _load_config(args.config)
    if args.order:
        order = make_order(schema, [s.strip() for s in args.order.split(",")])
    else:
        order = default_order(schema)
    bundle = fit_database(db, order, config)
    save_bundle(bundle, args.out)
    print(f"fitted {len(bundle.models)} table model(s) -> {args.out}")
    return 0


def _cmd_generate(args) -> int:
    bundle = load_bundle(args.model)
    synth = generate_database(bundle, scale=args.scale, seed=args.seed)
    write_database(synth, args.out)
    sizes = {name: t.row_count for name, t in synth.tables.items()}
    print(f"generated {sizes} -> {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    schema = load_schema(args.schema)
    real = load_database(args.real, schema)
    synth = load_database(args.synth, schema)
    rules = load_rules(args.rules) if args.rules else None
    ml_targets = {}
    for spec in args.ml_target or []:
        table, _, column = spec.partition(":")
        ml_targets[table] = column
    report = evaluate_databases(
        real,
        synth,
        rules=rules,
        ml_targets=ml_targets,
        seed=args.seed,
        include_columns=args.plot_data,
    )
    Path(args.report).write_text(report.to_json(), encoding="utf-8")
    print(f"overall score: {report.overall}")
    print(f"report -> {args.report}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relgen",
        description="Fit a generative model to a relational database and emit a "
        "synthetic database with the same schema.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit models on a real database")
    fit.add_argument("--schema", required=True, help="schema file (YAML or JSON)")
    fit.add_argument("--data", required=True, help="directory of per-table CSV files")
    fit.add_argument("--order", help="comma-separated table order (default: first valid)")
    fit.add_argument("--config", help="training config file (YAML or JSON)")
    fit.add_argument("--out", required=True, help="output bundle directory")
    fit.set_defaults(func=_cmd_fit)

    gen = sub.add_parser("generate", help="generate a synthetic database")
    gen.add_argument("--model", required=True, help="bundle directory from fit")
    gen.add_argument("--scale", type=float, default=1.0, help="size multiplier")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output directory for CSV files")
    gen.set_defaults(func=_cmd_generate)

    ev = sub.add_parser("evaluate", help="score synthetic data against real data")
    ev.add_argument("--schema", required=True)
    ev.add_argument("--real", required=True, help="directory of real CSV files")
    ev.add_argument("--synth", required=True, help="directory of synthetic CSV files")
    ev.add_argument("--rules", help="rules file (YAML or JSON)")
    ev.add_argument("--report", required=True, help="output report path (JSON)")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument(
        "--ml-target",
        action="append",
        help="table:column to run ML efficacy on (repeatable)",
    )
    ev.add_argument(
        "--plot-data",
        action="store_true",
        help="embed per-column histogram/ECDF series in the report",
    )
    ev.set_defaults(func=_cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface a diagnostic, not a traceback
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
