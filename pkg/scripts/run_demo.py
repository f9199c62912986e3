#!/usr/bin/env python3
"""Desk-scale indicator run: fit both backends on the example database,
generate synthetic copies, and print the evaluation scores side by side.

Not a benchmark reproduction; it exists to eyeball that the adversarial
backend tracks marginals, correlations, sizes and degree distributions on a
database small enough to iterate on.
"""
import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from support import EXAMPLE_ORDER, make_example_database  # noqa: E402

from relgen.gan import TrainConfig  # noqa: E402
from relgen.metrics import evaluate_databases  # noqa: E402
from relgen.pipeline import FitConfig, fit_database, generate_database  # noqa: E402
from relgen.schema import make_order  # noqa: E402


def run(db, order, backend: str, epochs: int, seed: int):
    cfg = FitConfig(
        train=TrainConfig(backend=backend, epochs=epochs, seed=seed),
        epsilon=0.05,
        seed=seed,
    )
    t0 = time.time()
    bundle = fit_database(db, order, cfg)
    synth = generate_database(bundle, scale=1.0, seed=seed + 1)
    elapsed = time.time() - t0
    report = evaluate_databases(db, synth, seed=0)
    return synth, report, elapsed


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--users", type=int, default=500)
    parser.add_argument("--activities", type=int, default=50)
    parser.add_argument("--epochs", type=int, default=150)
    parser.add_argument("--seed", type=int, default=11)
    args = parser.parse_args()

    db = make_example_database(n_users=args.users, n_activities=args.activities, seed=2024)
    order = make_order(db.schema, EXAMPLE_ORDER)
    print("real sizes:", {n: t.row_count for n, t in db.tables.items()})

    for backend, epochs in (("ridge", 0), ("adversarial", args.epochs)):
        synth, report, elapsed = run(db, order, backend, epochs or 1, args.seed)
        print(f"\n== backend: {backend} ({elapsed:.1f}s) ==")
        print("synth sizes:", {n: t.row_count for n, t in synth.tables.items()})
        header = f"{'table':>16} | " + " | ".join(
            f"{m:>6}" for m in ("cs", "ks", "gm", "disc", "card")
        )
        print(header)
        for name, entry in report.tables.items():
            cells = []
            for metric in ("cs", "ks", "gm", "disc", "card"):
                score = entry.get(metric)
                cells.append(f"{score.raw:6.2f}" if score is not None else "     -")
            print(f"{name:>16} | " + " | ".join(cells))
        for label, score in report.degrees.items():
            print(f"degree {label}: {score.raw:.3f}")
        print(f"aggregates: { {k: round(v, 3) for k, v in report.aggregates.items()} }")
        print(f"overall: {report.overall:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
