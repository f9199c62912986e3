#!/usr/bin/env python3
"""Write the example database (users, activities, user_activities, surveys)
as CSV files plus the matching schema, rules and config documents, so the
CLI workflow can be exercised from a clean checkout:

    python scripts/make_example_db.py --out example
    relgen fit --schema example/schema.yaml --data example/data \
        --order users,activities,user_activities,surveys \
        --config example/config.yaml --out example/bundle
    relgen generate --model example/bundle --seed 1 --out example/synth
    relgen evaluate --schema example/schema.yaml --real example/data \
        --synth example/synth --rules example/rules.yaml \
        --report example/report.json
"""
import argparse
import sys
from pathlib import Path

import yaml

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from support import EXAMPLE_SCHEMA, make_example_database  # noqa: E402

from relgen.data import write_database  # noqa: E402

RULES = [
    {
        "table": "surveys",
        "if": {"column": "score", "op": "ge", "value": 0},
        "then": {"column": "score", "op": "le", "value": 10},
    },
    {
        "table": "user_activities",
        "if": {"column": "hours", "op": "not_null"},
        "then": {"column": "hours", "op": "ge", "value": 0},
    },
]

CONFIG = {
    "backend": "adversarial",
    "epochs": 150,
    "batch_size": 256,
    "seed": 11,
    "epsilon": 0.05,
    "max_modes": 5,
}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="example", help="output directory")
    parser.add_argument("--users", type=int, default=500)
    parser.add_argument("--activities", type=int, default=50)
    parser.add_argument("--seed", type=int, default=2024)
    args = parser.parse_args()

    out = Path(args.out)
    db = make_example_database(
        n_users=args.users, n_activities=args.activities, seed=args.seed
    )
    write_database(db, out / "data")
    (out / "schema.yaml").write_text(yaml.safe_dump(EXAMPLE_SCHEMA, sort_keys=False))
    (out / "rules.yaml").write_text(yaml.safe_dump(RULES, sort_keys=False))
    (out / "config.yaml").write_text(yaml.safe_dump(CONFIG, sort_keys=False))
    sizes = {name: t.row_count for name, t in db.tables.items()}
    print(f"wrote {sizes} under {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
