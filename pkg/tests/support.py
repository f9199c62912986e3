"""Shared fixtures-in-code: the running example database (users, activities,
user activities, surveys) and random schema/database generators for the
property suites."""
from __future__ import annotations

import numpy as np

from relgen.data import Database, Table, categorical_column, numerical_column
from relgen.schema import (
    ColumnSpec,
    ForeignKeySpec,
    SchemaGraph,
    TableSpec,
    build_schema,
    parse_schema,
)

EXAMPLE_SCHEMA = {
    "tables": [
        {
            "name": "users",
            "columns": [
                {"name": "user_id", "kind": "categorical"},
                {"name": "gender", "kind": "categorical"},
                {"name": "age", "kind": "numerical"},
            ],
            "primary_key": ["user_id"],
            "foreign_keys": [],
        },
        {
            "name": "activities",
            "columns": [
                {"name": "activity_id", "kind": "categorical"},
                {"name": "category", "kind": "categorical"},
                {"name": "capacity", "kind": "numerical"},
            ],
            "primary_key": ["activity_id"],
            "foreign_keys": [],
        },
        {
            "name": "user_activities",
            "columns": [
                {"name": "ua_id", "kind": "categorical"},
                {"name": "ua_user", "kind": "categorical"},
                {"name": "ua_activity", "kind": "categorical"},
                {"name": "hours", "kind": "numerical"},
            ],
            "primary_key": ["ua_id"],
            "foreign_keys": [
                {"parent": "users", "columns": [["ua_user", "user_id"]]},
                {"parent": "activities", "columns": [["ua_activity", "activity_id"]]},
            ],
        },
        {
            "name": "surveys",
            "columns": [
                {"name": "survey_id", "kind": "categorical"},
                {"name": "survey_user", "kind": "categorical"},
                {"name": "score", "kind": "numerical"},
                {"name": "year", "kind": "categorical"},
            ],
            "primary_key": ["survey_id"],
            "foreign_keys": [
                {"parent": "users", "columns": [["survey_user", "user_id"]]},
            ],
        },
    ]
}

EXAMPLE_ORDER = ["users", "activities", "user_activities", "surveys"]


def example_schema() -> SchemaGraph:
    return parse_schema(EXAMPLE_SCHEMA)


def make_example_database(
    n_users: int = 40, n_activities: int = 8, seed: int = 7
) -> Database:
    """Seeded example database with a real cross-table signal: survey scores
    grow with how many activities the user does."""
    schema = example_schema()
    rng = np.random.default_rng(seed)
    young = rng.random(n_users) < 0.7
    age = np.where(
        young, rng.normal(21.0, 1.5, n_users), rng.normal(35.0, 6.0, n_users)
    ).round(1)
    users = Table(
        {
            "user_id": categorical_column([f"u{i}" for i in range(n_users)]),
            "gender": categorical_column(list(rng.choice(["M", "F"], n_users, p=[0.55, 0.45]))),
            "age": numerical_column(age),
        }
    )
    cats = rng.choice(["sports", "arts", "tech", "service"], n_activities)
    activities = Table(
        {
            "activity_id": categorical_column([f"a{i}" for i in range(n_activities)]),
            "category": categorical_column(list(cats)),
            "capacity": numerical_column(np.maximum(5, rng.normal(40, 10, n_activities)).round()),
        }
    )
    popularity = rng.dirichlet(np.ones(n_activities) * 2.0)
    ua_user, ua_act, hours = [], [], []
    n_per_user = np.zeros(n_users, dtype=int)
    for u in range(n_users):
        lam = 4.5 if young[u] else 2.5
        m = min(int(rng.poisson(lam)), n_activities)
        if m == 0:
            continue
        chosen = rng.choice(n_activities, size=m, replace=False, p=popularity)
        n_per_user[u] = m
        for a in chosen:
            ua_user.append(f"u{u}")
            ua_act.append(f"a{a}")
            base = 3.0 if cats[a] == "sports" else 1.5
            hours.append(round(float(rng.gamma(2.0, base)), 2))
    user_activities = Table(
        {
            "ua_id": categorical_column([f"ua{i}" for i in range(len(ua_user))]),
            "ua_user": categorical_column(ua_user),
            "ua_activity": categorical_column(ua_act),
            "hours": numerical_column(hours),
        }
    )
    s_user, s_score, s_year = [], [], []
    for u in range(n_users):
        for _ in range(int(rng.poisson(1.6))):
            s_user.append(f"u{u}")
            s_score.append(round(float(np.clip(4.0 + 0.8 * n_per_user[u] + rng.normal(0, 0.8), 0, 10)), 1))
            s_year.append(str(rng.choice(["2019", "2020", "2021"])))
    surveys = Table(
        {
            "survey_id": categorical_column([f"s{i}" for i in range(len(s_user))]),
            "survey_user": categorical_column(s_user),
            "score": numerical_column(s_score),
            "year": categorical_column(s_year),
        }
    )
    return Database(
        {
            "users": users,
            "activities": activities,
            "user_activities": user_activities,
            "surveys": surveys,
        },
        schema,
    )


def random_schema(rng: np.random.Generator, max_tables: int = 8, max_fks: int = 12) -> SchemaGraph:
    """Random acyclic schema: edges always point from earlier to later tables
    of a hidden permutation, so acyclicity holds by construction."""
    n = int(rng.integers(1, max_tables + 1))
    perm = rng.permutation(n)
    rank = {int(t): r for r, t in enumerate(perm)}
    n_fk = int(rng.integers(0, max_fks + 1)) if n > 1 else 0
    fk_cols: dict[int, list[str]] = {i: [] for i in range(n)}
    edges = []
    for k in range(n_fk):
        a, b = rng.choice(n, size=2, replace=False)
        a, b = int(a), int(b)
        if rank[a] > rank[b]:
            a, b = b, a
        col = f"fk{k}"
        fk_cols[b].append((col, a))
        edges.append((a, b, col))
    tables = []
    for i in range(n):
        cols = [ColumnSpec("id", "categorical"), ColumnSpec("val", "numerical")]
        cols += [ColumnSpec(c, "categorical") for c, _ in fk_cols[i]]
        tables.append(TableSpec(f"t{i}", tuple(cols), ("id",)))
    fks = [
        ForeignKeySpec(f"t{b}", f"t{a}", ((col, "id"),)) for a, b, col in edges
    ]
    return build_schema(tables, fks)


def random_database(
    g: SchemaGraph, rng: np.random.Generator, min_rows: int = 2, max_rows: int = 8
) -> Database:
    """Random data for a random schema, with valid foreign-key references.
    Tables are filled in a topological order so parents exist first."""
    from relgen.schema import default_order

    order = default_order(g)
    tables: dict[str, Table] = {}
    for ti in order.sequence:
        spec = g.tables[ti]
        n = int(rng.integers(min_rows, max_rows + 1))
        cols = {
            "id": categorical_column([f"{spec.name}-{r}" for r in range(n)]),
            "val": numerical_column(rng.normal(0, 1, n).round(3)),
        }
        for fk in g.fks_of(spec.name):
            parent = tables[fk.parent_table]
            pk = [str(v) for v in parent.columns["id"].values]
            cols[fk.child_columns[0]] = categorical_column(
                [pk[int(rng.integers(0, len(pk)))] for _ in range(n)]
            )
        tables[spec.name] = Table(
            {c.name: cols[c.name] for c in spec.columns}
        )
    return Database(tables, g)
