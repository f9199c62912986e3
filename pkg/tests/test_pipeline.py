"""Fit/generate orchestration, bundle persistence, multi-constraint chains."""
import json

import numpy as np
import pytest

from relgen.data import (
    Database,
    Table,
    categorical_column,
    check_referential_integrity,
    numerical_column,
)
from relgen.gan import TrainConfig
from relgen.pipeline import (
    CorruptBundle,
    FitConfig,
    VersionError,
    fit_database,
    generate_database,
    load_bundle,
    save_bundle,
)
from relgen.schema import (
    ColumnSpec,
    ForeignKeySpec,
    OrderError,
    TableSpec,
    build_schema,
    make_order,
)
from support import EXAMPLE_ORDER, make_example_database


def _ridge_config(seed=1, epsilon=0.05):
    return FitConfig(train=TrainConfig(backend="ridge", seed=seed), epsilon=epsilon, seed=seed)


@pytest.fixture(scope="module")
def fitted():
    db = make_example_database(n_users=40, n_activities=8, seed=17)
    order = make_order(db.schema, EXAMPLE_ORDER)
    bundle = fit_database(db, order, _ridge_config())
    return db, bundle


def test_fit_produces_models_per_table(fitted):
    db, bundle = fitted
    assert set(bundle.models) == set(db.tables)
    assert not bundle.models["users"].has_degree_model
    assert not bundle.models["activities"].has_degree_model
    assert bundle.models["surveys"].degree is not None  # single constraint
    assert len(bundle.models["user_activities"].match_stages) == 1  # two constraints
    for model in bundle.models.values():
        assert model.generator is not None


def test_fit_rejects_invalid_order():
    db = make_example_database(n_users=10, n_activities=4, seed=1)
    seq = tuple(
        db.schema.table_index(n)
        for n in ["surveys", "users", "activities", "user_activities"]
    )
    from relgen.schema import TableOrder

    with pytest.raises(OrderError):
        fit_database(db, TableOrder(seq), _ridge_config())


def test_generate_respects_sizes_and_integrity(fitted):
    db, bundle = fitted
    synth = generate_database(bundle, scale=1.0, seed=5)
    assert check_referential_integrity(synth) == {}
    for name in ("users", "activities"):
        assert synth.table(name).row_count == db.table(name).row_count
    for name in ("user_activities", "surveys"):
        real_n = db.table(name).row_count
        assert abs(synth.table(name).row_count - real_n) <= 0.05 * real_n + 1e-9


def test_generate_schema_equality(fitted):
    db, bundle = fitted
    synth = generate_database(bundle, scale=1.0, seed=6)
    for spec in db.schema.tables:
        table = synth.table(spec.name)
        assert table.column_names == spec.column_names
        for cspec in spec.columns:
            assert table.column(cspec.name).kind == cspec.kind
        if len(spec.primary_key) == 1:
            vals = table.column(spec.primary_key[0]).values
            assert len(set(map(str, vals))) == len(vals)  # fresh unique surrogates


def test_generate_deterministic(fitted):
    _, bundle = fitted
    a = generate_database(bundle, scale=1.0, seed=9)
    b = generate_database(bundle, scale=1.0, seed=9)
    for name in a.tables:
        for cname, col in a.table(name).columns.items():
            other = b.table(name).column(cname)
            assert (col.null_mask == other.null_mask).all()
            if col.kind == "categorical":
                assert (col.values == other.values).all()
            else:
                np.testing.assert_array_equal(col.values, other.values)


def test_generate_scale(fitted):
    db, bundle = fitted
    synth = generate_database(bundle, scale=0.5, seed=2)
    assert synth.table("users").row_count == round(0.5 * db.table("users").row_count)


def test_bundle_round_trip(tmp_path, fitted):
    _, bundle = fitted
    save_bundle(bundle, tmp_path / "bundle")
    loaded = load_bundle(tmp_path / "bundle")
    a = generate_database(bundle, scale=1.0, seed=4)
    b = generate_database(loaded, scale=1.0, seed=4)
    for name in a.tables:
        for cname, col in a.table(name).columns.items():
            other = b.table(name).column(cname)
            if col.kind == "categorical":
                assert (col.values == other.values).all()
            else:
                np.testing.assert_array_equal(col.values, other.values)


def test_truncated_bundle_is_corrupt(tmp_path, fitted):
    _, bundle = fitted
    save_bundle(bundle, tmp_path / "bundle")
    npz = tmp_path / "bundle" / "models" / "surveys.npz"
    npz.write_bytes(npz.read_bytes()[:40])
    with pytest.raises(CorruptBundle):
        load_bundle(tmp_path / "bundle")


def test_newer_format_version_rejected(tmp_path, fitted):
    _, bundle = fitted
    save_bundle(bundle, tmp_path / "bundle")
    manifest = tmp_path / "bundle" / "manifest.json"
    raw = json.loads(manifest.read_text())
    raw["format_version"] = 99
    manifest.write_text(json.dumps(raw))
    with pytest.raises(VersionError):
        load_bundle(tmp_path / "bundle")


def test_missing_manifest_is_corrupt(tmp_path):
    with pytest.raises(CorruptBundle):
        load_bundle(tmp_path)


# ---------------------------------------------------------------------------
# three constraints and degenerate shapes
# ---------------------------------------------------------------------------


def _three_parent_db(seed=3, n_child=60):
    rng = np.random.default_rng(seed)
    parents = []
    tables = {}
    for i, n in enumerate((6, 5, 4)):
        name = f"p{i}"
        parents.append(
            TableSpec(
                name,
                (ColumnSpec("id", "categorical"), ColumnSpec("v", "numerical")),
                ("id",),
            )
        )
        tables[name] = Table(
            {
                "id": categorical_column([f"{name}-{r}" for r in range(n)]),
                "v": numerical_column(rng.normal(i, 1, n).round(2)),
            }
        )
    child = TableSpec(
        "links",
        (
            ColumnSpec("id", "categorical"),
            ColumnSpec("r0", "categorical"),
            ColumnSpec("r1", "categorical"),
            ColumnSpec("r2", "categorical"),
            ColumnSpec("w", "numerical"),
        ),
        ("id",),
    )
    fks = tuple(
        ForeignKeySpec("links", f"p{i}", ((f"r{i}", "id"),)) for i in range(3)
    )
    g = build_schema(tuple(parents) + (child,), fks)
    sizes = [6, 5, 4]
    tables["links"] = Table(
        {
            "id": categorical_column([f"l{r}" for r in range(n_child)]),
            "r0": categorical_column([f"p0-{rng.integers(0, sizes[0])}" for _ in range(n_child)]),
            "r1": categorical_column([f"p1-{rng.integers(0, sizes[1])}" for _ in range(n_child)]),
            "r2": categorical_column([f"p2-{rng.integers(0, sizes[2])}" for _ in range(n_child)]),
            "w": numerical_column(rng.gamma(2, 1, n_child).round(2)),
        }
    )
    return Database(tables, g)


def test_three_constraint_table_fits_and_generates():
    db = _three_parent_db()
    order = make_order(db.schema, ["p0", "p1", "p2", "links"])
    bundle = fit_database(db, order, _ridge_config(seed=2))
    assert len(bundle.models["links"].match_stages) == 2  # f - 1 stages
    synth = generate_database(bundle, scale=1.0, seed=1)
    assert check_referential_integrity(synth) == {}
    real_n = db.table("links").row_count
    assert abs(synth.table("links").row_count - real_n) <= 0.05 * real_n + 1e-9


def test_pure_bridge_table_without_data_columns():
    rng = np.random.default_rng(5)
    a = TableSpec("a", (ColumnSpec("id", "categorical"),), ("id",))
    b = TableSpec("b", (ColumnSpec("id", "categorical"),), ("id",))
    bridge = TableSpec(
        "ab",
        (ColumnSpec("a_ref", "categorical"), ColumnSpec("b_ref", "categorical")),
        ("a_ref", "b_ref"),
    )
    g = build_schema(
        (a, b, bridge),
        (
            ForeignKeySpec("ab", "a", (("a_ref", "id"),)),
            ForeignKeySpec("ab", "b", (("b_ref", "id"),)),
        ),
    )
    pairs = {(int(rng.integers(0, 5)), int(rng.integers(0, 4))) for _ in range(12)}
    db = Database(
        {
            "a": Table({"id": categorical_column([f"a{r}" for r in range(5)])}),
            "b": Table({"id": categorical_column([f"b{r}" for r in range(4)])}),
            "ab": Table(
                {
                    "a_ref": categorical_column([f"a{x}" for x, _ in sorted(pairs)]),
                    "b_ref": categorical_column([f"b{y}" for _, y in sorted(pairs)]),
                }
            ),
        },
        g,
    )
    order = make_order(g, ["a", "b", "ab"])
    bundle = fit_database(db, order, _ridge_config(seed=4))
    assert bundle.models["ab"].generator is None  # nothing to generate
    synth = generate_database(bundle, scale=1.0, seed=2)
    assert check_referential_integrity(synth) == {}
    assert synth.table("ab").column_names == ("a_ref", "b_ref")
