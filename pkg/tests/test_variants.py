"""Extended tables, known/unknown splits, potential contexts, degrees."""
import numpy as np
import pytest

from relgen.data import Table, categorical_column
from relgen.encoding import fit_codec
from relgen.schema import affects, default_order, make_order
from relgen.variants import (
    CapExceeded,
    InternalInconsistency,
    PotentialContext,
    VariantBuilder,
    compute_degrees,
    provenance_tables,
    split_known_unknown,
)
from support import EXAMPLE_ORDER, make_example_database, random_database, random_schema


@pytest.fixture(scope="module")
def built(schema_module=None):
    db = make_example_database(n_users=30, n_activities=6, seed=3)
    schema = db.schema
    codecs = {s.name: fit_codec(db.table(s.name), s, schema, seed=0) for s in schema.tables}
    order = make_order(schema, EXAMPLE_ORDER)
    return db, VariantBuilder(db, codecs, order)


def test_extended_bridge_is_join_only(built):
    db, builder = built
    ext = builder.extended("user_activities")
    assert provenance_tables(ext) == {"users", "activities", "user_activities"}
    assert not any(s.aggregated for s in ext.encoded.spans)
    assert ext.rows == db.table("user_activities").row_count


def test_extended_surveys_matches_variant_table(built):
    db, builder = built
    ext = builder.extended("surveys")
    # base + joined users + activities and the bridge rolled up through users
    assert provenance_tables(ext) == {
        "users",
        "activities",
        "user_activities",
        "surveys",
    }
    joined = {s.table for s in ext.known_spans if not s.aggregated}
    rolled = {s.table for s in ext.known_spans if s.aggregated}
    assert joined == {"users"}
    assert rolled == {"activities", "user_activities"}
    assert ext.rows == db.table("surveys").row_count


def test_extended_no_fk_table_has_empty_known(built):
    db, builder = built
    ext = builder.extended("users")
    assert ext.known_width == 0
    assert ext.known_columns == ()
    assert provenance_tables(ext) == {"users"}
    assert ext.unknown_columns == ("user_id", "gender", "age")


def test_known_unknown_split_surveys(built):
    _, builder = built
    ext = builder.extended("surveys")
    assert ext.unknown_columns == ("survey_id", "score", "year")
    assert ext.known_columns[0] == "survey_user"
    known, unknown = split_known_unknown(ext)
    assert known.shape[1] == ext.known_width
    assert known.shape[1] + unknown.shape[1] == ext.encoded.width


def test_known_includes_both_fk_columns_for_bridge(built):
    _, builder = built
    ext = builder.extended("user_activities")
    assert "ua_user" in ext.known_columns
    assert "ua_activity" in ext.known_columns
    assert ext.unknown_columns == ("ua_id", "hours")


def test_size_identities(built):
    db, builder = built
    for name in ("user_activities", "surveys"):
        ext = builder.extended(name)
        assert ext.rows == db.table(name).row_count


def test_base_projection_round_trips(built):
    db, builder = built
    for name in db.tables:
        ext = builder.extended(name)
        codec = builder.codecs[name]
        decoded = codec.decode(ext.unknown_matrix)
        base = db.table(name)
        for col in codec.data_columns:
            a, b = base.column(col), decoded.column(col)
            if a.kind == "categorical":
                assert (a.values == b.values).all()
            else:
                ok = np.isclose(a.values, b.values, rtol=1e-9, atol=1e-12)
                assert ok[~a.null_mask].all()


def test_potential_context_single_fk_covers_all_parents(built):
    db, builder = built
    pc = builder.potential_context("surveys")
    assert pc.rows == db.table("users").row_count
    assert pc.encoded.width == builder.extended("surveys").known_width


def test_potential_context_two_fk_is_product(built):
    db, builder = built
    pc = builder.potential_context("user_activities")
    n = db.table("users").row_count * db.table("activities").row_count
    assert pc.rows == n
    assert len(set(pc.key_tuples)) == n  # each distinct combination once


def test_potential_context_cap(built):
    db, builder = built
    capped = VariantBuilder(db, builder.codecs, builder.order, pair_cap=10)
    with pytest.raises(CapExceeded):
        capped.potential_context("user_activities")


def test_degrees_match_counting_oracle(built):
    db, builder = built
    fks = db.schema.fks_of("surveys")
    pc = builder.potential_context("surveys")
    deg = compute_degrees(pc, db.table("surveys"), fks)
    assert deg.sum() == db.table("surveys").row_count
    # independent hash-count oracle
    users = [str(v) for v in db.table("users").column("user_id").values]
    counts = {u: 0 for u in users}
    for v in db.table("surveys").column("survey_user").values:
        counts[str(v)] += 1
    for r, key in enumerate(pc.key_tuples):
        assert deg[r] == counts[key[0][0]]
    assert (deg >= 0).all()
    if 0 in counts.values():
        assert (deg == 0).any()


def test_degrees_missing_tuple_is_inconsistency(built):
    db, builder = built
    fks = db.schema.fks_of("surveys")
    pc = builder.potential_context("surveys")
    truncated = PotentialContext(
        pc.table, pc.encoded.take_rows(np.arange(pc.rows - 5)),
        pc.key_tuples[:-5], pc.parent_rows[:-5],
    )
    missing_users = {k[0][0] for k in pc.key_tuples[-5:]}
    observed = {str(v) for v in db.table("surveys").column("survey_user").values}
    if missing_users & observed:
        with pytest.raises(InternalInconsistency):
            compute_degrees(truncated, db.table("surveys"), fks)


def test_degree_table_size_identity(built):
    db, builder = built
    pc = builder.potential_context("user_activities")
    deg = compute_degrees(pc, db.table("user_activities"), db.schema.fks_of("user_activities"))
    assert len(deg) == pc.rows
    assert deg.sum() == db.table("user_activities").row_count


def test_dedup_flag_collapses_repeated_spans(built):
    db, builder = built
    deduped = VariantBuilder(db, builder.codecs, builder.order, dedup=True)
    ext = deduped.extended("surveys")
    sigs = [(s.table, s.column, s.kind, s.aggregated) for s in ext.encoded.spans]
    assert len(sigs) == len(set(sigs))
    assert provenance_tables(ext) == {"users", "activities", "user_activities", "surveys"}


def test_information_scope_on_random_schemas():
    """Provenance of the extended table = the table itself plus exactly the
    tables affecting it, on random schemas with random data."""
    rng = np.random.default_rng(123)
    for _ in range(25):
        g = random_schema(rng, max_tables=6, max_fks=8)
        db = random_database(g, rng)
        order = default_order(g)
        codecs = {s.name: fit_codec(db.table(s.name), s, g, seed=1) for s in g.tables}
        builder = VariantBuilder(db, codecs, order)
        for ti in order.sequence:
            name = g.tables[ti].name
            ext = builder.extended(name)
            expected = {name} | {
                g.tables[j].name
                for j in range(g.n_tables)
                if affects(g, j, ti, order)
            }
            assert provenance_tables(ext) == expected


def test_multiple_constraints_same_pair_aggregate_per_constraint():
    from relgen.schema import ColumnSpec, ForeignKeySpec, TableSpec, build_schema
    from relgen.data import Database, numerical_column

    parent = TableSpec(
        "p", (ColumnSpec("id", "categorical"), ColumnSpec("v", "numerical")), ("id",)
    )
    child = TableSpec(
        "c",
        (
            ColumnSpec("id", "categorical"),
            ColumnSpec("first", "categorical"),
            ColumnSpec("second", "categorical"),
            ColumnSpec("w", "numerical"),
        ),
        ("id",),
    )
    g = build_schema(
        (parent, child),
        (
            ForeignKeySpec("c", "p", (("first", "id"),)),
            ForeignKeySpec("c", "p", (("second", "id"),)),
        ),
    )
    db = Database(
        {
            "p": Table(
                {
                    "id": categorical_column(["a", "b"]),
                    "v": numerical_column([1.0, 2.0]),
                }
            ),
            "c": Table(
                {
                    "id": categorical_column(["0", "1"]),
                    "first": categorical_column(["a", "b"]),
                    "second": categorical_column(["b", "a"]),
                    "w": numerical_column([5.0, 6.0]),
                }
            ),
        },
        g,
    )
    codecs = {s.name: fit_codec(db.table(s.name), s, g, seed=0) for s in g.tables}
    order = make_order(g, ["p", "c"])
    builder = VariantBuilder(db, codecs, order)
    ext = builder.extended("c")
    parent_paths = {s.path for s in ext.known_spans}
    assert len(parent_paths) == 2  # one context block per constraint
