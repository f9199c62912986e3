"""Columnar table storage, CSV ingestion, and the relational primitives
(left join, group-by) the context construction relies on.

Values are held column-wise: categorical columns as string object arrays,
numerical columns as float64, each with an explicit null mask (True = null).
Tables are treated as immutable after construction.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .schema import ForeignKeySpec, SchemaGraph, TableSpec


class DataError(ValueError):
    pass


class MissingTableFile(DataError):
    pass


class CoercionError(DataError):
    pass


class DuplicateKey(DataError):
    pass


class ReferentialIntegrityError(DataError):
    def __init__(self, message: str, violations: dict | None = None):
        super().__init__(message)
        self.violations = violations or {}


@dataclass
class Column:
    kind: str  # 'categorical' | 'numerical'
    values: np.ndarray
    null_mask: np.ndarray

    def __post_init__(self):
        if len(self.values) != len(self.null_mask):
            raise DataError("column values and null mask must have equal length")

    def __len__(self) -> int:
        return len(self.values)


def categorical_column(values, null_mask=None) -> Column:
    vals = np.asarray(
        ["" if v is None else str(v) for v in values], dtype=object
    )
    if null_mask is None:
        null_mask = np.asarray([v is None for v in values], dtype=bool)
    return Column("categorical", vals, np.asarray(null_mask, dtype=bool))


def numerical_column(values, null_mask=None) -> Column:
    vals = np.asarray(
        [np.nan if v is None else float(v) for v in values], dtype=np.float64
    )
    if null_mask is None:
        null_mask = np.asarray([v is None for v in values], dtype=bool)
    vals = vals.copy()
    vals[np.asarray(null_mask, dtype=bool)] = np.nan
    return Column("numerical", vals, np.asarray(null_mask, dtype=bool))


@dataclass
class Table:
    columns: dict[str, Column]

    def __post_init__(self):
        lengths = {len(c) for c in self.columns.values()}
        if len(lengths) > 1:
            raise DataError(f"ragged columns: lengths {sorted(lengths)}")

    @property
    def row_count(self) -> int:
        if not self.columns:
            return 0
        return len(next(iter(self.columns.values())))

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(self.columns)

    def column(self, name: str) -> Column:
        try:
            return self.columns[name]
        except KeyError:
            raise DataError(f"no column {name!r}") from None

    def take(self, idx) -> "Table":
        idx = np.asarray(idx, dtype=np.int64)
        return Table(
            {
                n: Column(c.kind, c.values[idx], c.null_mask[idx])
                for n, c in self.columns.items()
            }
        )

    def project(self, names) -> "Table":
        return Table({n: self.columns[n] for n in names})


@dataclass
class Database:
    tables: dict[str, Table]
    schema: SchemaGraph
    load_report: dict = field(default_factory=dict)

    def table(self, name: str) -> Table:
        try:
            return self.tables[name]
        except KeyError:
            raise DataError(f"database has no table {name!r}") from None


# ---------------------------------------------------------------------------
# keys and joins
# ---------------------------------------------------------------------------


def key_tuples(table: Table, columns) -> list:
    """Per-row tuples of the given columns' values; None where any part is null."""
    cols = [table.column(c) for c in columns]
    n = table.row_count
    out = []
    for r in range(n):
        if any(c.null_mask[r] for c in cols):
            out.append(None)
        else:
            out.append(tuple(c.values[r] for c in cols))
    return out


def unique_key_index(table: Table, columns) -> dict:
    """Map key tuple -> row index; raises DuplicateKey when keys repeat."""
    index: dict = {}
    for r, key in enumerate(key_tuples(table, columns)):
        if key is None:
            continue
        if key in index:
            raise DuplicateKey(
                f"key {key!r} on columns {tuple(columns)} occurs more than once"
            )
        index[key] = r
    return index


def match_rows(child: Table, parent: Table, fk: ForeignKeySpec) -> np.ndarray:
    """For every child row, the matching parent row index, or -1 when the FK
    is null or the referenced key is absent.  The parent key must be unique."""
    pindex = unique_key_index(parent, fk.parent_columns)
    out = np.full(child.row_count, -1, dtype=np.int64)
    for r, key in enumerate(key_tuples(child, fk.child_columns)):
        if key is not None:
            out[r] = pindex.get(key, -1)
    return out


def left_join(child: Table, parent: Table, fk: ForeignKeySpec, prefix: str) -> Table:
    """Left join of parent onto child along the FK; parent columns are appended
    under ``prefix``; unmatched child rows get nulls in the appended columns."""
    idx = match_rows(child, parent, fk)
    matched = idx >= 0
    safe_idx = np.where(matched, idx, 0)
    out = dict(child.columns)
    for name, col in parent.columns.items():
        vals = col.values[safe_idx].copy()
        mask = col.null_mask[safe_idx] | ~matched
        if col.kind == "numerical":
            vals = vals.astype(np.float64, copy=True)
            vals[~matched] = np.nan
        else:
            vals = vals.astype(object, copy=True)
            vals[~matched] = ""
        out[prefix + name] = Column(col.kind, vals, mask)
    return Table(out)


def group_by_key(table: Table, key_columns) -> dict:
    """Disjoint exhaustive partition of row indices grouped by key tuple.

    Rows whose key contains a null are grouped under None.  Group order is
    first appearance, which keeps downstream processing deterministic.
    """
    groups: dict = {}
    for r, key in enumerate(key_tuples(table, key_columns)):
        groups.setdefault(key, []).append(r)
    return {k: np.asarray(v, dtype=np.int64) for k, v in groups.items()}


def concat_tables(a: Table, b: Table) -> Table:
    """Row-wise concatenation; both tables must share column names and kinds."""
    if a.column_names != b.column_names:
        raise DataError("cannot concatenate tables with different columns")
    out = {}
    for name in a.column_names:
        ca, cb = a.columns[name], b.columns[name]
        if ca.kind != cb.kind:
            raise DataError(f"column {name!r}: kind mismatch")
        out[name] = Column(
            ca.kind,
            np.concatenate([ca.values, cb.values]),
            np.concatenate([ca.null_mask, cb.null_mask]),
        )
    return Table(out)


# ---------------------------------------------------------------------------
# CSV ingestion / output
# ---------------------------------------------------------------------------


def parse_table_csv(text: str, spec: TableSpec) -> Table:
    """Parse delimited text (comma, header row, empty field = null)."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise CoercionError(f"table {spec.name!r}: file has no header row") from None
    declared = set(spec.column_names)
    missing = declared - set(header)
    if missing:
        raise CoercionError(
            f"table {spec.name!r}: columns missing from file: {sorted(missing)}"
        )
    rows = list(reader)
    columns: dict[str, Column] = {}
    for cspec in spec.columns:
        ci = header.index(cspec.name)
        raw = [row[ci] if ci < len(row) else "" for row in rows]
        null = np.asarray([v == "" for v in raw], dtype=bool)
        if not cspec.nullable and null.any():
            where = int(np.flatnonzero(null)[0])
            raise CoercionError(
                f"table {spec.name!r}, column {cspec.name!r}: null at data row "
                f"{where} but column is not nullable"
            )
        if cspec.kind == "numerical":
            vals = np.full(len(raw), np.nan, dtype=np.float64)
            for r, v in enumerate(raw):
                if v == "":
                    continue
                try:
                    vals[r] = float(v)
                except ValueError:
                    raise CoercionError(
                        f"table {spec.name!r}, column {cspec.name!r}: cannot parse "
                        f"{v!r} as a number at data row {r}"
                    ) from None
            columns[cspec.name] = Column("numerical", vals, null)
        else:
            vals = np.asarray(raw, dtype=object)
            columns[cspec.name] = Column("categorical", vals, null)
    return Table(columns)


def check_referential_integrity(db: Database) -> dict:
    """Per-FK violation report: label -> list of violating child row indices."""
    report: dict[str, list[int]] = {}
    for fk in db.schema.fks:
        child, parent = db.table(fk.child_table), db.table(fk.parent_table)
        pindex = unique_key_index(parent, fk.parent_columns)
        bad = [
            r
            for r, key in enumerate(key_tuples(child, fk.child_columns))
            if key is not None and key not in pindex
        ]
        if bad:
            report[fk.label()] = bad
    return report


def load_database(
    directory: str | Path,
    schema: SchemaGraph,
    on_fk_violation: str = "reject",
) -> Database:
    """Load one CSV per schema table (file name = table name).

    Referential-integrity violations either abort the load (``reject``) or
    null out the offending foreign-key values (``null``); either way a report
    keyed by FK label is attached to the returned database.
    """
    if on_fk_violation not in ("reject", "null"):
        raise DataError("on_fk_violation must be 'reject' or 'null'")
    directory = Path(directory)
    tables = {}
    for spec in schema.tables:
        path = directory / f"{spec.name}.csv"
        if not path.exists():
            raise MissingTableFile(f"no file for table {spec.name!r}: {path}")
        tables[spec.name] = parse_table_csv(path.read_text(encoding="utf-8"), spec)
    db = Database(tables, schema)
    report = check_referential_integrity(db)
    if report:
        summary = "; ".join(f"{k}: {len(v)} row(s)" for k, v in report.items())
        if on_fk_violation == "reject":
            raise ReferentialIntegrityError(
                f"foreign-key violations: {summary}", violations=report
            )
        for fk in schema.fks:
            bad = report.get(fk.label())
            if not bad:
                continue
            child = db.table(fk.child_table)
            for cname in fk.child_columns:
                col = child.column(cname)
                col.null_mask[bad] = True
                if col.kind == "numerical":
                    col.values[bad] = np.nan
                else:
                    col.values[bad] = ""
        db.load_report = {"fk_nulled": {k: len(v) for k, v in report.items()}}
    return db


def format_value(col: Column, r: int) -> str:
    if col.null_mask[r]:
        return ""
    if col.kind == "numerical":
        v = float(col.values[r])
        if v == int(v) and abs(v) < 1e15:
            return str(int(v))
        return repr(v)
    return str(col.values[r])


def write_table_csv(table: Table, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        names = list(table.column_names)
        writer.writerow(names)
        cols = [table.columns[n] for n in names]
        for r in range(table.row_count):
            writer.writerow([format_value(c, r) for c in cols])


def write_database(db: Database, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, table in db.tables.items():
        write_table_csv(table, directory / f"{name}.csv")
