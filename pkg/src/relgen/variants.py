"""Construction of the table variants used for training and generation:
the extended table (base columns plus joined/aggregated context from every
table that affects it), the split into known and unknown parts, the
potential-context table (one row per candidate foreign-key value or
combination), and the degree column.

Context is gathered by a depth-first walk over the undirected constraint
graph restricted to the order prefix of the target table: crossing an edge
towards a parent joins that parent's expansion row-aligned; crossing towards
a child rolls the child's expansion up by group means over the foreign key,
with a presence flag so that parents without children are distinguishable
from children whose aggregated means are zero.  Tables already on the
current walk are not revisited, which bounds the recursion while still
allowing the same table to contribute through several distinct walks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Database, DataError, Table, group_by_key, key_tuples, match_rows
from .encoding import (
    EncodedMatrix,
    PRESENCE_COLUMN,
    Span,
    TableCodec,
    aggregate_mean,
    aggregated_spans,
    hstack_encoded,
)
from .schema import ForeignKeySpec, TableOrder


class VariantError(ValueError):
    pass


class CapExceeded(VariantError):
    """Materializing the candidate-key product would exceed the row cap."""


class InternalInconsistency(VariantError):
    """A foreign-key tuple of the table is missing from its potential context."""


@dataclass
class ExtendedTable:
    """Encoded [context | base] matrix for one table.

    The known span is the leading ``known_width`` dimensions (context from
    affecting tables); the unknown span is the trailing base-column block the
    generator must produce.  Key columns are structural and carry no encoded
    dimensions; at the column-name level they still follow the definition:
    unknown columns are all base columns except foreign-key members.
    """

    table: str
    encoded: EncodedMatrix
    known_width: int
    base: Table
    known_columns: tuple[str, ...]
    unknown_columns: tuple[str, ...]

    @property
    def known_matrix(self) -> np.ndarray:
        return self.encoded.matrix[:, : self.known_width]

    @property
    def unknown_matrix(self) -> np.ndarray:
        return self.encoded.matrix[:, self.known_width :]

    @property
    def known_spans(self) -> tuple[Span, ...]:
        return tuple(s for s in self.encoded.spans if s.stop <= self.known_width)

    @property
    def unknown_spans(self) -> tuple[Span, ...]:
        return tuple(s for s in self.encoded.spans if s.start >= self.known_width)

    @property
    def rows(self) -> int:
        return self.encoded.rows


@dataclass
class PotentialContext:
    """One encoded context row per candidate foreign-key value (or tuple of
    values when the table has several constraints)."""

    table: str
    encoded: EncodedMatrix
    key_tuples: tuple  # per row: tuple over FKs of the parent-key tuple
    parent_rows: np.ndarray  # (rows, n_fks) parent row indices

    @property
    def rows(self) -> int:
        return self.encoded.rows


def split_known_unknown(ext: ExtendedTable):
    """(known view, unknown view) of the encoded matrix."""
    return ext.known_matrix, ext.unknown_matrix


def context_column_name(span: Span) -> str:
    return ".".join(span.path[1:] + (span.column,))


class VariantBuilder:
    """Builds variants against one database (real during training, synthetic
    during generation).  Pure given its inputs; results are memoized."""

    def __init__(
        self,
        db: Database,
        codecs: dict,
        order: TableOrder,
        dedup: bool = False,
        pair_cap: int = 2_000_000,
    ):
        self.db = db
        self.codecs = codecs
        self.order = order
        self.dedup = dedup
        self.pair_cap = pair_cap
        self._pos = order.positions
        self._base_cache: dict[str, EncodedMatrix] = {}
        self._ext_cache: dict[str, ExtendedTable] = {}

    # -- low-level blocks ----------------------------------------------

    def _position(self, table: str) -> int:
        return self._pos[self.db.schema.table_index(table)]

    def _base(self, table: str) -> EncodedMatrix:
        if table not in self._base_cache:
            codec: TableCodec = self.codecs[table]
            self._base_cache[table] = codec.encode(self.db.table(table))
        return self._base_cache[table]

    def _walk_label(self, fk: ForeignKeySpec, next_table: str) -> str:
        """Disambiguate several constraints between the same table pair."""
        same = [
            f
            for f in self.db.schema.fks
            if {f.child_table, f.parent_table} == {fk.child_table, fk.parent_table}
        ]
        if len(same) == 1:
            return next_table
        return f"{next_table}#{same.index(fk)}"

    def _based(self, table: str, walk: tuple[str, ...]) -> EncodedMatrix:
        """Base block with its spans' provenance set to the current walk."""
        base = self._base(table)
        spans = tuple(
            Span(s.table, s.column, s.kind, s.start, s.stop, walk, s.aggregated)
            for s in base.spans
        )
        return EncodedMatrix(base.matrix, spans)

    def _expand(self, table: str, cap_pos: int, walk: tuple[str, ...]) -> EncodedMatrix:
        """Context expansion of ``table``: its encoded base columns plus all
        reachable context under the order-prefix cap, rows aligned to the
        table's rows.  ``walk`` already ends with this table's label."""
        schema = self.db.schema
        t = self.db.table(table)
        visited = {label.split("#", 1)[0] for label in walk}
        parts = [self._based(table, walk)]
        # join direction: this table's parents
        for fk in schema.fks_of(table):
            parent = fk.parent_table
            if parent in visited:
                continue
            label = self._walk_label(fk, parent)
            pblock = self._expand(parent, cap_pos, walk + (label,))
            idx = match_rows(t, self.db.table(parent), fk)
            if (idx < 0).any():
                raise DataError(
                    f"table {table!r}: null or dangling foreign key via {fk.label()}; "
                    "context construction requires referential integrity"
                )
            parts.append(pblock.take_rows(idx))
        # rollup direction: this table's children inside the prefix
        for fk in schema.fks_referencing(table):
            child = fk.child_table
            if child in visited or self._position(child) >= cap_pos:
                continue
            label = self._walk_label(fk, child)
            cwalk = walk + (label,)
            cblock = self._expand(child, cap_pos, cwalk)
            groups = group_by_key(self.db.table(child), fk.child_columns)
            parent_keys = key_tuples(t, fk.parent_columns)
            group_list = [groups.get(k, np.empty(0, dtype=np.int64)) for k in parent_keys]
            agg = aggregate_mean(cblock, group_list)
            spans = aggregated_spans(cblock.spans, cwalk)
            present = np.asarray([1.0 if len(g) else 0.0 for g in group_list])[:, None]
            flag = Span(
                child, PRESENCE_COLUMN, "flag",
                agg.shape[1], agg.shape[1] + 1, cwalk, aggregated=True,
            )
            parts.append(EncodedMatrix(np.hstack([agg, present]), spans + (flag,)))
        block = hstack_encoded(parts)
        if self.dedup:
            block = _dedupe(block)
        return block

    def fk_context(self, fk: ForeignKeySpec, target: str) -> EncodedMatrix:
        """Expansion of one FK's parent, rows aligned to the parent's rows."""
        label = self._walk_label(fk, fk.parent_table)
        return self._expand(fk.parent_table, self._position(target), (target, label))

    # -- variants --------------------------------------------------------

    def extended(self, table: str) -> ExtendedTable:
        if table in self._ext_cache:
            return self._ext_cache[table]
        schema = self.db.schema
        t = self.db.table(table)
        fks = schema.fks_of(table)
        known_parts = []
        for fk in fks:
            block = self.fk_context(fk, table)
            idx = match_rows(t, self.db.table(fk.parent_table), fk)
            if (idx < 0).any():
                raise DataError(
                    f"table {table!r}: null or dangling foreign key via {fk.label()}"
                )
            known_parts.append(block.take_rows(idx))
        base = self._based(table, (table,))
        encoded = hstack_encoded(known_parts + [base])
        known_width = encoded.width - base.width
        fk_cols = [c for fk in fks for c in fk.child_columns]
        spec = schema.table(table)
        known_columns = tuple(dict.fromkeys(fk_cols)) + tuple(
            context_column_name(s) for part in known_parts for s in part.spans
        )
        unknown_columns = tuple(c for c in spec.column_names if c not in set(fk_cols))
        ext = ExtendedTable(table, encoded, known_width, t, known_columns, unknown_columns)
        self._ext_cache[table] = ext
        return ext

    def potential_context(self, table: str) -> PotentialContext:
        """Candidate context rows: single constraint -> one row per parent row;
        several constraints -> the Cartesian product of parent rows (capped)."""
        schema = self.db.schema
        fks = schema.fks_of(table)
        if not fks:
            raise VariantError(f"table {table!r} has no foreign keys")
        blocks = [self.fk_context(fk, table) for fk in fks]
        keys = [key_tuples(self.db.table(fk.parent_table), fk.parent_columns) for fk in fks]
        sizes = [len(k) for k in keys]
        total = int(np.prod(sizes)) if sizes else 0
        if total > self.pair_cap:
            raise CapExceeded(
                f"candidate product for {table!r} has {total} rows (cap {self.pair_cap})"
            )
        if len(fks) == 1:
            rows = np.arange(sizes[0], dtype=np.int64)[:, None]
        else:
            grids = np.meshgrid(*[np.arange(s, dtype=np.int64) for s in sizes], indexing="ij")
            rows = np.stack([g.ravel() for g in grids], axis=1)
        encoded = hstack_encoded(
            [b.take_rows(rows[:, f]) for f, b in enumerate(blocks)]
        )
        tuples = tuple(
            tuple(keys[f][rows[r, f]] for f in range(len(fks))) for r in range(len(rows))
        )
        return PotentialContext(table, encoded, tuples, rows)


def _dedupe(block: EncodedMatrix) -> EncodedMatrix:
    """Keep only the first occurrence of each (table, column, kind, aggregated)
    span; collapses content repeated through multiple walks."""
    seen = set()
    keep_spans, keep_cols = [], []
    offset = 0
    for s in block.spans:
        sig = (s.table, s.column, s.kind, s.aggregated)
        if sig in seen:
            continue
        seen.add(sig)
        keep_cols.extend(range(s.start, s.stop))
        keep_spans.append(Span(s.table, s.column, s.kind, offset, offset + s.width, s.path, s.aggregated))
        offset += s.width
    return EncodedMatrix(block.matrix[:, keep_cols], tuple(keep_spans))


def fk_row_indices(db: Database, table: str) -> np.ndarray:
    """(rows, n_fks) parent row indices for every row of ``table``."""
    fks = db.schema.fks_of(table)
    t = db.table(table)
    cols = []
    for fk in fks:
        idx = match_rows(t, db.table(fk.parent_table), fk)
        if (idx < 0).any():
            raise DataError(f"table {table!r}: null or dangling foreign key via {fk.label()}")
        cols.append(idx)
    return np.stack(cols, axis=1) if cols else np.zeros((t.row_count, 0), dtype=np.int64)


def compute_degrees(pc: PotentialContext, table: Table, fks) -> np.ndarray:
    """Occurrence count of each potential-context row in the actual table.

    The counts partition the table's rows by foreign-key value, so they sum
    to the table's row count.
    """
    fks = tuple(fks)
    per_fk = [key_tuples(table, fk.child_columns) for fk in fks]
    counts: dict = {}
    for r in range(table.row_count):
        key = tuple(per_fk[f][r] for f in range(len(fks)))
        if any(k is None for k in key):
            raise DataError("null foreign-key value; degrees are undefined")
        counts[key] = counts.get(key, 0) + 1
    out = np.zeros(pc.rows, dtype=np.int64)
    for r, key in enumerate(pc.key_tuples):
        out[r] = counts.pop(key, 0)
    if counts:
        missing = next(iter(counts))
        raise InternalInconsistency(
            f"foreign-key tuple {missing!r} occurs in the table but not in the "
            "potential context"
        )
    return out


def provenance_tables(ext: ExtendedTable) -> set[str]:
    return {s.table for s in ext.encoded.spans}
