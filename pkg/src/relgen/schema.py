"""Relational schema graph: parsing, validation, and generation-order logic.

A schema is a set of tables with typed columns and foreign-key constraints.
Parents must be generated before children, so the constraint graph
(parent -> child edges) must be acyclic.  On top of the DAG two relations
are defined for a chosen topological order:

* ``ascends``: ancestor-or-self via foreign-key chains (order independent).
* ``affects``: the broader relation including tables reachable through
  shared ancestors inside the order prefix.  Equivalent to undirected
  connectivity in the subgraph spanned by the first tables of the order,
  which is how it is implemented here.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import yaml

COLUMN_KINDS = ("categorical", "numerical")


class SchemaError(ValueError):
    """Invalid schema document or constraint."""


class CyclicSchema(SchemaError):
    """Foreign-key graph contains a cycle."""


class UnknownTable(SchemaError):
    pass


class UnknownColumn(SchemaError):
    pass


class DuplicateName(SchemaError):
    pass


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    nullable: bool = False

    def __post_init__(self):
        if self.kind not in COLUMN_KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class ForeignKeySpec:
    child_table: str
    parent_table: str
    column_pairs: tuple[tuple[str, str], ...]  # (child column, parent column)

    @property
    def child_columns(self) -> tuple[str, ...]:
        return tuple(c for c, _ in self.column_pairs)

    @property
    def parent_columns(self) -> tuple[str, ...]:
        return tuple(p for _, p in self.column_pairs)

    def label(self) -> str:
        return f"{self.child_table}->{self.parent_table}({','.join(self.child_columns)})"


@dataclass(frozen=True)
class TableSpec:
    name: str
    columns: tuple[ColumnSpec, ...]
    primary_key: tuple[str, ...] = ()

    def __post_init__(self):
        seen = set()
        for col in self.columns:
            if col.name in seen:
                raise DuplicateName(f"table {self.name!r}: duplicate column {col.name!r}")
            seen.add(col.name)
        for pk in self.primary_key:
            if pk not in seen:
                raise UnknownColumn(f"table {self.name!r}: primary key column {pk!r} not declared")

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def column(self, name: str) -> ColumnSpec:
        for c in self.columns:
            if c.name == name:
                return c
        raise UnknownColumn(f"table {self.name!r} has no column {name!r}")


@dataclass(frozen=True)
class SchemaGraph:
    """Validated table set plus the parent->child constraint DAG."""

    tables: tuple[TableSpec, ...]
    fks: tuple[ForeignKeySpec, ...]
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {t.name: i for i, t in enumerate(self.tables)})

    # -- basic lookups -------------------------------------------------

    @property
    def n_tables(self) -> int:
        return len(self.tables)

    def table_index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownTable(f"unknown table {name!r}") from None

    def table(self, name: str) -> TableSpec:
        return self.tables[self.table_index(name)]

    def fks_of(self, child: str) -> tuple[ForeignKeySpec, ...]:
        """Foreign-key constraints on ``child`` (its parents), declaration order."""
        return tuple(fk for fk in self.fks if fk.child_table == child)

    def fks_referencing(self, parent: str) -> tuple[ForeignKeySpec, ...]:
        return tuple(fk for fk in self.fks if fk.parent_table == parent)

    def key_columns(self, table: str) -> frozenset[str]:
        """Columns playing a structural role: primary key or any FK child column."""
        spec = self.table(table)
        cols = set(spec.primary_key)
        for fk in self.fks_of(table):
            cols.update(fk.child_columns)
        return frozenset(cols)

    def parent_edges(self) -> dict[int, set[int]]:
        """Adjacency parent index -> set of child indices (edges deduplicated)."""
        adj: dict[int, set[int]] = {i: set() for i in range(self.n_tables)}
        for fk in self.fks:
            adj[self.table_index(fk.parent_table)].add(self.table_index(fk.child_table))
        return adj


@dataclass(frozen=True)
class TableOrder:
    """Permutation of table indices; parents always precede children."""

    sequence: tuple[int, ...]

    def position(self, table_index: int) -> int:
        return self.sequence.index(table_index)

    @property
    def positions(self) -> dict[int, int]:
        return {t: p for p, t in enumerate(self.sequence)}


class OrderError(SchemaError):
    """Sequence is not a valid topological order for the schema."""


# ---------------------------------------------------------------------------
# construction & validation
# ---------------------------------------------------------------------------


def build_schema(tables, fks) -> SchemaGraph:
    """Validate table/constraint collections and return the graph.

    Raises DuplicateName, UnknownTable, UnknownColumn, CyclicSchema or plain
    SchemaError depending on the violated invariant.
    """
    tables = tuple(tables)
    fks = tuple(fks)
    names = [t.name for t in tables]
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise DuplicateName(f"duplicate table name(s): {', '.join(dup)}")
    by_name = {t.name: t for t in tables}

    for fk in fks:
        if fk.child_table not in by_name:
            raise UnknownTable(f"foreign key references unknown child table {fk.child_table!r}")
        if fk.parent_table not in by_name:
            raise UnknownTable(f"foreign key references unknown parent table {fk.parent_table!r}")
        child, parent = by_name[fk.child_table], by_name[fk.parent_table]
        if not fk.column_pairs:
            raise SchemaError(f"foreign key {fk.label()}: empty column list")
        for ccol, pcol in fk.column_pairs:
            cspec = child.column(ccol)  # raises UnknownColumn
            pspec = parent.column(pcol)
            if cspec.kind != pspec.kind:
                raise SchemaError(
                    f"foreign key {fk.label()}: kind mismatch {ccol}({cspec.kind}) vs "
                    f"{pcol}({pspec.kind})"
                )
        if set(fk.parent_columns) != set(parent.primary_key):
            raise SchemaError(
                f"foreign key {fk.label()}: parent columns {fk.parent_columns} do not form "
                f"the declared key {parent.primary_key} of {parent.name!r}"
            )

    graph = SchemaGraph(tables, fks)
    _check_acyclic(graph)
    return graph


def _check_acyclic(g: SchemaGraph) -> None:
    adj = g.parent_edges()
    indeg = {i: 0 for i in range(g.n_tables)}
    for _, children in adj.items():
        for c in children:
            indeg[c] += 1
    queue = deque(i for i, d in indeg.items() if d == 0)
    seen = 0
    while queue:
        i = queue.popleft()
        seen += 1
        for c in adj[i]:
            indeg[c] -= 1
            if indeg[c] == 0:
                queue.append(c)
    if seen != g.n_tables:
        stuck = sorted(g.tables[i].name for i, d in indeg.items() if d > 0)
        raise CyclicSchema(f"cyclic foreign-key dependency involving: {', '.join(stuck)}")


def parse_schema(document: str | dict, fmt: str | None = None) -> SchemaGraph:
    """Parse a schema document (JSON or YAML text, or an already-loaded dict).

    Expected layout::

        tables:
          - name: users
            columns:
              - {name: user_id, kind: categorical}
              - {name: gender, kind: categorical, nullable: false}
            primary_key: [user_id]
            foreign_keys: []
          - name: surveys
            columns: [...]
            primary_key: [survey_id]
            foreign_keys:
              - parent: users
                columns: [[survey_user, user_id]]
    """
    if isinstance(document, (dict, list)):
        raw = document
    else:
        if fmt == "json":
            raw = json.loads(document)
        else:
            # YAML is a superset of JSON, so this covers both when unspecified.
            raw = yaml.safe_load(document)
    if not isinstance(raw, dict) or "tables" not in raw:
        raise SchemaError("schema document must be a mapping with a 'tables' list")

    tables, fks = [], []
    for entry in raw["tables"]:
        cols = tuple(
            ColumnSpec(c["name"], c["kind"], bool(c.get("nullable", False)))
            for c in entry.get("columns", [])
        )
        tables.append(TableSpec(entry["name"], cols, tuple(entry.get("primary_key", []))))
        for fk in entry.get("foreign_keys", []):
            pairs = tuple((str(c), str(p)) for c, p in fk["columns"])
            fks.append(ForeignKeySpec(entry["name"], fk["parent"], pairs))
    return build_schema(tables, fks)


def load_schema(path: str | Path) -> SchemaGraph:
    path = Path(path)
    fmt = "json" if path.suffix.lower() == ".json" else None
    return parse_schema(path.read_text(encoding="utf-8"), fmt=fmt)


def schema_to_dict(g: SchemaGraph) -> dict:
    """Inverse of parse_schema for bundle round trips."""
    out = {"tables": []}
    for t in g.tables:
        entry = {
            "name": t.name,
            "columns": [
                {"name": c.name, "kind": c.kind, "nullable": c.nullable} for c in t.columns
            ],
            "primary_key": list(t.primary_key),
            "foreign_keys": [
                {"parent": fk.parent_table, "columns": [list(p) for p in fk.column_pairs]}
                for fk in g.fks_of(t.name)
            ],
        }
        out["tables"].append(entry)
    return out


# ---------------------------------------------------------------------------
# partial orders
# ---------------------------------------------------------------------------


def ascends(g: SchemaGraph, i: int, j: int) -> bool:
    """Ancestor-or-self relation: True iff table i equals j or is an ancestor
    of j through parent->child constraint chains."""
    if i == j:
        return True
    adj = g.parent_edges()
    queue = deque([i])
    seen = {i}
    while queue:
        x = queue.popleft()
        for c in adj[x]:
            if c == j:
                return True
            if c not in seen:
                seen.add(c)
                queue.append(c)
    return False


def is_connected_in_prefix(
    g: SchemaGraph, i: int, j: int, order: TableOrder, prefix_len: int | None = None
) -> bool:
    """Undirected connectivity of tables i and j in the subgraph spanned by
    the first ``prefix_len`` tables of the order (default: the prefix ending
    at j).  A table is always connected to itself."""
    if i == j:
        return True
    pos = order.positions
    cap = pos[j] if prefix_len is None else prefix_len - 1
    if pos[i] > cap or pos[j] > cap:
        raise ValueError("both tables must lie inside the prefix")
    allowed = {t for t, p in pos.items() if p <= cap}
    neigh: dict[int, set[int]] = {t: set() for t in allowed}
    for fk in g.fks:
        a, b = g.table_index(fk.parent_table), g.table_index(fk.child_table)
        if a in allowed and b in allowed:
            neigh[a].add(b)
            neigh[b].add(a)
    queue = deque([i])
    seen = {i}
    while queue:
        x = queue.popleft()
        if x == j:
            return True
        for y in neigh[x]:
            if y not in seen:
                seen.add(y)
                queue.append(y)
    return False


def affects_or_equal(g: SchemaGraph, i: int, j: int, order: TableOrder) -> bool:
    """Reflexive affect relation: i may influence the generation of j."""
    if i == j:
        return True
    pos = order.positions
    if pos[i] > pos[j]:
        return False
    return is_connected_in_prefix(g, i, j, order)


def affects(g: SchemaGraph, i: int, j: int, order: TableOrder) -> bool:
    """Strict variant of affects_or_equal."""
    return i != j and affects_or_equal(g, i, j, order)


# ---------------------------------------------------------------------------
# topological orders
# ---------------------------------------------------------------------------


def enumerate_topological_orders(g: SchemaGraph, cap: int = 1000) -> list[TableOrder]:
    """All topological orders of the constraint DAG, up to ``cap``.

    Enumeration is deterministic: at every step candidates are tried in
    lexicographic table-name order, so the first result is the default order.
    """
    adj = g.parent_edges()
    indeg = {i: 0 for i in range(g.n_tables)}
    for _, children in adj.items():
        for c in children:
            indeg[c] += 1
    name_of = {i: g.tables[i].name for i in range(g.n_tables)}
    out: list[TableOrder] = []
    prefix: list[int] = []

    def backtrack():
        if len(out) >= cap:
            return
        if len(prefix) == g.n_tables:
            out.append(TableOrder(tuple(prefix)))
            return
        ready = sorted((t for t, d in indeg.items() if d == 0), key=lambda t: name_of[t])
        for t in ready:
            indeg[t] = -1
            for c in adj[t]:
                indeg[c] -= 1
            prefix.append(t)
            backtrack()
            prefix.pop()
            for c in adj[t]:
                indeg[c] += 1
            indeg[t] = 0

    backtrack()
    return out


def default_order(g: SchemaGraph) -> TableOrder:
    orders = enumerate_topological_orders(g, cap=1)
    if not orders:
        raise CyclicSchema("no topological order exists")
    return orders[0]


def make_order(g: SchemaGraph, table_names: list[str]) -> TableOrder:
    """Build and validate a TableOrder from a list of table names."""
    if sorted(table_names) != sorted(t.name for t in g.tables):
        raise OrderError(
            f"order must be a permutation of all tables; got {table_names!r}"
        )
    seq = tuple(g.table_index(n) for n in table_names)
    order = TableOrder(seq)
    validate_order(g, order)
    return order


def validate_order(g: SchemaGraph, order: TableOrder) -> None:
    if sorted(order.sequence) != list(range(g.n_tables)):
        raise OrderError("order is not a permutation of table indices")
    pos = order.positions
    for fk in g.fks:
        p, c = g.table_index(fk.parent_table), g.table_index(fk.child_table)
        if pos[p] >= pos[c]:
            raise OrderError(
                f"order violates constraint {fk.label()}: parent {fk.parent_table!r} "
                f"must precede child {fk.child_table!r}"
            )


def order_names(g: SchemaGraph, order: TableOrder) -> list[str]:
    return [g.tables[i].name for i in order.sequence]
