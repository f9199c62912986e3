"""Column normalization into model-ready numeric vectors and back.

Categorical columns become one-hot vectors.  Numerical columns are encoded
mode-specifically: a Gaussian mixture is fitted per column, the mixture
component with the highest responsibility becomes a one-hot "mode" block,
and the value is standardized within that mode ((x - mean) / (4 * std),
clamped to [-1, 1]).  Within-mode value dimensions are meaningless to
average, so they are flagged non-aggregable and dropped when child rows are
rolled up to parents by group means.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Column, Table
from .schema import SchemaGraph, TableSpec

VALUE_SCALE = 4.0
CLAMP_LO, CLAMP_HI = -1.0, 1.0
NULL_CATEGORY = "\x00<null>"
PRESENCE_COLUMN = "<present>"


class EncodingError(ValueError):
    pass


class NoData(EncodingError):
    """Numeric column has no non-null values to fit on."""


# ---------------------------------------------------------------------------
# layout
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Span:
    """A contiguous block of encoded dimensions belonging to one column.

    ``path`` is the provenance walk of table hops from the table the matrix
    describes down to the column's origin table; ``aggregated`` marks spans
    that went through at least one child-to-parent rollup.
    """

    table: str
    column: str
    kind: str  # 'onehot' | 'mode' | 'value' | 'flag'
    start: int
    stop: int
    path: tuple[str, ...] = ()
    aggregated: bool = False

    @property
    def width(self) -> int:
        return self.stop - self.start

    @property
    def aggregable(self) -> bool:
        return self.kind != "value"

    @property
    def column_key(self) -> tuple:
        """Identity of the original column a dimension derives from."""
        return (self.path, self.table, self.column)


def spans_width(spans) -> int:
    return max((s.stop for s in spans), default=0)


def aggregable_mask(spans, width: int | None = None) -> np.ndarray:
    width = spans_width(spans) if width is None else width
    mask = np.zeros(width, dtype=bool)
    for s in spans:
        if s.aggregable:
            mask[s.start : s.stop] = True
    return mask


@dataclass
class EncodedMatrix:
    """Rows x encoded-width float64 matrix plus the span layout."""

    matrix: np.ndarray
    spans: tuple[Span, ...]

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise EncodingError("encoded matrix must be 2-D")
        if self.matrix.shape[1] != spans_width(self.spans):
            raise EncodingError(
                f"matrix width {self.matrix.shape[1]} != span width {spans_width(self.spans)}"
            )

    @property
    def width(self) -> int:
        return self.matrix.shape[1]

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    def take_rows(self, idx) -> "EncodedMatrix":
        return EncodedMatrix(self.matrix[np.asarray(idx, dtype=np.int64)], self.spans)


def hstack_encoded(blocks) -> EncodedMatrix:
    blocks = list(blocks)
    rows = {b.rows for b in blocks}
    if len(rows) > 1:
        raise EncodingError(f"row count mismatch: {sorted(rows)}")
    spans = []
    offset = 0
    for b in blocks:
        for s in b.spans:
            spans.append(replace(s, start=s.start + offset, stop=s.stop + offset))
        offset += b.width
    mats = [b.matrix for b in blocks] if blocks else []
    matrix = np.hstack(mats) if mats else np.zeros((0, 0))
    return EncodedMatrix(matrix, tuple(spans))


# ---------------------------------------------------------------------------
# per-column codecs
# ---------------------------------------------------------------------------


@dataclass
class CategoricalCodec:
    """One-hot codec.  Categories are ordered by descending training
    frequency (ties lexicographic), so the modal category sits at index 0;
    the null sentinel is included as its own category for nullable columns.
    A value unseen at fit time encodes to an all-zero span and therefore
    decodes back to the modal category."""

    categories: tuple[str, ...]

    def __post_init__(self):
        if not self.categories:
            raise EncodingError("categorical codec needs at least one category")
        if len(set(self.categories)) != len(self.categories):
            raise EncodingError("categories must be unique")
        self._index = {c: i for i, c in enumerate(self.categories)}

    @property
    def width(self) -> int:
        return len(self.categories)

    def encode(self, col: Column) -> np.ndarray:
        n = len(col)
        out = np.zeros((n, self.width))
        for r in range(n):
            key = NULL_CATEGORY if col.null_mask[r] else str(col.values[r])
            j = self._index.get(key)
            if j is not None:
                out[r, j] = 1.0
        return out

    def decode(self, block: np.ndarray) -> Column:
        idx = np.argmax(block, axis=1)
        values = np.asarray([self.categories[j] for j in idx], dtype=object)
        null = values == NULL_CATEGORY
        values = values.copy()
        values[null] = ""
        return Column("categorical", values, null)


@dataclass
class ModeCodec:
    """Gaussian-mixture mode codec for one numerical column.

    Encoded layout: one-hot over modes (plus a trailing null slot when the
    column is nullable), then a single within-mode value dimension.
    """

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    nullable: bool = False
    integer_valued: bool = False
    loglik_history: tuple[float, ...] = ()

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.stds = np.asarray(self.stds, dtype=np.float64)
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise EncodingError("mode weights must sum to 1")
        if (self.stds <= 0).any():
            raise EncodingError("mode stds must be strictly positive")

    @property
    def n_modes(self) -> int:
        return len(self.weights)

    @property
    def width(self) -> int:
        return self.n_modes + (1 if self.nullable else 0) + 1

    def responsibilities(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)[:, None]
        log_p = (
            np.log(self.weights)[None, :]
            - np.log(self.stds)[None, :]
            - 0.5 * ((x - self.means[None, :]) / self.stds[None, :]) ** 2
        )
        return log_p  # unnormalized log responsibilities suffice for argmax

    def encode(self, col: Column) -> np.ndarray:
        n = len(col)
        out = np.zeros((n, self.width))
        valid = ~col.null_mask
        if valid.any():
            x = col.values[valid]
            mode = np.argmax(self.responsibilities(x), axis=1)
            v = (x - self.means[mode]) / (VALUE_SCALE * self.stds[mode])
            v = np.clip(v, CLAMP_LO, CLAMP_HI)
            rows = np.flatnonzero(valid)
            out[rows, mode] = 1.0
            out[rows, -1] = v
        if col.null_mask.any():
            if not self.nullable:
                raise EncodingError("null value in a column fitted as not nullable")
            out[np.flatnonzero(col.null_mask), self.n_modes] = 1.0
        return out

    def decode(self, block: np.ndarray) -> Column:
        n = block.shape[0]
        onehot = block[:, : self.width - 1]
        idx = np.argmax(onehot, axis=1)
        null = np.zeros(n, dtype=bool)
        if self.nullable:
            null = idx == self.n_modes
        mode = np.where(null, 0, np.minimum(idx, self.n_modes - 1))
        v = np.clip(block[:, -1], CLAMP_LO, CLAMP_HI)
        values = self.means[mode] + VALUE_SCALE * self.stds[mode] * v
        if self.integer_valued:
            values = np.round(values)
        values = values.copy()
        values[null] = np.nan
        return Column("numerical", values, null)


# ---------------------------------------------------------------------------
# Gaussian mixture fitting (EM)
# ---------------------------------------------------------------------------


def _kmeanspp_centers(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    while len(centers) < k:
        d2 = np.min((x[:, None] - np.asarray(centers)[None, :]) ** 2, axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(len(x))])
        else:
            centers.append(x[rng.choice(len(x), p=d2 / total)])
    return np.asarray(centers, dtype=np.float64)


def em_fit_1d(
    x: np.ndarray,
    k: int,
    rng: np.random.Generator,
    std_floor: float,
    max_iter: int = 100,
    rel_tol: float = 1e-6,
):
    """Classical EM for a 1-D Gaussian mixture with a variance floor.

    Returns (weights, means, stds, loglik_history) where the history holds
    the mean per-sample log likelihood evaluated before each M step; the
    sequence is nondecreasing because the floored M step still maximizes the
    expected complete-data likelihood over the constrained parameter set.
    """
    n = len(x)
    means = _kmeanspp_centers(x, k, rng)
    stds = np.full(k, max(x.std(), std_floor))
    weights = np.full(k, 1.0 / k)
    history: list[float] = []
    prev = -np.inf
    for _ in range(max_iter):
        log_p = (
            np.log(weights)[None, :]
            - np.log(stds)[None, :]
            - 0.5 * ((x[:, None] - means[None, :]) / stds[None, :]) ** 2
            - 0.5 * math.log(2 * math.pi)
        )
        row_max = log_p.max(axis=1, keepdims=True)
        log_norm = row_max[:, 0] + np.log(np.exp(log_p - row_max).sum(axis=1))
        ll = float(log_norm.mean())
        history.append(ll)
        resp = np.exp(log_p - log_norm[:, None])
        nk = resp.sum(axis=0)
        alive = nk > 1e-12
        new_means = means.copy()
        new_stds = stds.copy()
        new_means[alive] = (resp[:, alive] * x[:, None]).sum(axis=0) / nk[alive]
        var = (resp[:, alive] * (x[:, None] - new_means[None, alive]) ** 2).sum(axis=0) / nk[alive]
        new_stds[alive] = np.maximum(np.sqrt(var), std_floor)
        weights = nk / n
        means, stds = new_means, new_stds
        if abs(ll - prev) <= rel_tol * max(1.0, abs(ll)):
            break
        prev = ll
    return weights, means, stds, history


def fit_mode_codec(
    col: Column, max_modes: int, seed: int, nullable: bool
) -> ModeCodec:
    x = col.values[~col.null_mask]
    if len(x) == 0:
        raise NoData("numeric column has no non-null values")
    rng_root = np.random.SeedSequence(seed)
    spread = float(x.max() - x.min())
    std_floor = 1e-6 * (spread if spread > 0 else 1.0)
    n = len(x)
    k_max = min(max_modes, len(np.unique(x)))
    best = None
    for k, child in zip(range(1, k_max + 1), rng_root.spawn(k_max)):
        w, m, s, hist = em_fit_1d(x, k, np.random.default_rng(child), std_floor)
        bic = -2.0 * hist[-1] * n + (3 * k - 1) * math.log(n)
        if best is None or bic < best[0] - 1e-12:
            best = (bic, w, m, s, hist)
    _, w, m, s, hist = best
    keep = w >= 1.0 / (2.0 * n)
    if not keep.any():
        keep[np.argmax(w)] = True
    w, m, s = w[keep], m[keep], s[keep]
    w = w / w.sum()
    order = np.argsort(m, kind="stable")
    integer = bool(np.all(x == np.round(x)))
    return ModeCodec(
        w[order], m[order], s[order],
        nullable=nullable,
        integer_valued=integer,
        loglik_history=tuple(hist),
    )


def fit_categorical_codec(col: Column, nullable: bool) -> CategoricalCodec:
    keys = [NULL_CATEGORY if col.null_mask[r] else str(col.values[r]) for r in range(len(col))]
    counts: dict[str, int] = {}
    for k in keys:
        counts[k] = counts.get(k, 0) + 1
    if nullable and NULL_CATEGORY not in counts:
        counts[NULL_CATEGORY] = 0
    cats = sorted(counts, key=lambda c: (-counts[c], c))
    return CategoricalCodec(tuple(cats))


def mixture_log_likelihood(codec: ModeCodec, x: np.ndarray) -> np.ndarray:
    """Per-value log likelihood under the fitted mixture."""
    x = np.asarray(x, dtype=np.float64)[:, None]
    log_p = (
        np.log(codec.weights)[None, :]
        - np.log(codec.stds)[None, :]
        - 0.5 * ((x - codec.means[None, :]) / codec.stds[None, :]) ** 2
        - 0.5 * math.log(2 * math.pi)
    )
    row_max = log_p.max(axis=1, keepdims=True)
    return row_max[:, 0] + np.log(np.exp(log_p - row_max).sum(axis=1))


# ---------------------------------------------------------------------------
# table codec
# ---------------------------------------------------------------------------


@dataclass
class TableCodec:
    """Per-column codecs for one table's data columns.

    Key columns (primary key and foreign-key members) play a purely
    structural role: they are never encoded, and synthetic values for them
    are minted from the relational linkage instead of a model.
    """

    table: str
    codecs: dict  # column name -> CategoricalCodec | ModeCodec
    key_columns: tuple[str, ...]

    @property
    def data_columns(self) -> tuple[str, ...]:
        return tuple(self.codecs)

    @property
    def width(self) -> int:
        return sum(c.width for c in self.codecs.values())

    def spans(self, path: tuple[str, ...] | None = None) -> tuple[Span, ...]:
        path = (self.table,) if path is None else path
        spans = []
        offset = 0
        for name, codec in self.codecs.items():
            if isinstance(codec, CategoricalCodec):
                spans.append(Span(self.table, name, "onehot", offset, offset + codec.width, path))
                offset += codec.width
            else:
                mode_w = codec.width - 1
                spans.append(Span(self.table, name, "mode", offset, offset + mode_w, path))
                spans.append(Span(self.table, name, "value", offset + mode_w, offset + mode_w + 1, path))
                offset += codec.width
        return tuple(spans)

    def encode(self, table: Table) -> EncodedMatrix:
        blocks = [self.codecs[name].encode(table.column(name)) for name in self.codecs]
        matrix = np.hstack(blocks) if blocks else np.zeros((table.row_count, 0))
        return EncodedMatrix(matrix, self.spans())

    def decode(self, matrix) -> Table:
        mat = matrix.matrix if isinstance(matrix, EncodedMatrix) else np.asarray(matrix, dtype=np.float64)
        if mat.shape[1] != self.width:
            raise EncodingError(f"matrix width {mat.shape[1]} != codec width {self.width}")
        out = {}
        offset = 0
        for name, codec in self.codecs.items():
            out[name] = codec.decode(mat[:, offset : offset + codec.width])
            offset += codec.width
        return Table(out)


def fit_codec(
    table: Table,
    spec: TableSpec,
    schema: SchemaGraph | None = None,
    max_modes: int = 5,
    seed: int = 0,
) -> TableCodec:
    """Fit per-column codecs for the table's non-key columns.

    Numeric columns are fitted by EM over 1..max_modes components with BIC
    model selection, then components lighter than 1/(2 rows) are pruned.
    """
    if table.row_count == 0:
        raise NoData(f"table {spec.name!r} is empty")
    if max_modes < 1:
        raise EncodingError("max_modes must be at least 1")
    key_cols = (
        tuple(sorted(schema.key_columns(spec.name))) if schema is not None else ()
    )
    codecs = {}
    seq = np.random.SeedSequence(seed)
    per_col = iter(seq.spawn(len(spec.columns)))
    for cspec in spec.columns:
        child_seed = next(per_col)
        if cspec.name in key_cols:
            continue
        col = table.column(cspec.name)
        if cspec.kind == "numerical":
            codecs[cspec.name] = fit_mode_codec(
                col, max_modes, int(child_seed.generate_state(1)[0]), cspec.nullable
            )
        else:
            codecs[cspec.name] = fit_categorical_codec(col, cspec.nullable)
    return TableCodec(spec.name, codecs, key_cols)


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


def aggregate_mean(matrix, groups, mask=None) -> np.ndarray:
    """One output row per group: arithmetic means over aggregable dimensions.

    ``groups`` is a sequence of row-index arrays (possibly empty; empty groups
    yield zero rows).  ``mask`` defaults to the matrix's aggregable span mask.
    """
    if isinstance(matrix, EncodedMatrix):
        mat = matrix.matrix
        if mask is None:
            mask = aggregable_mask(matrix.spans, matrix.width)
    else:
        mat = np.asarray(matrix, dtype=np.float64)
        if mask is None:
            mask = np.ones(mat.shape[1], dtype=bool)
    cols = np.flatnonzero(np.asarray(mask, dtype=bool))
    out = np.zeros((len(groups), len(cols)))
    for g, idx in enumerate(groups):
        idx = np.asarray(idx, dtype=np.int64)
        if len(idx):
            out[g] = mat[np.ix_(idx, cols)].mean(axis=0)
    return out


def aggregated_spans(spans, path: tuple[str, ...]) -> tuple[Span, ...]:
    """Span layout after aggregation: value dims dropped, rest re-based and
    flagged aggregated, with the provenance walk replaced by ``path``."""
    out = []
    offset = 0
    for s in spans:
        if not s.aggregable:
            continue
        out.append(
            Span(s.table, s.column, s.kind, offset, offset + s.width, path, aggregated=True)
        )
        offset += s.width
    return tuple(out)
