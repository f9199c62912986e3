"""Evaluation of a synthetic database against the real one.

Raw scores per table (marginal tests, mixture likelihood, classifier
separability, size error) and per constraint (degree distributions) are
normalized onto [0, 1] against the real data's self-score and combined by
harmonic means, so a single bad score drags the aggregate down.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy import stats as sps
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import f1_score, roc_auc_score
from sklearn.neighbors import KNeighborsClassifier

from .data import Database, Table, group_by_key, key_tuples
from .encoding import fit_mode_codec, mixture_log_likelihood
from .schema import ForeignKeySpec


class MetricError(ValueError):
    pass


class ConfigError(MetricError):
    pass


RANGE_KINDS = ("unit", "unbounded", "nonneg")


@dataclass
class MetricScore:
    name: str
    raw: float
    real_self: float
    normalized: float
    range_kind: str
    goal: str

    def to_dict(self) -> dict:
        return {
            "raw": self.raw,
            "real_self": self.real_self,
            "normalized": self.normalized,
            "range": self.range_kind,
            "goal": self.goal,
        }


def normalize_value(raw: float, real_self: float, range_kind: str, goal: str) -> float:
    """Map a raw score onto [0, 1] given the real data's self-score.

    Scores better than the real self-score are clipped to it, so the real
    data always normalizes to exactly 1.
    """
    if range_kind == "unit" and goal == "max":
        if real_self == 0:
            return 1.0
        return min(raw, real_self) / real_self
    if range_kind == "unit" and goal == "min":
        if real_self == 1:
            return 1.0
        return (1.0 - max(raw, real_self)) / (1.0 - real_self)
    if range_kind == "unbounded" and goal == "max":
        return float(np.exp(min(raw, real_self) - real_self))
    if range_kind == "nonneg" and goal == "min":
        return float(np.exp(real_self - max(raw, real_self)))
    raise ConfigError(f"no normalization for range {range_kind!r} with goal {goal!r}")


def make_score(name, raw, real_self, range_kind, goal) -> MetricScore:
    return MetricScore(
        name, float(raw), float(real_self),
        normalize_value(float(raw), float(real_self), range_kind, goal),
        range_kind, goal,
    )


def aggregate_harmonic(scores) -> float | None:
    """Harmonic mean of normalized scores; zero if any is zero, absent when
    there is nothing to aggregate."""
    vals = [float(s) for s in scores]
    if not vals:
        return None
    if any(v < 0 or v > 1 for v in vals):
        raise MetricError("harmonic aggregation expects scores in [0, 1]")
    if any(v == 0 for v in vals):
        return 0.0
    return len(vals) / sum(1.0 / v for v in vals)


# ---------------------------------------------------------------------------
# statistical scores
# ---------------------------------------------------------------------------


def ks_statistic(x, y) -> float:
    """Two-sample Kolmogorov-Smirnov statistic via merged empirical CDFs."""
    x = np.sort(np.asarray(x, dtype=np.float64))
    y = np.sort(np.asarray(y, dtype=np.float64))
    if len(x) == 0 or len(y) == 0:
        raise MetricError("KS statistic needs nonempty samples")
    grid = np.concatenate([x, y])
    cdf_x = np.searchsorted(x, grid, side="right") / len(x)
    cdf_y = np.searchsorted(y, grid, side="right") / len(y)
    return float(np.abs(cdf_x - cdf_y).max())


def chi2_pvalue(real_values, synth_values) -> float:
    """Two-sample chi-squared homogeneity p-value with small categories
    pooled until every expected cell count reaches 5."""
    cats = sorted(set(real_values) | set(synth_values))
    r = np.asarray([sum(1 for v in real_values if v == c) for c in cats], dtype=np.float64)
    s = np.asarray([sum(1 for v in synth_values if v == c) for c in cats], dtype=np.float64)
    R, S = r.sum(), s.sum()
    if R == 0 or S == 0:
        raise MetricError("chi-squared test needs nonempty samples")
    while len(r) > 1:
        tot = r + s
        exp_r = tot * R / (R + S)
        exp_s = tot * S / (R + S)
        if min(exp_r.min(), exp_s.min()) >= 5.0:
            break
        order = np.argsort(tot, kind="stable")
        i, j = sorted(order[:2])
        r[i] += r[j]
        s[i] += s[j]
        r = np.delete(r, j)
        s = np.delete(s, j)
    if len(r) <= 1:
        return 1.0
    tot = r + s
    exp_r = tot * R / (R + S)
    exp_s = tot * S / (R + S)
    stat = float((((r - exp_r) ** 2) / exp_r).sum() + (((s - exp_s) ** 2) / exp_s).sum())
    return float(sps.chi2.sf(stat, len(r) - 1))


def _column_values(table: Table, name: str):
    col = table.column(name)
    if col.kind == "numerical":
        return col.values[~col.null_mask]
    return [str(v) for v, m in zip(col.values, col.null_mask) if not m]


def marginal_scores(real: Table, synth: Table):
    """(CS, KS): mean chi-squared p-value over categorical columns and mean
    complement of the KS statistic over numerical columns; None when the
    table has no columns of that kind."""
    if real.column_names != synth.column_names:
        raise MetricError("tables have different columns")
    cs_parts, ks_parts = [], []
    for name, col in real.columns.items():
        if col.kind == "categorical":
            cs_parts.append(chi2_pvalue(_column_values(real, name), _column_values(synth, name)))
        else:
            x = _column_values(real, name)
            y = _column_values(synth, name)
            if len(x) and len(y):
                ks_parts.append(1.0 - ks_statistic(x, y))
    cs = float(np.mean(cs_parts)) if cs_parts else None
    ks = float(np.mean(ks_parts)) if ks_parts else None
    return cs, ks


def gm_score(real: Table, synth: Table, max_modes: int = 5, seed: int = 0) -> float | None:
    """Mean log likelihood of the synthetic numerical columns under per-column
    Gaussian mixtures fitted on the real data."""
    total = 0.0
    any_numeric = False
    for name, col in real.columns.items():
        if col.kind != "numerical":
            continue
        x = col.values[~col.null_mask]
        if len(x) == 0:
            continue
        codec = fit_mode_codec(col, max_modes, seed, nullable=bool(col.null_mask.any()))
        scol = synth.column(name)
        y = scol.values[~scol.null_mask]
        if len(y) == 0:
            continue
        total += float(mixture_log_likelihood(codec, y).mean())
        any_numeric = True
    return total if any_numeric else None


def _featurize(tables):
    """Stack tables into one numeric design matrix with aligned layouts:
    one-hot unions for categoricals, standardized values plus a null flag
    for numericals."""
    names = tables[0].column_names
    blocks = [[] for _ in tables]
    for name in names:
        kinds = {t.column(name).kind for t in tables}
        if len(kinds) != 1:
            raise MetricError(f"column {name!r}: kind mismatch across tables")
        kind = kinds.pop()
        if kind == "categorical":
            cats = sorted(
                {str(v) for t in tables for v, m in zip(t.column(name).values, t.column(name).null_mask) if not m}
            )
            index = {c: i for i, c in enumerate(cats)}
            for bi, t in enumerate(tables):
                col = t.column(name)
                block = np.zeros((t.row_count, len(cats) + 1))
                for r in range(t.row_count):
                    if col.null_mask[r]:
                        block[r, -1] = 1.0
                    else:
                        block[r, index[str(col.values[r])]] = 1.0
                blocks[bi].append(block)
        else:
            allv = np.concatenate([t.column(name).values[~t.column(name).null_mask] for t in tables])
            mu = float(allv.mean()) if len(allv) else 0.0
            sd = float(allv.std()) if len(allv) and allv.std() > 0 else 1.0
            for bi, t in enumerate(tables):
                col = t.column(name)
                v = np.where(col.null_mask, mu, col.values)
                block = np.stack([(v - mu) / sd, col.null_mask.astype(np.float64)], axis=1)
                blocks[bi].append(block)
    return [np.hstack(b) if b else np.zeros((t.row_count, 0)) for b, t in zip(blocks, tables)]


def disc_score(real: Table, synth: Table, seed: int = 0) -> float | None:
    """Separability of real vs synthetic rows by logistic regression on a
    held-out split, reported as 2 * max(AUC - 0.5, 0); indistinguishable
    data scores near 0."""
    if real.row_count == 0 or synth.row_count == 0:
        raise MetricError("discriminator score needs nonempty tables")
    if min(real.row_count, synth.row_count) < 8:
        return None
    rng = np.random.default_rng(seed)
    n = min(real.row_count, synth.row_count)
    ridx = rng.choice(real.row_count, size=n, replace=False)
    sidx = rng.choice(synth.row_count, size=n, replace=False)
    xr, xs = _featurize([real.take(ridx), synth.take(sidx)])
    X = np.vstack([xr, xs])
    y = np.concatenate([np.ones(n), np.zeros(n)])
    perm = rng.permutation(len(y))
    X, y = X[perm], y[perm]
    half = len(y) // 2
    clf = LogisticRegression(max_iter=500)
    clf.fit(X[:half], y[:half])
    probs = clf.predict_proba(X[half:])[:, 1]
    if len(set(y[half:])) < 2:
        return None
    auc = roc_auc_score(y[half:], probs)
    return float(2.0 * max(auc - 0.5, 0.0))


def fk_degree_array(db: Database, fk: ForeignKeySpec) -> np.ndarray:
    """Child-row counts per parent key, including zero-degree parents."""
    groups = group_by_key(db.table(fk.child_table), fk.child_columns)
    keys = key_tuples(db.table(fk.parent_table), fk.parent_columns)
    return np.asarray([len(groups.get(k, ())) for k in keys], dtype=np.float64)


def size_scores(real_db: Database, synth_db: Database):
    """(Card per table, Deg per FK label).

    Card is the relative table-size error (absent for empty real tables);
    Deg is the complement of the KS statistic between real and synthetic
    degree distributions.
    """
    card = {}
    for name in real_db.tables:
        n_real = real_db.table(name).row_count
        if n_real == 0:
            card[name] = None
            continue
        card[name] = abs(synth_db.table(name).row_count - n_real) / n_real
    deg = {}
    for fk in real_db.schema.fks:
        d_real = fk_degree_array(real_db, fk)
        d_synth = fk_degree_array(synth_db, fk)
        if len(d_real) == 0 or len(d_synth) == 0:
            deg[fk.label()] = None
            continue
        deg[fk.label()] = 1.0 - ks_statistic(d_real, d_synth)
    return card, deg


def ml_efficacy(real: Table, synth: Table, target_column: str, seed: int = 0):
    """Train classifiers on synthetic rows, score macro-F1 on held-out real
    rows; absent when the target has a single class."""
    label_synth = np.asarray(
        ["<null>" if m else str(v) for v, m in
         zip(synth.column(target_column).values, synth.column(target_column).null_mask)]
    )
    label_real = np.asarray(
        ["<null>" if m else str(v) for v, m in
         zip(real.column(target_column).values, real.column(target_column).null_mask)]
    )
    if len(set(label_synth)) < 2 or len(set(label_real)) < 2:
        return None
    feat_cols = [c for c in real.column_names if c != target_column]
    xr, xs = _featurize([real.project(feat_cols), synth.project(feat_cols)])
    rng = np.random.default_rng(seed)
    perm = rng.permutation(real.row_count)
    hold = perm[: max(1, real.row_count // 2)]
    out = {}
    for name, clf in (
        ("logistic_regression", LogisticRegression(max_iter=500)),
        ("knn", KNeighborsClassifier()),
    ):
        clf.fit(xs, label_synth)
        pred = clf.predict(xr[hold])
        out[name] = float(f1_score(label_real[hold], pred, average="macro"))
    return out


# ---------------------------------------------------------------------------
# rules
# ---------------------------------------------------------------------------

PREDICATE_OPS = ("eq", "ne", "in", "not_in", "lt", "le", "gt", "ge", "is_null", "not_null")


@dataclass(frozen=True)
class Predicate:
    column: str
    op: str
    value: object = None

    def __post_init__(self):
        if self.op not in PREDICATE_OPS:
            raise ConfigError(f"unknown predicate op {self.op!r}")

    def evaluate(self, table: Table) -> np.ndarray:
        col = table.column(self.column)
        null = col.null_mask
        if self.op == "is_null":
            return null.copy()
        if self.op == "not_null":
            return ~null
        if col.kind == "numerical":
            vals = col.values
            ref = float(self.value) if self.op not in ("in", "not_in") else None
            with np.errstate(invalid="ignore"):
                if self.op == "eq":
                    out = vals == ref
                elif self.op == "ne":
                    out = vals != ref
                elif self.op == "lt":
                    out = vals < ref
                elif self.op == "le":
                    out = vals <= ref
                elif self.op == "gt":
                    out = vals > ref
                elif self.op == "ge":
                    out = vals >= ref
                elif self.op == "in":
                    members = {float(v) for v in self.value}
                    out = np.asarray([v in members for v in vals])
                else:
                    members = {float(v) for v in self.value}
                    out = np.asarray([v not in members for v in vals])
        else:
            vals = np.asarray([str(v) for v in col.values], dtype=object)
            if self.op == "eq":
                out = vals == str(self.value)
            elif self.op == "ne":
                out = vals != str(self.value)
            elif self.op in ("lt", "le", "gt", "ge"):
                ref = str(self.value)
                comp = {"lt": np.less, "le": np.less_equal, "gt": np.greater, "ge": np.greater_equal}
                out = comp[self.op](vals.astype(str), ref)
            elif self.op == "in":
                members = {str(v) for v in self.value}
                out = np.asarray([v in members for v in vals])
            else:
                members = {str(v) for v in self.value}
                out = np.asarray([v not in members for v in vals])
        return np.asarray(out, dtype=bool) & ~null


@dataclass(frozen=True)
class RuleSpec:
    """If every antecedent predicate holds, every consequent one must too."""

    table: str
    antecedent: tuple[Predicate, ...]
    consequent: tuple[Predicate, ...]


def rule_violations(table: Table, rules) -> list[int]:
    """Per rule, the number of rows satisfying the antecedent but violating
    the consequent."""
    counts = []
    for rule in rules:
        if table.row_count == 0:
            counts.append(0)
            continue
        ante = np.ones(table.row_count, dtype=bool)
        for p in rule.antecedent:
            ante &= p.evaluate(table)
        cons = np.ones(table.row_count, dtype=bool)
        for p in rule.consequent:
            cons &= p.evaluate(table)
        counts.append(int((ante & ~cons).sum()))
    return counts


def _parse_predicates(raw) -> tuple[Predicate, ...]:
    items = raw if isinstance(raw, list) else [raw]
    return tuple(Predicate(p["column"], p["op"], p.get("value")) for p in items)


def load_rules(path: str | Path) -> list[RuleSpec]:
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise ConfigError("rules file must be a list of rule mappings")
    return [
        RuleSpec(r["table"], _parse_predicates(r["if"]), _parse_predicates(r["then"]))
        for r in raw
    ]


# ---------------------------------------------------------------------------
# full evaluation
# ---------------------------------------------------------------------------

_METRIC_SHAPE = {
    "cs": ("unit", "max"),
    "ks": ("unit", "max"),
    "gm": ("unbounded", "max"),
    "disc": ("unit", "min"),
    "card": ("nonneg", "min"),
    "deg": ("unit", "max"),
    "ml": ("unit", "max"),
    "rule": ("nonneg", "min"),
}


@dataclass
class MetricReport:
    tables: dict = field(default_factory=dict)
    degrees: dict = field(default_factory=dict)
    rules: dict = field(default_factory=dict)
    aggregates: dict = field(default_factory=dict)
    overall: float | None = None

    def to_dict(self) -> dict:
        def conv(v):
            if isinstance(v, MetricScore):
                return v.to_dict()
            if isinstance(v, dict):
                return {k: conv(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [conv(x) for x in v]
            return v

        return {
            "tables": conv(self.tables),
            "degrees": conv(self.degrees),
            "rules": conv(self.rules),
            "aggregates": conv(self.aggregates),
            "overall": self.overall,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), indent=2, **kw)


def _column_series(table: Table, max_points: int = 200) -> dict:
    out = {}
    for name, col in table.columns.items():
        if col.kind == "numerical":
            vals = np.sort(col.values[~col.null_mask])
            if len(vals) == 0:
                continue
            step = max(1, len(vals) // max_points)
            pts = vals[::step]
            frac = (np.arange(len(vals))[::step] + 1) / len(vals)
            out[name] = {"ecdf_x": pts.tolist(), "ecdf_y": frac.tolist()}
        else:
            counts: dict[str, int] = {}
            for v, m in zip(col.values, col.null_mask):
                key = "<null>" if m else str(v)
                counts[key] = counts.get(key, 0) + 1
            out[name] = {"counts": counts}
    return out


def evaluate_databases(
    real_db: Database,
    synth_db: Database,
    rules=None,
    ml_targets=None,
    seed: int = 0,
    max_modes: int = 5,
    include_columns: bool = False,
) -> MetricReport:
    """Score every table and constraint of the synthetic database.

    The real self-score for each metric is obtained by running the same
    computation with the real data on both sides, so evaluating the real
    database against itself normalizes every score to exactly 1.
    """
    report = MetricReport()
    ml_targets = ml_targets or {}
    for name in real_db.tables:
        real_full, synth_full = real_db.table(name), synth_db.table(name)
        # surrogate key columns are structural, not content: synthetic
        # identifiers never match real ones, so statistical scores skip them
        keys = real_db.schema.key_columns(name)
        content = [c for c in real_full.column_names if c not in keys]
        real = real_full.project(content)
        synth = synth_full.project(content)
        entry: dict = {"bn": "not computed"}
        if content:
            cs, ks = marginal_scores(real, synth)
            cs_self, ks_self = marginal_scores(real, real)
            if cs is not None:
                entry["cs"] = make_score("cs", cs, cs_self, *_METRIC_SHAPE["cs"])
            if ks is not None:
                entry["ks"] = make_score("ks", ks, ks_self, *_METRIC_SHAPE["ks"])
            gm = gm_score(real, synth, max_modes, seed)
            if gm is not None:
                gm_self = gm_score(real, real, max_modes, seed)
                entry["gm"] = make_score("gm", gm, gm_self, *_METRIC_SHAPE["gm"])
            disc = disc_score(real, synth, seed)
            if disc is not None:
                disc_self = disc_score(real, real, seed)
                if disc_self is not None:
                    entry["disc"] = make_score(
                        "disc", disc, disc_self, *_METRIC_SHAPE["disc"]
                    )
        if real_full.row_count > 0:
            card = abs(synth_full.row_count - real_full.row_count) / real_full.row_count
            entry["card"] = make_score("card", card, 0.0, *_METRIC_SHAPE["card"])
        if name in ml_targets:
            target = ml_targets[name]
            cols = [c for c in content if c != target] + [target]
            ml = ml_efficacy(real_full.project(cols), synth_full.project(cols), target, seed)
            ml_self = ml_efficacy(real_full.project(cols), real_full.project(cols), target, seed)
            if ml is not None and ml_self is not None:
                entry["ml"] = {
                    k: make_score("ml", ml[k], ml_self[k], *_METRIC_SHAPE["ml"]) for k in ml
                }
        if include_columns and content:
            entry["columns"] = {
                "real": _column_series(real),
                "synth": _column_series(synth),
            }
        report.tables[name] = entry

    card_map, deg_map = size_scores(real_db, synth_db)
    for label, value in deg_map.items():
        if value is not None:
            report.degrees[label] = make_score("deg", value, 1.0, *_METRIC_SHAPE["deg"])

    if rules:
        by_table: dict[str, list[RuleSpec]] = {}
        for rule in rules:
            by_table.setdefault(rule.table, []).append(rule)
        for tname, trules in by_table.items():
            synth_counts = rule_violations(synth_db.table(tname), trules)
            real_counts = rule_violations(real_db.table(tname), trules)
            report.rules[tname] = [
                make_score("rule", s, r, *_METRIC_SHAPE["rule"])
                for s, r in zip(synth_counts, real_counts)
            ]

    # aggregates: harmonic over tables per metric, then over metrics
    per_metric: dict[str, list[float]] = {}
    for entry in report.tables.values():
        for key, val in entry.items():
            if isinstance(val, MetricScore):
                per_metric.setdefault(key, []).append(val.normalized)
            elif isinstance(val, dict) and key == "ml":
                for sub in val.values():
                    per_metric.setdefault("ml", []).append(sub.normalized)
    for score in report.degrees.values():
        per_metric.setdefault("deg", []).append(score.normalized)
    for scores in report.rules.values():
        for score in scores:
            per_metric.setdefault("rule", []).append(score.normalized)
    report.aggregates = {
        k: aggregate_harmonic(v) for k, v in sorted(per_metric.items())
    }
    agg_vals = [v for v in report.aggregates.values() if v is not None]
    report.overall = aggregate_harmonic(agg_vals)
    return report
