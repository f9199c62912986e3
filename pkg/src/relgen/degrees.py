"""Degree prediction: how many child rows each context row yields.

Single constraint: a regression on the encoded potential context whose
training residuals are retained and bootstrapped back into predictions, so
that the predicted degree distribution keeps the spread of the real one,
followed by threshold rounding that forces the total into a relative
tolerance band around the expected sum.

Two constraints: the task is split into (1) how many partners each left
parent row has, (2) which partners, found as near neighbors of a mapped
context row and sampled proportionally to the softmax of inverse distances,
and (3) the size of each match, predicted only for matched pairs.

Three or more constraints reduce to a chain of two-constraint stages, each
introducing one more key, with the last stage carrying the full tuples.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


class DegreeError(ValueError):
    pass


class DegenerateChild(DegreeError):
    """Child table empty; the fitted plan predicts nothing."""


# ---------------------------------------------------------------------------
# regression with retained residuals
# ---------------------------------------------------------------------------


def _augment(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DegreeError("design matrix must be 2-D")
    return np.hstack([X, np.ones((X.shape[0], 1))])


@dataclass
class DegreeRegressor:
    """Linear least-squares with intercept; training residuals retained."""

    weights: np.ndarray  # (features + 1,), intercept last
    residual_pool: np.ndarray  # (training rows,)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return _augment(X) @ self.weights


def fit_degree_regressor(X: np.ndarray, y: np.ndarray) -> DegreeRegressor:
    y = np.asarray(y, dtype=np.float64)
    A = _augment(X)
    if A.shape[0] != len(y):
        raise DegreeError("X and y must have the same number of rows")
    try:
        w, *_ = np.linalg.lstsq(A, y, rcond=None)
        if not np.all(np.isfinite(w)):
            raise np.linalg.LinAlgError("non-finite solution")
    except np.linalg.LinAlgError:
        # ridge fallback for designs lstsq cannot handle
        lam = 1e-6
        gram = A.T @ A + lam * np.eye(A.shape[1])
        w = np.linalg.solve(gram, A.T @ y)
    residuals = y - A @ w
    return DegreeRegressor(w, residuals)


def predict_raw_degrees(model: DegreeRegressor, X: np.ndarray, seed) -> np.ndarray:
    """Point prediction plus a residual drawn uniformly with replacement from
    the training pool; deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    pred = model.predict(X)
    pool = model.residual_pool
    if len(pool) == 0:
        return pred
    return pred + pool[rng.integers(0, len(pool), size=len(pred))]


# ---------------------------------------------------------------------------
# rounding to a target total
# ---------------------------------------------------------------------------


def _threshold_sum(d: np.ndarray, tau: float) -> tuple[np.ndarray, int]:
    rounded = np.floor(d + tau).astype(np.int64)
    return rounded, int(rounded.sum())


def round_degrees(d: np.ndarray, target_total: float, eps: float, seed=0) -> np.ndarray:
    """Round real-valued degrees to nonnegative integers whose sum lands in
    [(1 - eps) * target, (1 + eps) * target].

    Rounding uses a shared threshold tau, floor(d + tau), found by binary
    search (tau = 0 floors, tau -> 1 ceils); when no threshold reaches the
    band, entries are incremented or decremented at random until the nearest
    integer boundary of the band is met.
    """
    if target_total < 0:
        raise DegreeError("target total must be nonnegative")
    if not 0 <= eps < 1:
        raise DegreeError("eps must be in [0, 1)")
    d = np.maximum(np.asarray(d, dtype=np.float64), 0.0)
    lo, hi = (1.0 - eps) * target_total, (1.0 + eps) * target_total
    if math.ceil(lo) > math.floor(hi):
        raise DegreeError(
            f"no integer total exists in [{lo}, {hi}]; widen eps or adjust the target"
        )
    rng = np.random.default_rng(seed)
    floor_sum = int(np.floor(d).sum())
    ceil_sum = int(np.ceil(d).sum())

    if ceil_sum < lo:  # predicted too small
        out = np.ceil(d).astype(np.int64)
        for _ in range(math.ceil(lo) - ceil_sum):
            out[rng.integers(0, len(out))] += 1
        return out
    if floor_sum > hi:  # predicted too large
        out = np.floor(d).astype(np.int64)
        for _ in range(floor_sum - math.floor(hi)):
            nz = np.flatnonzero(out > 0)
            out[nz[rng.integers(0, len(nz))]] -= 1
        return out

    tau_min, tau_max = 0.0, 1.0
    out, s = _threshold_sum(d, 0.5)
    iters = 0
    while not (lo <= s <= hi) and iters < 64:
        if s < lo:
            tau_min = (tau_min + tau_max) / 2
        else:
            tau_max = (tau_min + tau_max) / 2
        out, s = _threshold_sum(d, (tau_min + tau_max) / 2)
        iters += 1
    while s < lo:
        out[rng.integers(0, len(out))] += 1
        s += 1
    while s > hi:
        nz = np.flatnonzero(out > 0)
        out[nz[rng.integers(0, len(nz))]] -= 1
        s -= 1
    return out


# ---------------------------------------------------------------------------
# two-constraint decomposition
# ---------------------------------------------------------------------------


def softmax_inverse_distance(distances: np.ndarray) -> np.ndarray:
    """Selection probabilities proportional to softmax(1 / distance).

    Probabilities are floored at a tiny value so that sampling without
    replacement stays feasible when one distance dominates all others.
    """
    d = np.maximum(np.asarray(distances, dtype=np.float64), 1e-12)
    logits = 1.0 / d
    logits = logits - logits.max()
    p = np.maximum(np.exp(logits), 1e-300)
    return p / p.sum()


@dataclass
class MatchPlan:
    """Fitted three-part decomposition for a table with two constraints."""

    count_model: DegreeRegressor  # distinct partners per left row
    mapper: np.ndarray  # (left width + 1, right width) linear map
    degree_model: DegreeRegressor  # on [left ctx | right ctx] of matched pairs
    total_pairs: int  # distinct pairs seen in training
    child_total: int  # training child row count
    k_factor: float = 1.5
    degenerate: bool = False

    def __post_init__(self):
        if self.k_factor <= 1:
            raise DegreeError("k_factor must exceed 1")

    def map_context(self, ctx_left: np.ndarray) -> np.ndarray:
        return _augment(ctx_left) @ self.mapper


def fit_match_plan(
    ctx_left: np.ndarray,
    ctx_right: np.ndarray,
    left_rows: np.ndarray,
    right_rows: np.ndarray,
    k_factor: float = 1.5,
) -> MatchPlan:
    """Fit the decomposition from per-child-row parent indices.

    ``left_rows[r]``/``right_rows[r]`` give, for child row r, the row index
    into the left/right parent context matrices.  Zero-degree pairs never
    enter the mapper or the degree model; they are what "not matched" means.
    """
    ctx_left = np.asarray(ctx_left, dtype=np.float64)
    ctx_right = np.asarray(ctx_right, dtype=np.float64)
    left_rows = np.asarray(left_rows, dtype=np.int64)
    right_rows = np.asarray(right_rows, dtype=np.int64)
    if len(left_rows) != len(right_rows):
        raise DegreeError("left and right child mappings differ in length")
    if len(left_rows) == 0:
        raise DegenerateChild("child table is empty")

    pair_counts: dict[tuple[int, int], int] = {}
    for a, b in zip(left_rows, right_rows):
        pair_counts[(int(a), int(b))] = pair_counts.get((int(a), int(b)), 0) + 1
    pairs = sorted(pair_counts)
    pa = np.asarray([p[0] for p in pairs], dtype=np.int64)
    pb = np.asarray([p[1] for p in pairs], dtype=np.int64)
    counts = np.asarray([pair_counts[p] for p in pairs], dtype=np.float64)

    partners = np.zeros(ctx_left.shape[0], dtype=np.float64)
    for a in pa:
        partners[a] += 1.0
    count_model = fit_degree_regressor(ctx_left, partners)

    A = _augment(ctx_left[pa])
    target = ctx_right[pb]
    try:
        mapper, *_ = np.linalg.lstsq(A, target, rcond=None)
    except np.linalg.LinAlgError:
        gram = A.T @ A + 1e-6 * np.eye(A.shape[1])
        mapper = np.linalg.solve(gram, A.T @ target)

    degree_model = fit_degree_regressor(
        np.hstack([ctx_left[pa], ctx_right[pb]]), counts
    )
    return MatchPlan(
        count_model,
        mapper,
        degree_model,
        total_pairs=len(pairs),
        child_total=len(left_rows),
        k_factor=k_factor,
    )


def select_matches(
    plan: MatchPlan,
    ctx_left: np.ndarray,
    ctx_right: np.ndarray,
    match_counts: np.ndarray,
    seed,
) -> list[tuple[int, int]]:
    """For each left row with match count m, pick m distinct right rows among
    the ceil(k_factor * m) nearest neighbors of the mapped context row."""
    mapped = plan.map_context(ctx_left)
    n_right = ctx_right.shape[0]
    pairs: list[tuple[int, int]] = []
    for a, m in enumerate(np.asarray(match_counts, dtype=np.int64)):
        if m <= 0:
            continue
        if m > n_right:
            logger.warning(
                "match count %d exceeds available partners %d; clamping", m, n_right
            )
            m = n_right
        k = min(n_right, math.ceil(plan.k_factor * m))
        dist = np.sqrt(((ctx_right - mapped[a]) ** 2).sum(axis=1))
        nearest = np.argsort(dist, kind="stable")[:k]
        probs = softmax_inverse_distance(dist[nearest])
        rng = np.random.default_rng([_seed_int(seed), a])
        chosen = rng.choice(len(nearest), size=int(m), replace=False, p=probs)
        pairs.extend((a, int(nearest[c])) for c in chosen)
    return pairs


def generate_pairs(
    plan: MatchPlan,
    ctx_left: np.ndarray,
    ctx_right: np.ndarray,
    target_total: int,
    eps: float,
    seed,
) -> list[tuple[int, int, int]]:
    """Sample (left row, right row, degree) triples for synthetic parents.

    Match counts are rounded so their sum tracks the training pair count
    scaled to the requested total; per-pair degrees are then rounded so the
    overall sum lands within the tolerance band around ``target_total``.
    """
    if plan.degenerate or target_total <= 0:
        return []
    ctx_left = np.asarray(ctx_left, dtype=np.float64)
    ctx_right = np.asarray(ctx_right, dtype=np.float64)
    base = _seed_int(seed)
    raw_counts = predict_raw_degrees(plan.count_model, ctx_left, [base, 1])
    pair_target = max(
        1, int(round(target_total * plan.total_pairs / max(plan.child_total, 1)))
    )
    pair_target = min(pair_target, ctx_left.shape[0] * ctx_right.shape[0])
    counts = round_degrees(raw_counts, pair_target, eps, [base, 2])
    counts = np.minimum(counts, ctx_right.shape[0])
    pairs = select_matches(plan, ctx_left, ctx_right, counts, [base, 3])
    if not pairs:
        return []
    feats = np.hstack(
        [ctx_left[[a for a, _ in pairs]], ctx_right[[b for _, b in pairs]]]
    )
    raw_deg = predict_raw_degrees(plan.degree_model, feats, [base, 4])
    deg = round_degrees(raw_deg, target_total, eps, [base, 5])
    return [(a, b, int(g)) for (a, b), g in zip(pairs, deg)]


def _seed_int(seed) -> int:
    if isinstance(seed, (list, tuple)):
        return int(np.random.SeedSequence(list(seed)).generate_state(1)[0])
    return int(seed)


# ---------------------------------------------------------------------------
# restructuring for three or more constraints
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RestructureStage:
    """One stage of the reduction: a table keyed by (left, right) where left
    is either the first original key or the previous stage's row identity."""

    name: str
    left: str
    right: str


def restructure_multi_fk(fk_labels) -> tuple[RestructureStage, ...]:
    """Reduce a table with f >= 2 key constraints to f - 1 stages with two
    constraints each; the final stage carries the full key-tuple information."""
    labels = [str(x) for x in fk_labels]
    if len(labels) < 2:
        raise DegreeError("restructuring needs at least two constraints")
    stages = []
    left = labels[0]
    last = len(labels) - 1
    for i, right in enumerate(labels[1:], start=1):
        name = "final" if i == last else f"stage{i}"
        stages.append(RestructureStage(name, left, right))
        left = name
    return tuple(stages)


def materialize_stages(tuples, f: int) -> list[list[tuple]]:
    """Concrete stage rows for an observed set of f-tuples.

    Stage 0 rows are distinct (k1, k2) pairs; stage i rows are
    (previous-stage row id, k_{i+2}).  Every stage therefore references at
    most two keys, and the final stage enumerates the distinct full tuples.
    """
    distinct = sorted({tuple(t) for t in tuples})
    if any(len(t) != f for t in distinct):
        raise DegreeError("tuple arity mismatch")
    if f < 2:
        raise DegreeError("need at least two keys per tuple")
    rows = sorted({t[:2] for t in distinct})
    stages: list[list[tuple]] = [list(rows)]
    ids = {p: i for i, p in enumerate(rows)}
    for depth in range(3, f + 1):
        prefixes = sorted({t[:depth] for t in distinct})
        stages.append([(ids[p[:-1]], p[-1]) for p in prefixes])
        ids = {p: i for i, p in enumerate(prefixes)}
    return stages


def reconstruct_from_stages(stages) -> set:
    """Expand the final stage's reference rows back into full key tuples."""
    if not stages:
        return set()
    resolved = [tuple(r) for r in stages[0]]
    for rows in stages[1:]:
        resolved = [resolved[ref] + (key,) for ref, key in rows]
    return set(resolved)
