"""End-to-end orchestration: fit one model per table along the generation
order, persist the fitted state, and synthesize a database with the same
schema from fitted state alone.

Training per table: build the extended table, fit the degree machinery when
the table has foreign keys (a residual-retaining regressor for one
constraint, a chain of match plans for two or more), then fit the
conditional generator on known -> unknown.  Generation walks the same order:
contexts are rebuilt from already-generated tables, degrees are predicted
and rounded, context rows are replicated per degree, and the generator
fills in the unknown span, which is decoded back to raw columns.  Primary
keys are minted as fresh sequential surrogates, so referential integrity
holds by construction and no real row values are ever read back.
"""
from __future__ import annotations

import json
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Column, Database, Table, key_tuples
from .degrees import (
    DegreeRegressor,
    MatchPlan,
    fit_degree_regressor,
    fit_match_plan,
    generate_pairs,
    predict_raw_degrees,
    round_degrees,
)
from .encoding import CategoricalCodec, ModeCodec, TableCodec, fit_codec
from .gan import FittedGenerator, TrainConfig, fit_generator
from .schema import (
    OrderError,
    SchemaGraph,
    TableOrder,
    order_names,
    parse_schema,
    schema_to_dict,
    validate_order,
)
from .variants import VariantBuilder, compute_degrees, fk_row_indices

FORMAT_VERSION = 1


class PipelineError(RuntimeError):
    pass


class VersionError(PipelineError):
    pass


class CorruptBundle(PipelineError):
    pass


@dataclass
class FitConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    max_modes: int = 5
    epsilon: float = 0.05
    seed: int = 0


@dataclass
class FittedTableModel:
    table: str
    codec: TableCodec
    generator: FittedGenerator | None
    degree: DegreeRegressor | None
    match_stages: tuple[MatchPlan, ...]
    row_count: int

    @property
    def has_degree_model(self) -> bool:
        return self.degree is not None or bool(self.match_stages)


@dataclass
class ModelBundle:
    schema: SchemaGraph
    order: TableOrder
    models: dict[str, FittedTableModel]
    epsilon: float
    train: TrainConfig
    version: int = FORMAT_VERSION

    def codecs(self) -> dict[str, TableCodec]:
        return {name: m.codec for name, m in self.models.items()}


def _derive(seed: int, *keys: int) -> int:
    entropy = [int(seed) & 0xFFFFFFFF] + [int(k) & 0xFFFFFFFF for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


def _fit_match_chain(db, builder, table: str, k_factor: float = 1.5):
    """Chain of two-constraint match plans covering all of the table's
    foreign keys; intermediate stages model the distinct key-prefix sets."""
    schema = db.schema
    fks = schema.fks_of(table)
    ctxs = [builder.fk_context(fk, table).matrix for fk in fks]
    rows = fk_row_indices(db, table)
    f = len(fks)
    stages: list[MatchPlan] = []
    prefix_ctx = ctxs[0]
    prefix_of_child = rows[:, 0]
    for s in range(1, f):
        final = s == f - 1
        if final:
            left_rows, right_rows = prefix_of_child, rows[:, s]
        else:
            distinct = sorted({(int(a), int(b)) for a, b in zip(prefix_of_child, rows[:, s])})
            left_rows = np.asarray([a for a, _ in distinct], dtype=np.int64)
            right_rows = np.asarray([b for _, b in distinct], dtype=np.int64)
        plan = fit_match_plan(prefix_ctx, ctxs[s], left_rows, right_rows, k_factor)
        stages.append(plan)
        if not final:
            prefix_ctx = np.hstack([prefix_ctx[left_rows], ctxs[s][right_rows]])
            prefix_id = {(int(a), int(b)): i for i, (a, b) in enumerate(zip(left_rows, right_rows))}
            prefix_of_child = np.asarray(
                [prefix_id[(int(a), int(b))] for a, b in zip(prefix_of_child, rows[:, s])],
                dtype=np.int64,
            )
    return tuple(stages)


def fit_database(db: Database, order: TableOrder, config: FitConfig) -> ModelBundle:
    """Fit codecs, degree models and generators for every table in order."""
    schema = db.schema
    validate_order(schema, order)
    codecs: dict[str, TableCodec] = {}
    for spec in schema.tables:
        codecs[spec.name] = fit_codec(
            db.table(spec.name),
            spec,
            schema,
            max_modes=config.max_modes,
            seed=_derive(config.seed, 101, schema.table_index(spec.name)),
        )
    builder = VariantBuilder(db, codecs, order)
    models: dict[str, FittedTableModel] = {}
    for pos, ti in enumerate(order.sequence):
        table = schema.tables[ti].name
        try:
            models[table] = _fit_table(db, builder, table, pos, config, codecs)
        except Exception as exc:
            raise PipelineError(f"fitting table {table!r} failed: {exc}") from exc
        builder._ext_cache.pop(table, None)  # release per-table context memory
    return ModelBundle(schema, order, models, config.epsilon, config.train)


def _fit_table(db, builder, table, pos, config, codecs) -> FittedTableModel:
    schema = db.schema
    fks = schema.fks_of(table)
    ext = builder.extended(table)
    degree = None
    stages: tuple[MatchPlan, ...] = ()
    if len(fks) == 1:
        pc = builder.potential_context(table)
        y = compute_degrees(pc, db.table(table), fks)
        degree = fit_degree_regressor(pc.encoded.matrix, y)
    elif len(fks) >= 2:
        stages = _fit_match_chain(db, builder, table)
    generator = None
    if ext.unknown_matrix.shape[1] > 0:
        train = TrainConfig(**{**asdict(config.train), "seed": _derive(config.seed, 202, pos)})
        generator, _ = fit_generator(ext, train)
    return FittedTableModel(
        table=table,
        codec=codecs[table],
        generator=generator,
        degree=degree,
        match_stages=stages,
        row_count=db.table(table).row_count,
    )


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def _mint_key_column(kind: str, n: int) -> Column:
    ids = np.arange(1, n + 1)
    if kind == "numerical":
        return Column("numerical", ids.astype(np.float64), np.zeros(n, dtype=bool))
    return Column(
        "categorical", np.asarray([str(i) for i in ids], dtype=object), np.zeros(n, dtype=bool)
    )


def _generate_links(bundle, builder, synth, table, n_target, seed):
    """Per-child-row foreign-key values and the known context rows."""
    schema = bundle.schema
    fks = schema.fks_of(table)
    model = bundle.models[table]
    parent_keys = [
        key_tuples(synth.table(fk.parent_table), fk.parent_columns) for fk in fks
    ]
    if len(fks) == 1:
        pc = builder.potential_context(table)
        raw = predict_raw_degrees(model.degree, pc.encoded.matrix, _derive(seed, 1))
        deg = round_degrees(raw, n_target, bundle.epsilon, _derive(seed, 2))
        known = np.repeat(pc.encoded.matrix, deg, axis=0)
        members = np.repeat(pc.parent_rows[:, 0], deg)
        links = [[parent_keys[0][m] for m in members]]
        return known, links
    # two or more constraints: walk the fitted stage chain
    ctxs = [builder.fk_context(fk, table).matrix for fk in fks]
    prefix_ctx = ctxs[0]
    prefix_members = [(a,) for a in range(ctxs[0].shape[0])]
    f = len(fks)
    emitted = None
    for s, plan in enumerate(bundle.models[table].match_stages, start=1):
        final = s == f - 1
        scale = n_target / max(model.row_count, 1)
        target = n_target if final else max(1, int(round(scale * plan.child_total)))
        pairs = generate_pairs(
            plan, prefix_ctx, ctxs[s], target, bundle.epsilon, _derive(seed, 10 + s)
        )
        if final:
            emitted = pairs
        else:
            if not pairs:
                emitted = []
                break
            prefix_ctx = np.vstack(
                [np.hstack([prefix_ctx[a], ctxs[s][b]]) for a, b, _ in pairs]
            )
            prefix_members = [prefix_members[a] + (b,) for a, b, _ in pairs]
    emitted = emitted or []
    known_rows, member_rows = [], []
    for a, b, deg in emitted:
        if deg <= 0:
            continue
        row = np.hstack([prefix_ctx[a], ctxs[f - 1][b]])
        for _ in range(deg):
            known_rows.append(row)
            member_rows.append(prefix_members[a] + (b,))
    known = (
        np.vstack(known_rows)
        if known_rows
        else np.zeros((0, prefix_ctx.shape[1] + ctxs[f - 1].shape[1]))
    )
    links = [
        [parent_keys[j][m[j]] for m in member_rows] for j in range(f)
    ]
    return known, links


def generate_database(bundle: ModelBundle, scale: float = 1.0, seed: int = 0) -> Database:
    """Emit a synthetic database with the bundle's schema.

    Tables are produced in the fitted order; each child's foreign keys point
    at freshly minted parent surrogates, so integrity holds by construction.
    """
    if scale <= 0:
        raise PipelineError("scale must be positive")
    schema = bundle.schema
    synth = Database({}, schema)
    builder = VariantBuilder(synth, bundle.codecs(), bundle.order)
    for pos, ti in enumerate(bundle.order.sequence):
        spec = schema.tables[ti]
        table = spec.name
        model = bundle.models[table]
        fks = schema.fks_of(table)
        tseed = _derive(seed, 303, pos)
        n_target = int(round(scale * model.row_count))
        if fks:
            known, links = _generate_links(bundle, builder, synth, table, n_target, tseed)
            n_rows = known.shape[0]
        else:
            n_rows = n_target
            known = np.zeros((n_rows, 0))
            links = []
        decoded = None
        if model.generator is not None:
            unknown = model.generator.generate(known, _derive(tseed, 7))
            decoded = model.codec.decode(unknown)
        columns: dict[str, Column] = {}
        fk_col_values: dict[str, list] = {}
        for j, fk in enumerate(fks):
            for ci, cname in enumerate(fk.child_columns):
                fk_col_values[cname] = [link[ci] for link in links[j]]
        for cspec in spec.columns:
            if cspec.name in fk_col_values:
                vals = fk_col_values[cspec.name]
                if cspec.kind == "numerical":
                    columns[cspec.name] = Column(
                        "numerical",
                        np.asarray([float(v) for v in vals], dtype=np.float64),
                        np.zeros(n_rows, dtype=bool),
                    )
                else:
                    columns[cspec.name] = Column(
                        "categorical",
                        np.asarray([str(v) for v in vals], dtype=object),
                        np.zeros(n_rows, dtype=bool),
                    )
            elif cspec.name in model.codec.key_columns:
                columns[cspec.name] = _mint_key_column(cspec.kind, n_rows)
            else:
                columns[cspec.name] = decoded.column(cspec.name)
        synth.tables[table] = Table(columns)
    _assert_integrity(synth)
    return synth


def _assert_integrity(db: Database) -> None:
    from .data import check_referential_integrity

    report = check_referential_integrity(db)
    if report:
        raise PipelineError(f"generated database violates integrity: {report}")


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _codec_to_json(codec: TableCodec) -> dict:
    cols = {}
    for name, c in codec.codecs.items():
        if isinstance(c, CategoricalCodec):
            cols[name] = {"type": "categorical", "categories": list(c.categories)}
        else:
            cols[name] = {
                "type": "mode",
                "weights": c.weights.tolist(),
                "means": c.means.tolist(),
                "stds": c.stds.tolist(),
                "nullable": c.nullable,
                "integer_valued": c.integer_valued,
            }
    return {"table": codec.table, "columns": cols, "key_columns": list(codec.key_columns)}


def _codec_from_json(raw: dict) -> TableCodec:
    codecs = {}
    for name, c in raw["columns"].items():
        if c["type"] == "categorical":
            codecs[name] = CategoricalCodec(tuple(c["categories"]))
        else:
            codecs[name] = ModeCodec(
                np.asarray(c["weights"]),
                np.asarray(c["means"]),
                np.asarray(c["stds"]),
                nullable=c["nullable"],
                integer_valued=c["integer_valued"],
            )
    return TableCodec(raw["table"], codecs, tuple(raw["key_columns"]))


def _regressor_arrays(prefix: str, model: DegreeRegressor) -> dict:
    return {f"{prefix}.weights": model.weights, f"{prefix}.pool": model.residual_pool}


def _regressor_from(arrays: dict, prefix: str) -> DegreeRegressor:
    return DegreeRegressor(arrays[f"{prefix}.weights"], arrays[f"{prefix}.pool"])


def save_bundle(bundle: ModelBundle, path: str | Path) -> None:
    path = Path(path)
    (path / "models").mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": bundle.version,
        "schema": schema_to_dict(bundle.schema),
        "order": order_names(bundle.schema, bundle.order),
        "epsilon": bundle.epsilon,
        "train": asdict(bundle.train),
        "tables": {},
    }
    for name, model in bundle.models.items():
        entry = {
            "row_count": model.row_count,
            "codec": _codec_to_json(model.codec),
            "n_stages": len(model.match_stages),
            "has_degree": model.degree is not None,
            "generator": None,
        }
        arrays: dict[str, np.ndarray] = {}
        if model.degree is not None:
            arrays.update(_regressor_arrays("degree", model.degree))
        for s, plan in enumerate(model.match_stages):
            arrays.update(_regressor_arrays(f"match{s}.count", plan.count_model))
            arrays.update(_regressor_arrays(f"match{s}.degree", plan.degree_model))
            arrays[f"match{s}.mapper"] = plan.mapper
            arrays[f"match{s}.meta"] = np.asarray(
                [plan.total_pairs, plan.child_total, plan.k_factor, float(plan.degenerate)]
            )
        if model.generator is not None:
            g = model.generator
            entry["generator"] = {
                "backend": g.backend,
                "known_width": g.known_width,
                "unknown_width": g.unknown_width,
                "config": asdict(g.config),
            }
            for k, v in g.to_arrays().items():
                arrays[f"gen.{k}"] = v
        manifest["tables"][name] = entry
        np.savez(path / "models" / f"{name}.npz", **arrays)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")


def load_bundle(path: str | Path) -> ModelBundle:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CorruptBundle(f"no manifest at {path}") from None
    except json.JSONDecodeError as exc:
        raise CorruptBundle(f"manifest is not valid JSON: {exc}") from None
    version = manifest.get("format_version")
    if version is None:
        raise CorruptBundle("manifest has no format_version")
    if version > FORMAT_VERSION:
        raise VersionError(
            f"bundle format {version} is newer than supported {FORMAT_VERSION}"
        )
    try:
        schema = parse_schema(manifest["schema"])
        order = TableOrder(tuple(schema.table_index(n) for n in manifest["order"]))
        train = TrainConfig(**manifest["train"])
        models: dict[str, FittedTableModel] = {}
        for name, entry in manifest["tables"].items():
            with np.load(path / "models" / f"{name}.npz") as npz:
                arrays = {k: npz[k] for k in npz.files}
            codec = _codec_from_json(entry["codec"])
            degree = _regressor_from(arrays, "degree") if entry["has_degree"] else None
            stages = []
            for s in range(entry["n_stages"]):
                meta = arrays[f"match{s}.meta"]
                stages.append(
                    MatchPlan(
                        count_model=_regressor_from(arrays, f"match{s}.count"),
                        mapper=arrays[f"match{s}.mapper"],
                        degree_model=_regressor_from(arrays, f"match{s}.degree"),
                        total_pairs=int(meta[0]),
                        child_total=int(meta[1]),
                        k_factor=float(meta[2]),
                        degenerate=bool(meta[3]),
                    )
                )
            generator = None
            if entry["generator"] is not None:
                ginfo = entry["generator"]
                gen_arrays = {
                    k[len("gen.") :]: v for k, v in arrays.items() if k.startswith("gen.")
                }
                generator = FittedGenerator.from_arrays(
                    gen_arrays,
                    backend=ginfo["backend"],
                    known_width=int(ginfo["known_width"]),
                    unknown_width=int(ginfo["unknown_width"]),
                    config=TrainConfig(**ginfo["config"]),
                )
            models[name] = FittedTableModel(
                table=name,
                codec=codec,
                generator=generator,
                degree=degree,
                match_stages=tuple(stages),
                row_count=int(entry["row_count"]),
            )
    except (KeyError, ValueError, OSError, zipfile.BadZipFile) as exc:
        raise CorruptBundle(f"bundle at {path} is unreadable: {exc}") from exc
    return ModelBundle(schema, order, models, float(manifest["epsilon"]), train, version)
