"""relgen: synthetic relational database generation.

Fits one conditional generative model per table along a topological order of
the foreign-key graph; each table is generated from the context of the
tables that can affect it, with degree models deciding how many child rows
every context row yields.
"""

from .data import Database, Table, load_database, write_database
from .gan import TrainConfig
from .metrics import evaluate_databases, load_rules
from .pipeline import (
    FitConfig,
    ModelBundle,
    fit_database,
    generate_database,
    load_bundle,
    save_bundle,
)
from .schema import (
    SchemaGraph,
    TableOrder,
    default_order,
    enumerate_topological_orders,
    load_schema,
    make_order,
    parse_schema,
)

__version__ = "0.1.0"

__all__ = [
    "Database",
    "FitConfig",
    "ModelBundle",
    "SchemaGraph",
    "Table",
    "TableOrder",
    "TrainConfig",
    "default_order",
    "enumerate_topological_orders",
    "evaluate_databases",
    "fit_database",
    "generate_database",
    "load_bundle",
    "load_database",
    "load_rules",
    "load_schema",
    "make_order",
    "parse_schema",
    "save_bundle",
    "write_database",
]
