"""Recommendation over a unified user-item-attribute graph.

Directed relations (interactions, item attributes) are scored by translation
in a relation-specific projected space; undirected item-item co-occurrence is
scored as a distance on a relation hyperplane, which keeps the score symmetric.
"""

from .errors import (
    CatalogError,
    CheckpointError,
    ContractError,
    DataError,
    DegenerateNormalError,
    NumericalError,
    ParseError,
    UGRecError,
)
from .evaluation import EvalReport, ablation_study, cooccurrence_sweep, evaluate, rank_items
from .graph import (
    DataSplit,
    Directedness,
    EntityKind,
    RelationCatalog,
    RelationDef,
    Triplet,
    UnifiedGraph,
    Vocabulary,
    filter_min_interactions,
    leave_one_out_split,
    load_graph,
    load_split,
    parse_catalog,
    save_split,
)
from .model import (
    ModelConfig,
    ModelParams,
    UndirectedScorer,
    directed_distance,
    init_params,
    load_checkpoint,
    save_checkpoint,
    undirected_distance,
)
from .training import Ablation, TrainConfig, fit, fit_full

__version__ = "0.1.0"
