"""sheafkg: transductive knowledge-graph embeddings lifted into cellular
sheaves, with harmonic extension to unseen entities and Schur-complement
answering of conjunctive queries."""

from . import evaluation, harmonic, kg, losses, models, queries, sheaf, training
from .errors import (DataError, NumericError, SheafKGError, UsageError)
from .kg import KnowledgeGraph, SplitBundle, build_split_bundle, generate_toy_kg, load_triples
from .models import ModelParams, init_params, score_triple, to_sheaf_form
from .sheaf import RelationRepresentation, SheafSystem, build_system
from .harmonic import ExtensionProblem, extend_closed_form, extend_iterative, init_unknown
from .queries import QueryGraph, QueryInstance, answer_query, build_query, schur_reduce
from .evaluation import RankRecord, evaluate_kgc, metrics, rank_tail
from .training import TrainConfig, adam_step, sample_negatives, train

__version__ = "0.1.0"

__all__ = [
    "DataError", "NumericError", "SheafKGError", "UsageError",
    "KnowledgeGraph", "SplitBundle", "build_split_bundle", "generate_toy_kg",
    "load_triples", "ModelParams", "init_params", "score_triple", "to_sheaf_form",
    "RelationRepresentation", "SheafSystem", "build_system",
    "ExtensionProblem", "extend_closed_form", "extend_iterative", "init_unknown",
    "QueryGraph", "QueryInstance", "answer_query", "build_query", "schur_reduce",
    "RankRecord", "evaluate_kgc", "metrics", "rank_tail",
    "TrainConfig", "adam_step", "sample_negatives", "train",
    "evaluation", "harmonic", "kg", "losses", "models", "queries", "sheaf", "training",
]
