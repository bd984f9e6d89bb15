"""Bilinear knowledge-graph embedding models.

RESCAL, DISTMULT, HolE, ComplEx and TransE with margin-based training,
filtered ranking evaluation, relation-level stacking ensembles, and
executable model transformations.
"""

from .kb import KnowledgeBase, RelationCategory, Triple, load_kb, load_kb_dir
from .models import (ComplexParams, DistmultParams, HolEParams, ModelKind, RescalParams,
                     TransEParams, init_params, load_model, save_model)
from .ranking import dense_rank, dense_rank_tensor, is_consistent, round_tau
from .training import TrainConfig, train

__all__ = [
    "ComplexParams", "DistmultParams", "HolEParams", "KnowledgeBase", "ModelKind",
    "RelationCategory", "RescalParams", "TrainConfig", "TransEParams", "Triple",
    "dense_rank", "dense_rank_tensor", "init_params", "is_consistent", "load_kb",
    "load_kb_dir", "load_model", "round_tau", "save_model", "train",
]
