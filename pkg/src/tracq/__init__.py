"""Scene graph generation with conditional-query transformer decoding.

Desk-scale library: a float64 autodiff tensor engine, attention stacks,
Hungarian set-prediction losses, the conditional-query model plus baselines,
synthetic scene data, and recall metrics.
"""

from .autodiff import Tensor, no_grad
from .attention import AttentionConfig, AttentionStack, MultiHeadAttention, attention
from .boxes import Box, giou, iou, l_box, l_box_value
from .data import (Dataset, SceneGraph, SceneEntity, WorldConfig, generate_dataset,
                   generate_scene, load_dataset, save_dataset)
from .losses import LossReport, loss_detr, loss_entity_refine, loss_predicate
from .matching import MatchAssignment, cost_entity, cost_predicate, cost_refinement, hungarian
from .metrics import MetricsReport, evaluate_corpus, match_triplet, recall_at_k
from .models import TracqConfig, TracqModel, TripletPrediction
from .baselines import DDModel, DDTRModel, EntityFirstModel, SDModel, ddtr_assemble
from .nn import AdamW, Module, Parameter, count_parameters, load_checkpoint, save_checkpoint
from .registry import MODEL_SELECTORS, build_model, load_model, save_model
from .train import TrainConfig, train_model

__version__ = "0.1.0"

__all__ = [
    "AdamW", "AttentionConfig", "AttentionStack", "Box", "DDModel", "DDTRModel",
    "Dataset", "EntityFirstModel", "LossReport", "MODEL_SELECTORS", "MatchAssignment",
    "MetricsReport", "Module", "MultiHeadAttention", "Parameter", "SDModel", "SceneEntity",
    "SceneGraph", "Tensor", "TracqConfig", "TracqModel", "TrainConfig", "TripletPrediction",
    "WorldConfig", "attention", "build_model", "cost_entity", "cost_predicate",
    "cost_refinement", "count_parameters", "ddtr_assemble", "evaluate_corpus",
    "generate_dataset", "generate_scene", "giou", "hungarian", "iou", "l_box", "l_box_value",
    "load_checkpoint", "load_dataset", "load_model", "loss_detr", "loss_entity_refine",
    "loss_predicate", "match_triplet", "no_grad", "recall_at_k", "save_checkpoint",
    "save_dataset", "save_model", "train_model",
]
