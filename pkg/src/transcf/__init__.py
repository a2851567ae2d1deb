"""Translational collaborative metric learning for implicit feedback."""
from .dataset import (
    Interaction,
    InteractionDataset,
    SplitDataset,
    TrainTriple,
    leave_one_out_split,
    load_interactions,
    load_split,
    sample_triples,
)
from .embed import EmbeddingTable, HyperParams, ModelState, Variant, project_unit_ball
from .evaluation import EvalConfig, EvalReport, evaluate
from .model import gradients, objective, score, translation
from .trainer import TrainConfig, TrainLog, grid_search, train

__version__ = "0.1.0"
