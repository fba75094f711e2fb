"""Sequential recommendation with channel-aware global and local disentanglement."""

from .corpus import (
    InteractionCorpus,
    NegativeSample,
    PaddedWindow,
    SplitView,
    leave_one_out_split,
    load_interactions,
    make_windows,
    sample_negatives,
)
from .estimator import EGDGNNRecommender, PopularityRecommender
from .evaluation import evaluate, ndcg_at_k, pop_baseline, recall_at_k
from .graph import GlobalGraph, build_global_graph
from .model import EGDGNNNet, HyperParams, init_params
from .training import TrainConfig, check_model_gradients, fit_sequences, train

__all__ = [
    "EGDGNNNet",
    "EGDGNNRecommender",
    "GlobalGraph",
    "HyperParams",
    "InteractionCorpus",
    "NegativeSample",
    "PaddedWindow",
    "PopularityRecommender",
    "SplitView",
    "TrainConfig",
    "build_global_graph",
    "check_model_gradients",
    "evaluate",
    "fit_sequences",
    "init_params",
    "leave_one_out_split",
    "load_interactions",
    "make_windows",
    "ndcg_at_k",
    "pop_baseline",
    "recall_at_k",
    "sample_negatives",
    "train",
]
