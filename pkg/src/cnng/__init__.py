"""Collaborative neural network groups built by reflecting on a network's errors."""
from .cluster import KMeansModel, kmeans_assign, kmeans_fit
from .data import Dataset, load_idx_pair, split, subsample
from .nn import (
    Activation,
    FeedforwardNetwork,
    LayerSpec,
    TrainConfig,
    forward,
    init_network,
    loss_and_gradient,
    mlp_specs,
    predict,
    train,
)
from .persist import load_model, save_model
from .reflect import (
    CnngModel,
    EvaluationReport,
    KMeansConfig,
    ReflectionConfig,
    cnng_predict,
    collect_errors,
    evaluate,
    reflect,
)
from .router import DecisionTree, TreeParams, tree_fit, tree_predict

__version__ = "0.1.0"
