from .checkpoint import load_checkpoint, save_checkpoint
from .layers import ChebGCNLayer, Linear, PerPointMLP, dropout
from .model import FULL, GCN_ONLY, GraphBatch, ModelConfig, SegmentationModel, global_template
from .optim import Adam, AdamState, NonFiniteGradientError, adam_step
from .tensor import Tensor, concat, no_grad, softmax_cross_entropy

__all__ = [
    "Adam", "AdamState", "ChebGCNLayer", "FULL", "GCN_ONLY", "GraphBatch", "Linear",
    "ModelConfig", "NonFiniteGradientError", "PerPointMLP", "SegmentationModel", "Tensor",
    "adam_step", "concat", "dropout", "global_template", "load_checkpoint", "no_grad",
    "save_checkpoint", "softmax_cross_entropy",
]
