from .blocks import PartitionError, TrainConfig, grid_cells, partition_blocks, sample_cell
from .metrics import MetricsReport, confusion_matrix, metrics_from_confusion
from .training import (PreparedBlock, Prediction, TrainingHalted, TrainResult, check_graph_cache,
                       evaluate, format_sweep, infer_blocks, load_model, majority_votes, predict,
                       prepare_block, prepare_dataset, sweep_cheb_order, train)

__all__ = [
    "MetricsReport", "PartitionError", "Prediction", "PreparedBlock", "TrainConfig", "TrainResult",
    "TrainingHalted", "check_graph_cache", "confusion_matrix", "evaluate", "format_sweep", "grid_cells",
    "infer_blocks", "load_model", "majority_votes", "metrics_from_confusion", "partition_blocks",
    "predict", "prepare_block", "prepare_dataset", "sample_cell", "sweep_cheb_order", "train",
]
