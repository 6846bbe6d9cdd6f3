"""Confusion-matrix segmentation metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import IGNORE_LABEL


@dataclass
class MetricsReport:
    """Per-class values are NaN for classes they are undefined on; means skip NaN entries."""

    iou: np.ndarray
    mean_iou: float
    accuracy: np.ndarray
    mean_accuracy: float
    overall_accuracy: float
    confusion: np.ndarray

    def to_dict(self) -> dict:
        def clean(a):
            return [None if np.isnan(v) else float(v) for v in a]

        return {
            "iou": clean(self.iou), "mean_iou": self.mean_iou,
            "accuracy": clean(self.accuracy), "mean_accuracy": self.mean_accuracy,
            "overall_accuracy": self.overall_accuracy,
            "confusion": self.confusion.tolist(),
        }


def confusion_matrix(pred, labels, num_classes: int) -> np.ndarray:
    """Counts with rows = ground truth, columns = prediction; IGNORE_LABEL rows skipped."""
    pred = np.asarray(pred, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if pred.shape != labels.shape:
        raise ValueError(f"{len(pred)} predictions for {len(labels)} labels")
    keep = labels != IGNORE_LABEL
    pred, labels = pred[keep], labels[keep]
    if np.any((labels < 0) | (labels >= num_classes)) or np.any((pred < 0) | (pred >= num_classes)):
        raise ValueError(f"class index outside [0, {num_classes})")
    flat = np.bincount(labels * num_classes + pred, minlength=num_classes * num_classes)
    return flat.reshape(num_classes, num_classes)


def metrics_from_confusion(cm) -> MetricsReport:
    cm = np.asarray(cm, dtype=np.int64)
    total = int(cm.sum())
    if total == 0:
        raise ValueError("confusion matrix is empty")
    tp = np.diag(cm).astype(np.float64)
    gt = cm.sum(axis=1).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    union = gt + predicted - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, tp / union, np.nan)
        acc = np.where(gt > 0, tp / gt, np.nan)
    return MetricsReport(
        iou=iou,
        mean_iou=float(np.nanmean(iou)),
        accuracy=acc,
        mean_accuracy=float(np.nanmean(acc)),
        overall_accuracy=float(tp.sum() / total),
        confusion=cm,
    )
