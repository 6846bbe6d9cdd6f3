"""Sparse-to-dense label transfer by hybrid (k and radius bounded) neighbour search."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import PointCloud
from ..graph import SpatialIndex, euclidean


@dataclass(frozen=True)
class DensifyConfig:
    k: int = 20
    radius: float = 0.2

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not self.radius > 0:
            raise ValueError(f"radius must be > 0, got {self.radius}")


def vote(neighbor_labels: np.ndarray) -> int:
    """Majority label of neighbours given nearest-first; ties go to the nearest tied class."""
    counts = np.bincount(neighbor_labels)
    tied = np.flatnonzero(counts == counts.max())
    if len(tied) == 1:
        return int(tied[0])
    for lab in neighbor_labels:
        if lab in tied:
            return int(lab)
    raise AssertionError("unreachable")


def _hybrid_candidates(index: SpatialIndex, queries: np.ndarray, k: int, radius: float):
    """Per query, the first <= k neighbours within ``radius`` (None where a slow path is needed)."""
    n = index.n
    kq = min(k + 4, n)
    _, cand = index._tree.query(queries, k=kq)
    cand = cand.reshape(len(queries), kq)
    dist = euclidean(index.points[cand], queries[:, None, :])
    order = np.lexsort((cand, dist), axis=1)
    cand = np.take_along_axis(cand, order, axis=1)
    dist = np.take_along_axis(dist, order, axis=1)
    shell = dist[:, -1] * (1 - 1e-12)
    out = []
    for i in range(len(queries)):
        within = dist[i] <= radius
        idx = cand[i][within][:k]
        if kq == n or radius < shell[i] or (len(idx) == k and dist[i][within][k - 1] < shell[i]):
            out.append(idx)
        else:
            out.append(None)
    return out


def densify_labels(sparse: PointCloud, dense, cfg: DensifyConfig = DensifyConfig()) -> np.ndarray:
    """Label every dense point from the labelled sparse cloud.

    Vote among at most ``cfg.k`` sparse neighbours within ``cfg.radius``
    (distance <= radius); with none in range, copy the global nearest neighbour.
    """
    if len(sparse) == 0:
        raise ValueError("sparse cloud is empty")
    if sparse.labels is None or np.any(sparse.labels < 0):
        raise ValueError("sparse cloud must be fully labelled")
    queries = dense.xyz if isinstance(dense, PointCloud) else np.asarray(dense, dtype=np.float64).reshape(-1, 3)
    out = np.empty(len(queries), dtype=np.int64)
    if len(queries) == 0:
        return out
    index = SpatialIndex(sparse.xyz)
    labels = sparse.labels
    for i, idx in enumerate(_hybrid_candidates(index, queries, cfg.k, cfg.radius)):
        if idx is None:
            idx, _ = index.hybrid(queries[i], cfg.k, cfg.radius)
        if len(idx) == 0:
            idx, _ = index.knn(queries[i], 1)
        out[i] = vote(labels[idx])
    return out
