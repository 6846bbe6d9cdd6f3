"""kNN graph encoding of a block and the propagation operators derived from it."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .core import Block, PointCloud, PropagationKind, PropagationMatrix, SparseAdjacency

AUTO_MEAN_EDGE = "auto_mean_edge"
BOUND2 = "bound2"
POWER_ITERATION = "power_iteration"


class DegenerateBlockError(ValueError):
    """A block cannot be turned into a usable graph."""


@dataclass(frozen=True)
class GraphConfig:
    k: int = 40
    kappa: float = 1.0
    sigma: Union[float, str] = AUTO_MEAN_EDGE
    symmetrization: str = "max"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not self.kappa > 0:
            raise ValueError(f"kappa must be > 0, got {self.kappa}")
        if isinstance(self.sigma, str):
            if self.sigma != AUTO_MEAN_EDGE:
                raise ValueError(f"unknown sigma policy {self.sigma!r}")
        elif not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.symmetrization not in ("max", "mean"):
            raise ValueError(f"symmetrization must be 'max' or 'mean', got {self.symmetrization!r}")


def euclidean(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Distances from ``q`` to each row, always evaluated as sqrt(dx*dx + dy*dy + dz*dz).

    Every distance in the package goes through here so that values agree bitwise
    with any other evaluation of the same expression.
    """
    d = points - q
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])


class SpatialIndex:
    """Exact nearest-neighbour queries over a fixed point set.

    A KD-tree proposes candidates; final ranking always uses :func:`euclidean`
    with ties broken by the lower point index.
    """

    def __init__(self, points):
        pts = np.asarray(points.xyz if isinstance(points, PointCloud) else points, dtype=np.float64)
        self.points = pts.reshape(-1, 3)
        self.n = len(self.points)
        self._tree = cKDTree(self.points) if self.n else None

    def _require_nonempty(self):
        if self.n == 0:
            raise DegenerateBlockError("spatial index is empty")

    def _rank(self, q, cand, exclude):
        cand = np.asarray(cand, dtype=np.int64)
        if exclude is not None:
            cand = cand[cand != exclude]
        d = euclidean(self.points[cand], q)
        order = np.lexsort((cand, d))
        return cand[order], d[order]

    def knn(self, query, k: int, exclude: int | None = None):
        """The ``k`` nearest points to one query as (indices, distances).

        ``exclude`` drops one index (the query itself when it is a member).
        """
        self._require_nonempty()
        q = np.asarray(query, dtype=np.float64)
        avail = self.n - (exclude is not None)
        k = min(k, avail)
        if k <= 0:
            return np.empty(0, np.int64), np.empty(0)
        extra = 4
        kq = min(k + extra + (exclude is not None), self.n)
        _, cand = self._tree.query(q, k=kq)
        cand = np.atleast_1d(cand)
        idx, dist = self._rank(q, cand, exclude)
        if kq < self.n:
            # the k-th distance must be strictly inside the candidate shell,
            # otherwise a tied point could be missing from the candidates
            far = euclidean(self.points[cand], q).max()
            if not dist[k - 1] < far * (1 - 1e-12):
                ball = self._tree.query_ball_point(q, r=np.nextafter(far, np.inf) * (1 + 1e-12))
                idx, dist = self._rank(q, ball, exclude)
        return idx[:k], dist[:k]

    def knn_all(self, k: int):
        """kNN of every indexed point, excluding itself: (n, k') index and distance arrays."""
        self._require_nonempty()
        k = min(k, self.n - 1)
        if k <= 0:
            return np.empty((self.n, 0), np.int64), np.empty((self.n, 0))
        kq = min(k + 1 + 4, self.n)
        _, cand = self._tree.query(self.points, k=kq)
        cand = cand.reshape(self.n, kq)
        dist = euclidean(self.points[cand], self.points[:, None, :])
        own = np.arange(self.n)[:, None]
        # push self to the back: it never counts as a neighbour
        dist_rank = np.where(cand == own, np.inf, dist)
        order = np.lexsort((cand, dist_rank), axis=1)
        cand = np.take_along_axis(cand, order, axis=1)
        dist_rank = np.take_along_axis(dist_rank, order, axis=1)
        out_idx = cand[:, :k].copy()
        out_d = dist_rank[:, :k].copy()
        if kq < self.n:
            shell = np.where(np.isinf(dist), -np.inf, dist).max(axis=1)
            unsafe = ~(out_d[:, k - 1] < shell * (1 - 1e-12))
            for i in np.flatnonzero(unsafe):
                out_idx[i], out_d[i] = self.knn(self.points[i], k, exclude=i)
        return out_idx, out_d

    def hybrid(self, query, k: int, radius: float):
        """Up to ``k`` nearest points with distance <= ``radius``."""
        self._require_nonempty()
        q = np.asarray(query, dtype=np.float64)
        cand = self._tree.query_ball_point(q, r=radius * (1 + 1e-9) + 1e-300)
        idx, dist = self._rank(q, cand, None)
        keep = dist <= radius
        return idx[keep][:k], dist[keep][:k]


def knn_neighbors(index: SpatialIndex, query, k: int, exclude: int | None = None):
    """List of (point_index, distance), ascending by distance then index.

    Passing an integer ``query`` means "the indexed point with that index", which is
    then excluded from its own result.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if isinstance(query, (int, np.integer)):
        index._require_nonempty()
        exclude = int(query)
        query = index.points[exclude]
    idx, dist = index.knn(query, k, exclude=exclude)
    return [(int(i), float(d)) for i, d in zip(idx, dist)]


def gaussian_weight(d, sigma: float):
    d = np.asarray(d, dtype=np.float64)
    return np.exp(-(d * d) / (2.0 * sigma * sigma))


def build_adjacency(block, cfg: GraphConfig = GraphConfig(), return_sigma: bool = False):
    """Gaussian-weighted, symmetrized kNN adjacency of a block.

    Accepts a :class:`Block`, a :class:`PointCloud` or an (n, 3) array.
    """
    if isinstance(block, Block):
        xyz = block.points.xyz
    elif isinstance(block, PointCloud):
        xyz = block.xyz
    else:
        xyz = np.asarray(block, dtype=np.float64).reshape(-1, 3)
    n = len(xyz)
    if n < 2:
        raise DegenerateBlockError(f"a graph needs at least 2 points, got {n}")

    idx, dist = SpatialIndex(xyz).knn_all(cfg.k)
    src = np.repeat(np.arange(n), idx.shape[1])
    dst = idx.ravel()
    d = dist.ravel()
    keep = d < cfg.kappa
    src, dst, d = src[keep], dst[keep], d[keep]

    if cfg.sigma == AUTO_MEAN_EDGE:
        if len(d) == 0:
            adj = SparseAdjacency(n, [], [], [])
            return (adj, float("nan")) if return_sigma else adj
        # fsum: exactly rounded, hence independent of point order
        sigma = math.fsum(d.tolist()) / len(d)
        if not sigma > 0:
            raise DegenerateBlockError("mean kNN edge length is 0 (coincident points); sigma undefined")
    else:
        sigma = float(cfg.sigma)

    w = gaussian_weight(d, sigma)
    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    key = lo * n + hi
    uniq, inv = np.unique(key, return_inverse=True)
    if cfg.symmetrization == "max":
        agg = np.zeros(len(uniq))
        np.maximum.at(agg, inv, w)
    else:
        # each unordered pair receives at most one weight per direction
        agg = np.zeros(len(uniq))
        np.add.at(agg, inv, w)
        agg = agg / 2.0
    rows, cols = uniq // n, uniq % n
    nz = agg > 0
    adj = SparseAdjacency(n, rows[nz], cols[nz], agg[nz])
    return (adj, sigma) if return_sigma else adj


def _sym_normalized(adj: SparseAdjacency, self_loops: bool) -> sp.csr_matrix:
    m = adj.to_csr()
    if self_loops:
        m = m + sp.identity(adj.n, format="csr")
    deg = np.asarray(m.sum(axis=1)).ravel()
    coo = m.tocoo()
    # w / sqrt(d_r d_c): commutative in (r, c), so the result is bitwise symmetric
    data = coo.data / np.sqrt(deg[coo.row] * deg[coo.col])
    return sp.csr_matrix((data, (coo.row, coo.col)), shape=m.shape)


def normalized_laplacian(adj: SparseAdjacency) -> PropagationMatrix:
    """I - D^-1/2 M D^-1/2; isolated nodes get a unit diagonal and nothing else."""
    a = _sym_normalized(adj, self_loops=False)
    lap = (sp.identity(adj.n, format="csr") - a).tocsr()
    lap.sort_indices()
    return PropagationMatrix(PropagationKind.NORMALIZED_LAPLACIAN, lap)


def power_iteration_lambda_max(matrix, rtol: float = 1e-6, max_iter: int = 10000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    n = matrix.shape[0]
    if n == 0:
        raise ValueError("empty matrix")
    # deterministic, non-degenerate start vector
    v = np.cos(np.arange(1, n + 1) * 1.6180339887) + 1.0 / np.sqrt(np.arange(1, n + 1))
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = matrix @ v
        new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        if abs(new - lam) <= rtol * abs(new):
            return new
        lam = new
    return lam


def rescale_laplacian(lap: PropagationMatrix, lambda_max=BOUND2) -> PropagationMatrix:
    """Map the Laplacian spectrum into [-1, 1]: 2 L / lambda_max - I."""
    if lap.kind is not PropagationKind.NORMALIZED_LAPLACIAN:
        raise ValueError(f"expected a normalized Laplacian, got {lap.kind.value}")
    if lambda_max == BOUND2:
        lam = 2.0
    elif lambda_max == POWER_ITERATION:
        lam = 1.01 * power_iteration_lambda_max(lap.matrix)
    else:
        lam = float(lambda_max)
    if not lam > 0:
        raise ValueError(f"lambda_max must be > 0, got {lam}")
    out = ((2.0 / lam) * lap.matrix - sp.identity(lap.n, format="csr")).tocsr()
    out.sort_indices()
    return PropagationMatrix(PropagationKind.RESCALED_LAPLACIAN, out)


def renormalized_adjacency(adj: SparseAdjacency) -> PropagationMatrix:
    """D^-1/2 (M + I) D^-1/2 with D the degree matrix of M + I."""
    a = _sym_normalized(adj, self_loops=True)
    a.sort_indices()
    return PropagationMatrix(PropagationKind.RENORMALIZED_ADJACENCY, a)


# -- export ----------------------------------------------------------------

def format_graph(adj: SparseAdjacency, k: int, kappa: float, sigma: float) -> str:
    lines = [f"{adj.n} {k} {kappa!r} {float(sigma):.17g}"]
    lines += [f"{r} {c} {w:.17g}" for r, c, w in zip(adj.rows.tolist(), adj.cols.tolist(), adj.weights.tolist())]
    return "\n".join(lines) + "\n"


def write_graph(path, adj: SparseAdjacency, k: int, kappa: float, sigma: float) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(format_graph(adj, k, kappa, sigma))


def read_graph(path):
    """Inverse of :func:`write_graph`: returns (adjacency, k, kappa, sigma)."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4:
            raise ValueError(f"{path}:1: expected header 'n k kappa sigma'")
        n, k = int(header[0]), int(header[1])
        kappa, sigma = float(header[2]), float(header[3])
        rows, cols, ws = [], [], []
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'row col weight'")
            rows.append(int(parts[0]))
            cols.append(int(parts[1]))
            ws.append(float(parts[2]))
    return SparseAdjacency(n, rows, cols, ws), k, kappa, sigma
