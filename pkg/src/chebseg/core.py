"""Domain types shared across the package: point clouds, blocks, sparse graphs, label sets."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
import scipy.sparse as sp

IGNORE_LABEL = -1


class Point3(NamedTuple):
    x: float
    y: float
    z: float


class LabelSet:
    """Ordered, unique class names."""

    def __init__(self, names: Sequence[str]):
        names = [str(n) for n in names]
        if any(not n for n in names):
            raise ValueError("class names must be non-empty")
        if len(set(names)) != len(names):
            raise ValueError(f"class names must be unique: {names}")
        self.names = tuple(names)

    @property
    def num_classes(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def __eq__(self, other):
        return isinstance(other, LabelSet) and self.names == other.names

    def __hash__(self):
        return hash(self.names)

    def __repr__(self):
        return f"LabelSet({list(self.names)!r})"


SYNTHETIC_LABELS = LabelSet(["ground", "building", "vegetation", "clutter"])
SEMANTIC3D_LABELS = LabelSet(
    ["man-made terrain", "natural terrain", "high vegetation", "low vegetation",
     "buildings", "hard scape", "scanning artefacts", "cars"]
)
S3DIS_LABELS = LabelSet(
    ["ceiling", "floor", "wall", "beam", "column", "window", "door",
     "table", "chair", "sofa", "bookcase", "board", "clutter"]
)


@dataclass(frozen=True)
class PointCloud:
    """N points as an (N, 3) float64 array plus optional attributes and labels.

    Labels equal to ``IGNORE_LABEL`` mark unlabeled points; they stay in the
    cloud (and in graphs) but are skipped by the loss and the metrics.
    """

    xyz: np.ndarray
    attributes: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "xyz", xyz)
        if self.attributes is not None:
            attrs = np.asarray(self.attributes, dtype=np.float64)
            if attrs.ndim == 1:
                attrs = attrs.reshape(len(xyz), -1) if len(xyz) else attrs.reshape(0, 0)
            object.__setattr__(self, "attributes", attrs)
        if self.labels is not None:
            object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64).ravel())

    def __len__(self) -> int:
        return len(self.xyz)

    def point(self, i: int) -> Point3:
        return Point3(*map(float, self.xyz[i]))

    def subset(self, indices) -> "PointCloud":
        indices = np.asarray(indices, dtype=np.int64)
        return PointCloud(
            self.xyz[indices],
            None if self.attributes is None else self.attributes[indices],
            None if self.labels is None else self.labels[indices],
        )


@dataclass(frozen=True)
class Block:
    """A fixed-size sample of one grid cell, already centered."""

    origin: tuple[int, int]
    points: PointCloud
    source_indices: np.ndarray

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class Violation:
    kind: str
    index: int
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    def __bool__(self) -> bool:
        # truthy when there is something to report
        return bool(self.violations)

    def __len__(self) -> int:
        return len(self.violations)

    def count(self, kind: str) -> int:
        return sum(v.kind == kind for v in self.violations)


def validate_cloud(cloud: PointCloud, labels: Optional[LabelSet] = None) -> ValidationReport:
    """Collect every invariant violation of ``cloud``; an empty report means valid."""
    report = ValidationReport()
    n = len(cloud)
    bad_rows = np.flatnonzero(~np.isfinite(cloud.xyz).all(axis=1))
    for i in bad_rows:
        report.violations.append(Violation("non_finite", int(i), f"coordinates {cloud.xyz[i].tolist()}"))
    if cloud.attributes is not None and len(cloud.attributes) != n:
        report.violations.append(
            Violation("length_mismatch", -1, f"{len(cloud.attributes)} attribute rows for {n} points")
        )
    if cloud.labels is not None:
        if len(cloud.labels) != n:
            report.violations.append(
                Violation("length_mismatch", -1, f"{len(cloud.labels)} labels for {n} points")
            )
        if labels is not None:
            lab = cloud.labels
            out = np.flatnonzero((lab != IGNORE_LABEL) & ((lab < 0) | (lab >= labels.num_classes)))
            for i in out:
                report.violations.append(
                    Violation("label_out_of_range", int(i),
                              f"label {int(lab[i])} not in [0, {labels.num_classes})")
                )
    return report


class SparseAdjacency:
    """Symmetric weighted graph stored once per unordered pair (row < col).

    ``to_csr`` expands to the full symmetric matrix; the expansion is cached.
    """

    def __init__(self, n: int, rows, cols, weights):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        weights = np.asarray(weights, dtype=np.float64).ravel()
        if not (len(rows) == len(cols) == len(weights)):
            raise ValueError("rows, cols and weights must have equal length")
        if np.any(rows >= cols):
            raise ValueError("entries must satisfy row < col (upper triangle, no diagonal)")
        if len(rows) and (rows.min() < 0 or cols.max() >= n):
            raise ValueError(f"entry index out of range for n={n}")
        if np.any(~(weights > 0) | (weights > 1)):
            raise ValueError("weights must lie in (0, 1]")
        order = np.lexsort((cols, rows))
        rows, cols, weights = rows[order], cols[order], weights[order]
        if len(rows) > 1:
            dup = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
            if dup.any():
                raise ValueError("duplicate (row, col) entries")
        self.n = int(n)
        self.rows, self.cols, self.weights = rows, cols, weights
        for a in (self.rows, self.cols, self.weights):
            a.flags.writeable = False
        self._csr = None

    @property
    def nnz(self) -> int:
        """Number of stored (unordered) edges."""
        return len(self.weights)

    def to_csr(self) -> sp.csr_matrix:
        if self._csr is None:
            r = np.concatenate([self.rows, self.cols])
            c = np.concatenate([self.cols, self.rows])
            w = np.concatenate([self.weights, self.weights])
            self._csr = sp.csr_matrix((w, (r, c)), shape=(self.n, self.n))
            self._csr.sort_indices()
        return self._csr

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        out[self.rows, self.cols] = self.weights
        out[self.cols, self.rows] = self.weights
        return out

    def weight(self, x: int, y: int) -> float:
        if x == y:
            return 0.0
        a, b = (x, y) if x < y else (y, x)
        lo = np.searchsorted(self.rows, a, side="left")
        hi = np.searchsorted(self.rows, a, side="right")
        j = lo + np.searchsorted(self.cols[lo:hi], b)
        if j < hi and self.cols[j] == b:
            return float(self.weights[j])
        return 0.0

    def degrees(self) -> np.ndarray:
        d = np.zeros(self.n)
        np.add.at(d, self.rows, self.weights)
        np.add.at(d, self.cols, self.weights)
        return d

    @classmethod
    def from_dense(cls, m) -> "SparseAdjacency":
        m = np.asarray(m, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("adjacency must be square")
        if not np.array_equal(m, m.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(m) != 0):
            raise ValueError("adjacency must have a zero diagonal")
        r, c = np.nonzero(np.triu(m, 1))
        return cls(m.shape[0], r, c, m[r, c])

    def __eq__(self, other):
        return (
            isinstance(other, SparseAdjacency)
            and self.n == other.n
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.weights, other.weights)
        )

    def __repr__(self):
        return f"SparseAdjacency(n={self.n}, edges={self.nnz})"


class PropagationKind(enum.Enum):
    NORMALIZED_LAPLACIAN = "normalized_laplacian"
    RESCALED_LAPLACIAN = "rescaled_laplacian"
    RENORMALIZED_ADJACENCY = "renormalized_adjacency"


@dataclass(frozen=True)
class PropagationMatrix:
    """A symmetric sparse graph operator (diagonal included) of a given kind."""

    kind: PropagationKind
    matrix: sp.csr_matrix

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def astype(self, dtype) -> sp.csr_matrix:
        return self.matrix.astype(dtype)

    def __matmul__(self, x):
        return self.matrix @ x
