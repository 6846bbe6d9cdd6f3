"""The segmentation network: per-point MLP features refined by Chebyshev graph convolutions."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from ..core import PropagationMatrix
from .layers import ChebGCNLayer, Module, PerPointMLP, chebyshev_ones, dropout
from .tensor import Tensor, segment_max

FULL = "full"
GCN_ONLY = "gcn_only"


@dataclass
class ModelConfig:
    variant: str = FULL
    num_classes: int = 4
    in_dim: int = 3
    mlp_widths: tuple = (64, 64, 128, 1024)
    gcn_hidden: tuple = (512, 256)
    order: int = 3
    dropout_cnn: float = 0.4
    dropout_gcn: float = 0.8
    global_template: bool = True
    dtype: str = "float64"
    class_names: tuple = field(default=())

    def __post_init__(self):
        self.variant = self.variant.replace("-", "_")
        if self.variant not in (FULL, GCN_ONLY):
            raise ValueError(f"variant must be 'full' or 'gcn_only', got {self.variant!r}")
        self.mlp_widths = tuple(int(w) for w in self.mlp_widths)
        self.gcn_hidden = tuple(int(w) for w in self.gcn_hidden)
        self.class_names = tuple(self.class_names)
        if self.class_names and len(self.class_names) != self.num_classes:
            raise ValueError(
                f"{len(self.class_names)} class names given for {self.num_classes} classes"
            )
        if self.num_classes < 1 or self.order < 0:
            raise ValueError("num_classes must be >= 1 and order >= 0")
        for rate in (self.dropout_cnn, self.dropout_gcn):
            if not 0 <= rate < 1:
                raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def uses_template(self) -> bool:
        return self.variant == FULL and self.global_template

    @property
    def gcn_input_dim(self) -> int:
        if self.variant == GCN_ONLY:
            return self.in_dim
        return self.mlp_widths[-1] * (2 if self.global_template else 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mlp_widths"] = list(self.mlp_widths)
        d["gcn_hidden"] = list(self.gcn_hidden)
        d["class_names"] = list(self.class_names)
        return d


class GraphBatch:
    """B blocks of S points each, as one block-diagonal rescaled-Laplacian operator."""

    def __init__(self, operators, dtype=np.float64):
        mats = [op.matrix if isinstance(op, PropagationMatrix) else sp.csr_matrix(op) for op in operators]
        sizes = {m.shape[0] for m in mats}
        if len(sizes) != 1:
            raise ValueError(f"all blocks in a batch must have the same size, got {sorted(sizes)}")
        self.n_blocks = len(mats)
        self.block_size = sizes.pop()
        op = mats[0] if len(mats) == 1 else sp.block_diag(mats, format="csr")
        self.operator = op.astype(dtype).tocsr()
        self._ones = {}

    @property
    def n_points(self) -> int:
        return self.n_blocks * self.block_size

    def ones_basis(self, order: int) -> np.ndarray:
        if order not in self._ones:
            self._ones[order] = chebyshev_ones(self.operator, order, self.n_points, self.operator.dtype)
        return self._ones[order]


class SegmentationModel(Module):
    """Full variant: MLP -> (features, tiled max-pooled template) -> 3 Chebyshev GCN layers.
    GcnOnly variant: raw xyz -> 3 Chebyshev GCN layers.
    """

    _children = ("mlp", "gcn")

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.dtype = np.dtype(cfg.dtype)
        rng = np.random.default_rng(seed)
        if cfg.variant == "full":
            self.mlp = PerPointMLP(cfg.in_dim, cfg.mlp_widths, rng, self.dtype)
            gcn_in = cfg.mlp_widths[-1]
            template_dim = cfg.mlp_widths[-1] if cfg.global_template else 0
        else:
            self.mlp = []
            gcn_in, template_dim = cfg.in_dim, 0
        dims = [gcn_in, *cfg.gcn_hidden, cfg.num_classes]
        self.gcn = []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            last = i == len(dims) - 2
            self.gcn.append(ChebGCNLayer(
                a, b, cfg.order, rng,
                template_dim=template_dim if i == 0 else 0,
                activation="identity" if last else "relu",
                dtype=self.dtype,
            ))

    def __call__(self, xyz, graph: GraphBatch, train: bool = False, rng=None) -> Tensor:
        x = xyz if isinstance(xyz, Tensor) else Tensor(np.asarray(xyz, dtype=self.dtype))
        if x.shape[0] != graph.n_points:
            raise ValueError(f"{x.shape[0]} points for a graph batch of {graph.n_points}")
        cfg = self.cfg
        template = None
        if cfg.variant == FULL:
            x = self.mlp(x, train=train, rng=rng, rate=cfg.dropout_cnn)
            if cfg.global_template:
                template = segment_max(x, graph.n_blocks)
        op = graph.operator
        last = len(self.gcn) - 1
        for i, layer in enumerate(self.gcn):
            if i == 0 and template is not None:
                x = layer(x, op, template=template, ones_basis=graph.ones_basis(cfg.order))
            else:
                x = layer(x, op)
            if i < last:
                x = dropout(x, cfg.dropout_gcn, train, rng)
        return x

    def state_dict(self) -> dict:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict):
        params = dict(self.named_parameters())
        if set(params) != set(state):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise ValueError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(self.dtype, copy=True)


def global_template(features) -> np.ndarray:
    """Column-wise max over points of an (n, F) feature matrix."""
    f = features.data if isinstance(features, Tensor) else np.asarray(features)
    if f.ndim != 2 or f.shape[0] == 0:
        raise ValueError("global_template needs a non-empty (n, F) matrix")
    return f.max(axis=0)
