"""Layers: shared per-point MLP, Chebyshev graph convolution, dropout."""

from __future__ import annotations

import numpy as np

from ..spectral import chebyshev_combine, chebyshev_terms
from .tensor import Tensor, add, concat, linear, mask_scale, matmul, mul, relu, repeat_rows, sparse_step


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float64):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


class Module:
    """Minimal parameter container; subclasses list child attributes in ``_children``."""

    _children: tuple = ()

    def named_parameters(self, prefix: str = ""):
        for name in self._children:
            value = getattr(self, name)
            items = value if isinstance(value, (list, tuple)) else [value]
            for i, item in enumerate(items):
                key = f"{prefix}{name}" if item is value else f"{prefix}{name}.{i}"
                if isinstance(item, Tensor):
                    yield key, item
                else:
                    yield from item.named_parameters(key + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    _children = ("weight", "bias")

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, dtype=np.float64):
        self.weight = Tensor(glorot_uniform(rng, in_dim, out_dim, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor, activation: str | None = None) -> Tensor:
        return linear(x, self.weight, self.bias, activation=activation)


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity in eval mode or at rate 0."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs a random generator")
    keep = rng.random(x.shape, dtype=np.float32 if x.dtype == np.float32 else np.float64) >= rate
    return mask_scale(x, keep, 1.0 / (1.0 - rate))


class PerPointMLP(Module):
    """Shared Linear+ReLU stack applied to every point independently (1x1 convolutions)."""

    _children = ("layers",)

    def __init__(self, in_dim: int, widths, rng: np.random.Generator, dtype=np.float64):
        dims = [in_dim, *widths]
        self.in_dim = in_dim
        self.widths = tuple(widths)
        self.layers = [Linear(a, b, rng, dtype) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x: Tensor, train: bool = False, rng=None, rate: float = 0.0) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"MLP expects {self.in_dim} input columns, got {x.shape[-1]}")
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x, activation="relu")
            if i < last:
                x = dropout(x, rate, train, rng)
        return x


def chebyshev_ones(op, order: int, n_rows: int, dtype=np.float64) -> np.ndarray:
    """Columns T_0(L)1 ... T_order(L)1, shape (n_rows, order + 1)."""
    ones = np.ones((n_rows, 1), dtype=dtype)
    return np.hstack(list(chebyshev_terms(lambda v: op @ v, ones, order)))


class ChebGCNLayer(Module):
    """act( sum_i T_i(L~) X theta_i + b ).

    With ``template_dim > 0`` the input is implicitly ``[X, tile(g)]``: the last
    ``template_dim`` rows of each theta_i act on the per-block template ``g``,
    which is never materialised per point.
    """

    _children = ("theta", "bias")

    def __init__(self, in_dim: int, out_dim: int, order: int, rng: np.random.Generator,
                 template_dim: int = 0, activation: str = "relu", dtype=np.float64):
        if order < 0:
            raise ValueError(f"Chebyshev order must be >= 0, got {order}")
        if activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        self.in_dim, self.out_dim, self.order = in_dim, out_dim, order
        self.template_dim = template_dim
        self.activation = activation
        total = in_dim + template_dim
        self.theta = [
            Tensor(glorot_uniform(rng, total, out_dim, dtype), requires_grad=True)
            for _ in range(order + 1)
        ]
        self.bias = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True)

    @property
    def project_first(self) -> bool:
        """Whether sparse products run on projected (out_dim) rather than input columns."""
        return self.out_dim < self.in_dim

    def _point_weight(self, i: int) -> Tensor:
        return self.theta[i] if not self.template_dim else self.theta[i][: self.in_dim]

    def __call__(self, x: Tensor, op, template: Tensor | None = None,
                 ones_basis: np.ndarray | None = None) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"layer expects {self.in_dim} input features, got {x.shape[-1]}")
        if op.shape[0] != x.shape[0]:
            raise ValueError(f"operator has {op.shape[0]} nodes, features have {x.shape[0]} rows")
        if (template is None) != (self.template_dim == 0):
            raise ValueError("template must be given exactly when template_dim > 0")

        def step(v, scale, plus, minus):
            return sparse_step(op, v, scale, plus, minus)

        act = "relu" if self.activation == "relu" else None
        if self.project_first:
            # sum_i T_i(L~) (Z theta_i): project, then one Clenshaw pass on out_dim columns
            ys = []
            for i in range(self.order + 1):
                seg = matmul(template, self.theta[i][self.in_dim:]) if self.template_dim else None
                ys.append(linear(x, self._point_weight(i), self.bias if i == 0 else None, segment_bias=seg))
            out = chebyshev_combine(None, ys, step=step)
            return relu(out) if act else out

        # stack [T_0 x, ..., T_K x] and apply all theta_i in one product
        terms = list(chebyshev_terms(None, x, self.order, step=step))
        stacked = concat(terms, axis=1) if len(terms) > 1 else terms[0]
        weights = [self._point_weight(i) for i in range(self.order + 1)]
        weight = concat(weights, axis=0) if len(weights) > 1 else weights[0]
        if not self.template_dim:
            return linear(stacked, weight, self.bias, activation=act)

        out = linear(stacked, weight, self.bias)
        n_blocks = template.shape[0]
        rows_per_block = x.shape[0] // n_blocks
        if ones_basis is None:
            ones_basis = chebyshev_ones(op, self.order, x.shape[0], x.dtype)
        for i in range(self.order + 1):
            proj = matmul(template, self.theta[i][self.in_dim:])
            tiled = repeat_rows(proj, rows_per_block)
            out = add(out, mul(tiled, ones_basis[:, i : i + 1]))
        return relu(out) if act else out
