"""A small dense tensor with reverse-mode differentiation on top of numpy.

Each differentiable result keeps references to its parents and a closure that
maps the output gradient to parent gradients. ``backward`` walks that graph in
reverse topological order, so every gradient is the full sum over paths.
"""

from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (evaluation, oracle computations)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    # -- basics -------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return len(self.data)

    # -- graph --------------------------------------------------------------
    def backward(self, grad=None, retain_graph: bool = False):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        while order:
            # popping lets processed intermediates be freed as we go
            node = order.pop()
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            if not retain_graph:
                node._parents = ()
                node._backward = None

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self):
        return sum_all(self)

    def relu(self):
        return relu(self)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _result(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    return _result(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    ad, bd = a.data, b.data
    return _result(
        ad * bd, (a, b),
        lambda g: (
            _unbroadcast(g * bd, a.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, b.shape) if b.requires_grad else None,
        ),
    )


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0).astype(a.dtype, copy=False), (a,), lambda g: (g * mask,))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _result(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


# -- linear algebra --------------------------------------------------------

def matmul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    ad, bd = a.data, b.data
    return _result(
        ad @ bd, (a, b),
        lambda g: (
            g @ bd.T if a.requires_grad else None,
            ad.T @ g if b.requires_grad else None,
        ),
    )


def sparse_mm(op, x: Tensor) -> Tensor:
    """``op @ x`` for a constant scipy sparse ``op``."""
    return _result(op @ x.data, (x,), lambda g: (op.T @ g,))


def sparse_step(op, x: Tensor, scale: float = 1.0, plus: Tensor | None = None,
                minus: Tensor | None = None) -> Tensor:
    """``scale * op @ x + plus - minus`` as a single node (one stored array)."""
    out = op @ x.data
    if scale != 1:
        out *= scale
    if plus is not None:
        out += plus.data
    if minus is not None:
        out -= minus.data
    parents = [x]
    if plus is not None:
        parents.append(plus)
    if minus is not None:
        parents.append(minus)

    def back(g):
        gx = op.T @ g
        if scale != 1:
            gx *= scale
        grads = [gx]
        if plus is not None:
            grads.append(g)
        if minus is not None:
            grads.append(-g)
        return tuple(grads)

    return _result(out, parents, back)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None, segment_bias: Tensor | None = None,
           activation: str | None = None) -> Tensor:
    """``act(x @ w + b + tile(segment_bias))`` as a single node.

    ``segment_bias`` has one row per equal segment of rows in ``x``; it is
    broadcast over its segment rather than materialised per row.
    """
    if activation not in (None, "relu"):
        raise ValueError(f"unknown activation {activation!r}")
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is not None:
        out += b.data
    rows, f = out.shape
    n_seg = 0
    if segment_bias is not None:
        n_seg = segment_bias.shape[0]
        if n_seg < 1 or rows % n_seg:
            raise ValueError(f"cannot split {rows} rows into {n_seg} equal segments")
        out.reshape(n_seg, rows // n_seg, f)[...] += segment_bias.data[:, None, :]
    if activation == "relu":
        np.maximum(out, 0, out=out)
    parents = [x, w]
    if b is not None:
        parents.append(b)
    if segment_bias is not None:
        parents.append(segment_bias)

    def back(g):
        if activation == "relu":
            g = g * (out > 0)
        grads = [g @ wd.T if x.requires_grad else None, xd.T @ g if w.requires_grad else None]
        if b is not None:
            grads.append(g.sum(axis=0))
        if segment_bias is not None:
            grads.append(g.reshape(n_seg, rows // n_seg, f).sum(axis=1))
        return tuple(grads)

    return _result(out, parents, back)


def mask_scale(x: Tensor, keep: np.ndarray, scale: float) -> Tensor:
    """``x * keep * scale`` for a boolean ``keep``; stores the mask as booleans."""
    s = x.dtype.type(scale)
    out = np.where(keep, x.data * s, 0).astype(x.dtype, copy=False)
    return _result(out, (x,), lambda g: (np.where(keep, g * s, 0).astype(g.dtype, copy=False),))


# -- shape ----------------------------------------------------------------

def index(a: Tensor, key) -> Tensor:
    shape = a.shape

    def back(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[key] = g
        return (out,)

    return _result(a.data[key], (a,), back)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
        lambda g: tuple(np.split(g, sizes, axis=axis)),
    )


def segment_max(x: Tensor, n_segments: int) -> Tensor:
    """Column-wise max inside each of ``n_segments`` equal row segments: (B*S, F) -> (B, F).

    The gradient goes to the first row attaining each maximum.
    """
    rows, f = x.shape
    if n_segments < 1 or rows == 0 or rows % n_segments:
        raise ValueError(f"cannot split {rows} rows into {n_segments} equal segments")
    s = rows // n_segments
    cube = x.data.reshape(n_segments, s, f)
    arg = cube.argmax(axis=1)

    def back(g):
        out = np.zeros((n_segments, s, f), dtype=g.dtype)
        b_idx, f_idx = np.meshgrid(np.arange(n_segments), np.arange(f), indexing="ij")
        out[b_idx, arg, f_idx] = g
        return (out.reshape(rows, f),)

    return _result(cube.max(axis=1), (x,), back)


def repeat_rows(x: Tensor, times: int) -> Tensor:
    """(B, F) -> (B*times, F), each row repeated ``times`` times in place."""
    b, f = x.shape
    return _result(
        np.repeat(x.data, times, axis=0), (x,),
        lambda g: (g.reshape(b, times, f).sum(axis=1),),
    )


# -- losses ----------------------------------------------------------------

def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, labels, ignore_index: int = -1,
                          denominator: int | None = None) -> Tensor:
    """Mean over labelled rows of -log softmax(logits)[label].

    Rows whose label equals ``ignore_index`` contribute neither loss nor gradient.
    With ``denominator`` the summed loss is divided by it instead of the local
    labelled count, so chunks of one batch add up to the batch mean.
    """
    labels = np.asarray(labels, dtype=np.int64).ravel()
    n, c = logits.shape
    if len(labels) != n:
        raise ValueError(f"{len(labels)} labels for {n} rows of logits")
    valid = labels != ignore_index
    if np.any(valid & ((labels < 0) | (labels >= c))):
        bad = labels[valid & ((labels < 0) | (labels >= c))][0]
        raise ValueError(f"label {bad} out of range for {c} classes")
    count = int(valid.sum())
    if denominator is None:
        if count == 0:
            raise ValueError("no labelled rows to compute a loss on")
    elif denominator < max(count, 1):
        raise ValueError(f"denominator {denominator} is below the labelled count {count}")
    else:
        count = denominator
    rows = np.flatnonzero(valid)
    lsm = log_softmax(logits.data)
    loss = -lsm[rows, labels[rows]].sum() / count

    def back(g):
        grad = np.exp(lsm)
        grad[rows, labels[rows]] -= 1.0
        grad[~valid] = 0.0
        return (grad * (g / count),)

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), back)
