"""Polynomial graph filters and the eigenbasis reference path used to check them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial import chebyshev as npcheb
from numpy.polynomial import polynomial as nppoly

from .core import PropagationKind, PropagationMatrix

CHEBYSHEV = "chebyshev"
MONOMIAL = "monomial"

MAX_ORACLE_NODES = 64


@dataclass(frozen=True)
class PolynomialFilter:
    coefficients: tuple
    basis: str = CHEBYSHEV

    def __post_init__(self):
        coeffs = tuple(float(c) for c in np.ravel(self.coefficients))
        if not coeffs:
            raise ValueError("a filter needs at least one coefficient")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("filter coefficients must be finite")
        if self.basis not in (CHEBYSHEV, MONOMIAL):
            raise ValueError(f"unknown basis {self.basis!r}")
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def order(self) -> int:
        return len(self.coefficients) - 1

    def evaluate(self, lam):
        """p(lambda), scalar-wise."""
        if self.basis == CHEBYSHEV:
            return npcheb.chebval(lam, self.coefficients)
        return nppoly.polyval(lam, self.coefficients)


def _operator(prop):
    if isinstance(prop, PropagationMatrix):
        return prop.matrix
    return prop


def _check_rows(op, signal):
    if op.shape[0] != op.shape[1]:
        raise ValueError(f"operator must be square, got {op.shape}")
    if signal.shape[0] != op.shape[0]:
        raise ValueError(f"signal has {signal.shape[0]} rows, operator has {op.shape[0]} nodes")


def _default_step(matvec: Callable):
    def step(v, scale, plus, minus):
        out = matvec(v)
        if scale != 1:
            out = scale * out
        if plus is not None:
            out = plus + out
        if minus is not None:
            out = out - minus
        return out
    return step


def chebyshev_terms(matvec: Callable, x, order: int, step: Callable | None = None):
    """Yield T_0(L)x, T_1(L)x, ..., T_order(L)x given ``matvec(v) = L v``.

    Works for anything supporting ``2 * a - b`` (arrays, autograd tensors).
    ``step(v, scale, plus, minus) = scale * L v + plus - minus`` (None terms
    omitted) may be given to fuse each recurrence step into one operation.
    """
    step = step or _default_step(matvec)
    t_prev = x
    yield t_prev
    if order == 0:
        return
    t_cur = step(x, 1, None, None)
    yield t_cur
    for _ in range(2, order + 1):
        t_prev, t_cur = t_cur, step(t_cur, 2, None, t_prev)
        yield t_cur


def chebyshev_combine(matvec: Callable, terms, step: Callable | None = None):
    """sum_i T_i(L) y_i for per-order signals ``terms = [y_0, ..., y_K]`` (Clenshaw).

    Uses K products with L, like :func:`chebyshev_terms`, but on the y_i, which is
    cheaper when they are narrower than the signal they were projected from.
    ``step`` is as in :func:`chebyshev_terms`.
    """
    terms = list(terms)
    order = len(terms) - 1
    if order < 0:
        raise ValueError("need at least one term")
    if order == 0:
        return terms[0]
    step = step or _default_step(matvec)
    b1, b2 = terms[order], None
    for k in range(order - 1, 0, -1):
        b1, b2 = step(b1, 2, terms[k], b2), b1
    return step(b1, 1, terms[0], b2)


def chebyshev_apply(prop, filt: PolynomialFilter, signal):
    """sum_i theta_i T_i(L~) x via the three-term recurrence; only sparse products."""
    if filt.basis != CHEBYSHEV:
        raise ValueError("chebyshev_apply needs a Chebyshev-basis filter")
    if isinstance(prop, PropagationMatrix) and prop.kind is not PropagationKind.RESCALED_LAPLACIAN:
        raise ValueError(f"Chebyshev filters run on a rescaled Laplacian, got {prop.kind.value}")
    op = _operator(prop)
    x = np.asarray(signal, dtype=np.float64)
    _check_rows(op, x)
    out = np.zeros_like(x)
    for theta, t in zip(filt.coefficients, chebyshev_terms(lambda v: op @ v, x, filt.order)):
        out += theta * t
    return out


def monomial_apply(prop, filt: PolynomialFilter, signal):
    """sum_i alpha_i L^i x by repeated sparse products."""
    if filt.basis != MONOMIAL:
        raise ValueError("monomial_apply needs a monomial-basis filter")
    op = _operator(prop)
    x = np.asarray(signal, dtype=np.float64)
    _check_rows(op, x)
    out = filt.coefficients[0] * x
    power = x
    for alpha in filt.coefficients[1:]:
        power = op @ power
        out = out + alpha * power
    return out


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @classmethod
    def of(cls, matrix) -> "SpectralDecomposition":
        """Dense symmetric eigendecomposition; reference use only, n <= 64."""
        if isinstance(matrix, PropagationMatrix):
            dense = matrix.to_dense()
        elif hasattr(matrix, "toarray"):
            dense = matrix.toarray()
        else:
            dense = np.asarray(matrix, dtype=np.float64)
        n = dense.shape[0]
        if n > MAX_ORACLE_NODES:
            raise ValueError(f"eigendecomposition is limited to n <= {MAX_ORACLE_NODES}, got {n}")
        if not np.allclose(dense, dense.T, rtol=0, atol=1e-12):
            raise ValueError("matrix is not symmetric")
        lam, u = np.linalg.eigh(dense)
        return cls(lam, u)

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.T


def spectral_convolve(decomp: SpectralDecomposition, signal, kernel_signal):
    """x *_G m = U (U^T x  (.)  U^T m), the product applied per signal column."""
    x = np.asarray(signal, dtype=np.float64)
    m = np.asarray(kernel_signal, dtype=np.float64).ravel()
    u = decomp.eigenvectors
    if x.shape[0] != decomp.n or m.shape[0] != decomp.n:
        raise ValueError(
            f"signal rows {x.shape[0]} and kernel length {m.shape[0]} must equal n={decomp.n}"
        )
    x_hat = u.T @ x
    m_hat = u.T @ m
    if x.ndim == 1:
        return u @ (x_hat * m_hat)
    return u @ (x_hat * m_hat[:, None])


def spectral_filter_oracle(decomp: SpectralDecomposition, filt: PolynomialFilter, signal):
    """U diag(p(lambda)) U^T x with p evaluated on each eigenvalue."""
    x = np.asarray(signal, dtype=np.float64)
    if x.shape[0] != decomp.n:
        raise ValueError(f"signal has {x.shape[0]} rows, decomposition has n={decomp.n}")
    u = decomp.eigenvectors
    response = filt.evaluate(decomp.eigenvalues)
    x_hat = u.T @ x
    if x.ndim == 1:
        return u @ (response * x_hat)
    return u @ (response[:, None] * x_hat)
