"""Numerical checks relating VC regularization of a projector output to HSIC of its input.

Each check evaluates both sides through separate code paths: the HSIC side
builds dense N x N kernel matrices and uses :func:`hsic_from_kernels`, the
covariance side only calls :func:`covariance` on the projected data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .kernels import hsic_from_kernels
from .numerics import as_matrix, covariance


@dataclass(frozen=True)
class IdentityCheck:
    hsic_side: float
    covariance_side: float
    residual: float

    @property
    def relative(self) -> float:
        return self.residual / (1.0 + max(abs(self.hsic_side), abs(self.covariance_side)))


@dataclass(frozen=True)
class Lemma2Check:
    """Result of :func:`lemma2_residual`.

    ``exact`` compares the pairwise linear-kernel HSIC sum with
    ``||Cov(XW) - v W^T W||_F^2`` for row-orthonormal ``W`` (an algebraic
    identity). ``offdiag_gap`` is the relative gap to the plain off-diagonal
    sum ``sum_{k != l} Cov(XW)_kl^2`` for the same ``W``; it is zero only when
    ``diag(Cov(XW)) = v I``. ``deviation`` is the relative gap of the exact
    expression when the raw random ``W`` (rescaled so that E[W W^T] = I) is
    used instead of its orthonormalization; it shrinks as P grows.
    """

    exact: IdentityCheck
    offdiag_gap: float
    deviation: float


def _offdiag_sq_sum(C: np.ndarray) -> float:
    return float(np.sum(C * C) - np.sum(np.diag(C) ** 2))


def lemma1_residual(X, g: Callable[[np.ndarray], np.ndarray]) -> IdentityCheck:
    """Compare sum_{i != j} HSIC(X_i, X_j) under rank-one kernels g(X_i) g(X_i)^T
    with sum_{i != j} Cov(g(X))_ij^2 (elementwise projector with L = 1)."""
    X = as_matrix(X, "X", min_rows=2)
    Z = np.column_stack([np.asarray(g(X[:, i]), dtype=np.float64).reshape(-1)
                         for i in range(X.shape[1])])
    if Z.shape != X.shape:
        raise ValueError("g must map each column to a column of the same length")

    D = X.shape[1]
    kernels = [np.outer(Z[:, i], Z[:, i]) for i in range(D)]
    lhs = 0.0
    for i in range(D):
        for j in range(D):
            if i != j:
                lhs += hsic_from_kernels(kernels[i], kernels[j])

    rhs = _offdiag_sq_sum(covariance(Z))
    return IdentityCheck(hsic_side=lhs, covariance_side=rhs, residual=abs(lhs - rhs))


def orthonormalize_rows(W) -> np.ndarray:
    """Return a D x P matrix with orthonormal rows spanning the row space of W (P >= D)."""
    W = as_matrix(W, "W")
    D, P = W.shape
    if P < D:
        raise ValueError(f"need P >= D to orthonormalize rows, got D={D}, P={P}")
    Q, R = np.linalg.qr(W.T)
    # fix signs so that the result is a deterministic function of W
    Q = Q * np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R)))
    return Q.T


def lemma2_residual(X, W, premise_tol: float = 1e-6) -> Lemma2Check:
    """Check the random linear projector identity on data X (N x D) and weights W (D x P).

    Columns of X must share a common variance.
    """
    X = as_matrix(X, "X", min_rows=2)
    W = as_matrix(W, "W")
    D, P = W.shape
    if X.shape[1] != D:
        raise ValueError(f"X has {X.shape[1]} columns but W has {D} rows")

    variances = X.var(axis=0, ddof=1)
    v = float(variances.mean())
    if np.max(np.abs(variances - v)) > premise_tol * max(1.0, abs(v)):
        raise ValueError("lemma premise violated: columns of X must have equal variance")

    lhs = 0.0
    for i in range(D):
        Ki = np.outer(X[:, i], X[:, i])
        for j in range(D):
            if i != j:
                lhs += hsic_from_kernels(Ki, np.outer(X[:, j], X[:, j]))

    def rhs(Wm):
        """Return (||Cov(X Wm) - v Wm^T Wm||_F^2, sum_{k != l} Cov(X Wm)_kl^2)."""
        B = X @ Wm
        if Wm.shape[1] <= X.shape[0]:
            C = covariance(B)
            return float(np.sum((C - v * (Wm.T @ Wm)) ** 2)), _offdiag_sq_sum(C)
        # same quantities expanded through N x N and D x D Gram matrices
        n = B.shape[0]
        Bc = B - B.mean(axis=0)
        G = Bc @ Bc.T
        frob = float(np.sum(G * G)) / (n - 1) ** 2
        cross = Bc @ Wm.T
        WWt = Wm @ Wm.T
        exact = frob - 2.0 * v * float(np.sum(cross * cross)) / (n - 1) + v * v * float(np.sum(WWt * WWt))
        col_var = np.einsum("ij,ij->j", Bc, Bc) / (n - 1)
        return exact, frob - float(np.sum(col_var * col_var))

    Wo = orthonormalize_rows(W)
    exact_rhs, offdiag = rhs(Wo)
    exact = IdentityCheck(hsic_side=lhs, covariance_side=exact_rhs, residual=abs(lhs - exact_rhs))
    offdiag_gap = abs(lhs - offdiag) / (1.0 + max(abs(lhs), abs(offdiag)))

    # rescale so that E[W W^T] = I, which makes the raw draw comparable to Wo
    row_norm_sq = float(np.mean(np.sum(W * W, axis=1)))
    W_scaled = W / np.sqrt(row_norm_sq)
    raw_rhs, _ = rhs(W_scaled)
    deviation = abs(lhs - raw_rhs) / max(abs(lhs), 1e-300)
    return Lemma2Check(exact=exact, offdiag_gap=offdiag_gap, deviation=deviation)
