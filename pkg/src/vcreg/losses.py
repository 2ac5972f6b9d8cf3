"""Variance-covariance regularization losses with analytic gradients.

Every loss returns a :class:`LossValue` carrying the total, the unweighted
terms and the gradient with respect to each input matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .numerics import as_matrix

STD_FLOOR = 1e-4
# features within this distance of unit std count as satisfying the hinge
HINGE_TOL = 1e-12


@dataclass(frozen=True)
class VcWeights:
    variance_weight: float = 1.0
    covariance_weight: float = 1.0
    invariance_weight: float = 1.0

    def __post_init__(self):
        for name in ("variance_weight", "covariance_weight", "invariance_weight"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {value}")


@dataclass
class LossValue:
    total: float
    terms: dict = field(default_factory=dict)
    grad: Optional[np.ndarray] = None
    grad_right: Optional[np.ndarray] = None


def scaled_covariance_weight(alpha: float, width: int) -> float:
    """Covariance coefficient rescaled by 1/sqrt(P) so the penalty keeps a
    comparable magnitude across projector widths."""
    return alpha / math.sqrt(width)


def _vc_terms(Z: np.ndarray, alpha: float, variance_weight: float):
    n, p = Z.shape
    if n < 2:
        raise ValueError("insufficient samples: VC loss needs N >= 2")
    Zc = Z - Z.mean(axis=0)
    var = np.einsum("ij,ij->j", Zc, Zc) / (n - 1)
    std = np.sqrt(var)

    active = std < 1.0 - HINGE_TOL
    variance_term = float(np.sum(np.where(active, 1.0 - std, 0.0)))

    # sum_{j != k} C_jk^2 = ||C||_F^2 - sum_k C_kk^2, with ||Zc^T Zc||_F = ||Zc Zc^T||_F
    if p > n:
        G = Zc @ Zc.T
        frob = float(np.sum(G * G)) / (n - 1) ** 2
        # the subtraction can cancel to a tiny negative; the true value is a sum of squares
        covariance_term = max(frob - float(np.sum(var * var)), 0.0)
        CZ = (G @ Zc) / (n - 1)
    else:
        C = Zc.T @ Zc / (n - 1)
        off = C - np.diag(np.diag(C))
        covariance_term = float(np.sum(off * off))
        CZ = Zc @ C

    # d/dZc sum_k (1 - std_k)_+ = -Zc_k / ((n-1) max(std_k, floor)) on active features
    coef = np.where(active, -1.0 / ((n - 1) * np.maximum(std, STD_FLOOR)), 0.0)
    grad = variance_weight * Zc * coef
    # d/dZc of the off-diagonal sum: 4/(n-1) * Zc (C - diag C)
    grad += alpha * (4.0 / (n - 1)) * (CZ - Zc * var)
    # centering is a projection; Zc-gradients above are already column-centered
    return variance_term, covariance_term, grad


def vc_loss(Z, alpha: float = 1.0, variance_weight: float = 1.0) -> LossValue:
    """sum_k max(0, 1 - sqrt(Cov(Z)_kk)) + alpha * sum_{j != k} Cov(Z)_jk^2."""
    Z = as_matrix(Z, "Z")
    var_t, cov_t, grad = _vc_terms(Z, alpha, variance_weight)
    total = variance_weight * var_t + alpha * cov_t
    return LossValue(total=total, terms={"variance": var_t, "covariance": cov_t}, grad=grad)


def invariance_loss(Z_left, Z_right) -> LossValue:
    """Mean over rows of the squared euclidean distance between the two branches."""
    Z_left = as_matrix(Z_left, "Z_left")
    Z_right = as_matrix(Z_right, "Z_right")
    if Z_left.shape != Z_right.shape:
        raise ValueError(f"shape mismatch: {Z_left.shape} vs {Z_right.shape}")
    n = Z_left.shape[0]
    diff = Z_left - Z_right
    value = float(np.sum(diff * diff)) / n
    g = 2.0 * diff / n
    return LossValue(total=value, terms={"invariance": value}, grad=g, grad_right=-g)


def vicreg_loss(Z_left, Z_right, weights: VcWeights = VcWeights()) -> LossValue:
    """Invariance term plus VC regularization on the stacked (2N, P) embedding."""
    Z_left = as_matrix(Z_left, "Z_left")
    Z_right = as_matrix(Z_right, "Z_right")
    inv = invariance_loss(Z_left, Z_right)
    n = Z_left.shape[0]
    stacked = np.vstack([Z_left, Z_right])
    var_t, cov_t, g_vc = _vc_terms(stacked, weights.covariance_weight, weights.variance_weight)
    total = (weights.invariance_weight * inv.total + weights.variance_weight * var_t
             + weights.covariance_weight * cov_t)
    return LossValue(
        total=total,
        terms={"invariance": inv.total, "variance": var_t, "covariance": cov_t},
        grad=weights.invariance_weight * inv.grad + g_vc[:n],
        grad_right=weights.invariance_weight * inv.grad_right + g_vc[n:],
    )


def _normalized_columns(Z: np.ndarray, name: str):
    Zc = Z - Z.mean(axis=0)
    norms = np.linalg.norm(Zc, axis=0)
    scale = np.sqrt(Z.shape[0]) * (1.0 + np.max(np.abs(Z), axis=0))
    bad = np.flatnonzero(norms <= 1e-12 * scale)
    if bad.size:
        raise ValueError(f"{name}: centered column {int(bad[0])} has zero norm")
    return Zc / norms, norms


def cross_correlation(Z_left, Z_right) -> np.ndarray:
    """Cosine similarity between centered columns of the two branches (P x P)."""
    Z_left = as_matrix(Z_left, "Z_left")
    Z_right = as_matrix(Z_right, "Z_right")
    if Z_left.shape != Z_right.shape:
        raise ValueError(f"shape mismatch: {Z_left.shape} vs {Z_right.shape}")
    A, _ = _normalized_columns(Z_left, "Z_left")
    B, _ = _normalized_columns(Z_right, "Z_right")
    return np.clip(A.T @ B, -1.0, 1.0)


def barlow_twins_loss(Z_left, Z_right, alpha: float = 1.0) -> LossValue:
    """sum_k (C_kk - 1)^2 + alpha * sum_{k != l} C_kl^2 on the branch cross-correlation."""
    Z_left = as_matrix(Z_left, "Z_left")
    Z_right = as_matrix(Z_right, "Z_right")
    if Z_left.shape != Z_right.shape:
        raise ValueError(f"shape mismatch: {Z_left.shape} vs {Z_right.shape}")
    A, a_norm = _normalized_columns(Z_left, "Z_left")
    B, b_norm = _normalized_columns(Z_right, "Z_right")
    C = A.T @ B
    diag = np.diag(C)
    on = float(np.sum((diag - 1.0) ** 2))
    off = float(np.sum(C * C) - np.sum(diag * diag))

    G = 2.0 * alpha * C
    np.fill_diagonal(G, 2.0 * (diag - 1.0))
    gA = B @ G.T
    gB = A @ G

    def through_norm(U, gU, norms):
        # gradient of U = Xc / ||Xc|| back to Xc, then through centering
        g = (gU - U * np.sum(U * gU, axis=0)) / norms
        return g - g.mean(axis=0)

    return LossValue(
        total=on + alpha * off,
        terms={"on_diagonal": on, "off_diagonal": off},
        grad=through_norm(A, gA, a_norm),
        grad_right=through_norm(B, gB, b_norm),
    )
