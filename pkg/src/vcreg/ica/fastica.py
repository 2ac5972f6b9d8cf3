"""Symmetric fixed-point FastICA on whitened data."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..numerics import as_matrix, inverse_sqrt_psd, make_rng


@dataclass
class FastIcaResult:
    W: np.ndarray  # (n_components, D) unmixing rows, W W^T = I
    converged: bool
    n_iter: int

    def transform(self, Y_whitened) -> np.ndarray:
        return np.asarray(Y_whitened) @ self.W.T


def _contrast(kind: str, U: np.ndarray):
    if kind == "tanh":
        G = np.tanh(U)
        return G, (1.0 - G * G).mean(axis=0)
    if kind == "cube":
        return U**3, 3.0 * (U * U).mean(axis=0)
    raise ValueError(f"unknown contrast {kind!r}")


def _sym_decorrelate(W: np.ndarray) -> np.ndarray:
    return inverse_sqrt_psd(W @ W.T) @ W


def fastica(Y_whitened, n_components=None, contrast: str = "tanh", max_iter: int = 200,
            tol: float = 1e-6, rng=None) -> FastIcaResult:
    """Estimate an orthogonal unmixing matrix for whitened data (rows are samples).

    Non-convergence after ``max_iter`` iterations issues a warning and
    returns the last iterate with ``converged=False``.
    """
    Y = as_matrix(Y_whitened, "Y_whitened")
    n, D = Y.shape
    k = D if n_components is None else int(n_components)
    if not 1 <= k <= D:
        raise ValueError(f"n_components must be in [1, {D}]")
    rng = make_rng(rng)
    W = _sym_decorrelate(rng.standard_normal((k, D)))
    for it in range(1, max_iter + 1):
        U = Y @ W.T
        G, g_prime = _contrast(contrast, U)
        W_new = _sym_decorrelate(G.T @ Y / n - g_prime[:, None] * W)
        gap = float(np.max(np.abs(1.0 - np.abs(np.sum(W_new * W, axis=1)))))
        W = W_new
        if gap < tol:
            return FastIcaResult(W=W, converged=True, n_iter=it)
    warnings.warn(f"FastICA did not converge in {max_iter} iterations", RuntimeWarning)
    return FastIcaResult(W=W, converged=False, n_iter=max_iter)
