"""Source recovery scoring and unsupervised model selection."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..kernels import dhsic
from ..numerics import as_matrix


def abs_correlation_matrix(S_true: np.ndarray, S_rec: np.ndarray) -> np.ndarray:
    """|Pearson| between every true column (rows) and recovered column (cols).

    Zero-variance recovered columns get correlation 0.
    """
    A = S_true - S_true.mean(axis=0)
    B = S_rec - S_rec.mean(axis=0)
    a = np.linalg.norm(A, axis=0)
    b = np.linalg.norm(B, axis=0)
    if np.any(a == 0):
        raise ValueError("a true source column has zero variance")
    dead = b <= 1e-12 * (1.0 + np.max(np.abs(S_rec), axis=0)) * np.sqrt(len(S_rec))
    b = np.where(dead, 1.0, b)
    C = np.abs((A / a).T @ (B / b))
    C[:, dead] = 0.0
    return np.minimum(C, 1.0)


def max_correlation(S_true, S_rec, signal: Optional[Sequence[int]] = None) -> float:
    """Mean |correlation| over the optimal one-to-one matching of true to recovered channels.

    ``signal`` selects which true columns are scored (all by default); every
    recovered column is a matching candidate.
    """
    S_true = as_matrix(S_true, "S_true")
    S_rec = as_matrix(S_rec, "S_rec")
    if S_true.shape[0] != S_rec.shape[0]:
        raise ValueError("true and recovered sources need the same number of samples")
    cols = list(range(S_true.shape[1])) if signal is None else list(signal)
    if S_rec.shape[1] < len(cols):
        raise ValueError(f"{len(cols)} channels are scored but only {S_rec.shape[1]} were recovered")
    C = abs_correlation_matrix(S_true[:, cols], S_rec)
    rows, assigned = linear_sum_assignment(C, maximize=True)
    return float(C[rows, assigned].mean())


def select_model_by_dhsic(checkpoints):
    """Return the id of the checkpoint whose recovered channels have the lowest dHSIC.

    ``checkpoints`` is a sequence of ``(X_recovered, id)``; ties go to the earliest entry.
    """
    checkpoints = list(checkpoints)
    if not checkpoints:
        raise ValueError("no checkpoints to select from")
    best_id, best = None, np.inf
    for X, cid in checkpoints:
        value = dhsic(as_matrix(X, "X"))
        if value < best:
            best_id, best = cid, value
    return best_id
