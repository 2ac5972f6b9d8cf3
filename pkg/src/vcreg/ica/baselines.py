"""Whitening and FastICA baselines scored against ground truth."""

from __future__ import annotations

import numpy as np

from ..numerics import whiten
from .fastica import fastica
from .metrics import max_correlation


def whitening_score(Y, S_true, signal=None) -> float:
    W, _, _ = whiten(Y)
    return max_correlation(S_true, W, signal)


def fastica_score(Y, S_true, signal=None, contrast: str = "tanh", rng=None) -> float:
    W, _, _ = whiten(Y)
    result = fastica(W, contrast=contrast, rng=rng)
    return max_correlation(S_true, result.transform(W), signal)
