"""HSIC / dHSIC estimators, bandwidth selection and permutation tests."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .numerics import as_matrix, make_rng

NORMALIZATIONS = ("unbiased", "biased")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel choice for one HSIC argument.

    ``bandwidth`` is either a positive float or ``"median"`` (resolved on the
    data with :func:`median_bandwidth`). ``matrix`` is only used when
    ``kind == "precomputed"``.
    """

    kind: str = "gaussian"
    bandwidth: Union[float, str] = "median"
    matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "linear", "precomputed"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "gaussian" and self.bandwidth != "median":
            if not float(self.bandwidth) > 0:
                raise ValueError("gaussian bandwidth must be positive")
        if self.kind == "precomputed" and self.matrix is None:
            raise ValueError("precomputed kernel needs a matrix")


GAUSSIAN_MEDIAN = KernelSpec()
LINEAR = KernelSpec(kind="linear")


@dataclass(frozen=True)
class HsicResult:
    value: float
    normalization: str
    bandwidths: tuple

    def __float__(self):
        return self.value


@dataclass(frozen=True)
class TestResult:
    p_value: float
    reject: bool
    statistic: float
    num_permutations: int


@dataclass(frozen=True)
class SubsetDhsic:
    subsets: list
    values: list


def _distances(X: np.ndarray) -> np.ndarray:
    if X.shape[1] == 1:
        x = X[:, 0]
        return np.abs(x[:, None] - x[None, :])
    return cdist(X, X)


def gaussian_kernel_matrix(X, sigma: float) -> np.ndarray:
    """K[i, j] = exp(-||x_i - x_j|| / (2 sigma^2)).

    The exponent uses the plain (unsquared) euclidean distance.
    """
    X = as_matrix(X, "X")
    if not sigma > 0 or not np.isfinite(sigma):
        raise ValueError(f"sigma must be a positive finite number, got {sigma}")
    return np.exp(-_distances(X) / (2.0 * sigma**2))


def median_bandwidth(X) -> float:
    """Median of the pairwise euclidean distances over pairs i < j."""
    X = as_matrix(X, "X")
    if X.shape[0] < 2:
        raise ValueError("median bandwidth needs at least two samples")
    if X.shape[1] == 1:
        x = X[:, 0]
        iu = np.triu_indices(len(x), k=1)
        d = np.abs(x[iu[0]] - x[iu[1]])
    else:
        d = pdist(X)
    med = float(np.median(d))
    if med <= 0:
        raise ValueError("degenerate bandwidth: median pairwise distance is zero")
    return med


def kernel_matrix(X, spec: KernelSpec = GAUSSIAN_MEDIAN):
    """Evaluate ``spec`` on ``X``; returns ``(K, bandwidth_or_None)``."""
    if spec.kind == "precomputed":
        K = as_matrix(spec.matrix, "precomputed kernel")
        _check_symmetric(K, "precomputed kernel", tol=1e-10)
        return K, None
    X = as_matrix(X, "X")
    if spec.kind == "linear":
        return X @ X.T, None
    sigma = median_bandwidth(X) if spec.bandwidth == "median" else float(spec.bandwidth)
    return gaussian_kernel_matrix(X, sigma), sigma


def _check_symmetric(K: np.ndarray, name: str, tol: float = 1e-8):
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"{name} must be square, got {K.shape}")
    scale = max(1.0, float(np.max(np.abs(K))))
    if np.max(np.abs(K - K.T)) > tol * scale:
        raise ValueError(f"{name} is not symmetric")


def double_center(K: np.ndarray) -> np.ndarray:
    """H K H without forming H."""
    row = K.mean(axis=1, keepdims=True)
    col = K.mean(axis=0, keepdims=True)
    return K - row - col + K.mean()


def _denominator(n: int, normalization: str) -> float:
    if normalization == "unbiased":
        return float((n - 1) ** 2)
    if normalization == "biased":
        return float(n**2)
    raise ValueError(f"normalization must be one of {NORMALIZATIONS}")


def hsic_from_kernels(K1, K2, normalization: str = "unbiased") -> float:
    """Tr(K1 H K2 H) / (N-1)^2, or / N^2 with ``normalization='biased'``."""
    K1 = np.asarray(K1, dtype=np.float64)
    K2 = np.asarray(K2, dtype=np.float64)
    _check_symmetric(K1, "K1")
    _check_symmetric(K2, "K2")
    if K1.shape != K2.shape:
        raise ValueError(f"kernel shapes differ: {K1.shape} vs {K2.shape}")
    n = K1.shape[0]
    if n < 2:
        raise ValueError("HSIC needs N >= 2")
    # Tr(K1 H K2 H) = sum((H K1 H) * (H K2 H)); centering both makes a constant kernel give exactly 0
    return float(np.sum(double_center(K1) * double_center(K2)) / _denominator(n, normalization))


def hsic(X1, X2, k1: KernelSpec = GAUSSIAN_MEDIAN, k2: KernelSpec = GAUSSIAN_MEDIAN,
         normalization: str = "unbiased") -> HsicResult:
    X1 = as_matrix(X1, "X1")
    X2 = as_matrix(X2, "X2")
    if X1.shape[0] != X2.shape[0]:
        raise ValueError(f"sample counts differ: {X1.shape[0]} vs {X2.shape[0]}")
    if X1.shape[0] < 2:
        raise ValueError("HSIC needs N >= 2")
    K1, s1 = kernel_matrix(X1, k1)
    K2, s2 = kernel_matrix(X2, k2)
    value = hsic_from_kernels(K1, K2, normalization)
    return HsicResult(value=value, normalization=normalization, bandwidths=(s1, s2))


def dhsic_from_kernels(Ks: Sequence[np.ndarray]) -> float:
    """Three-term V-statistic estimator of dHSIC from d kernel matrices."""
    if len(Ks) < 2:
        raise ValueError("dHSIC needs at least two variables")
    n = Ks[0].shape[0]
    d = len(Ks)
    prod = np.ones((n, n))
    term2 = 1.0
    row_prod = np.ones(n)
    for K in Ks:
        if K.shape != (n, n):
            raise ValueError("all kernel matrices must share the same N")
        prod *= K
        term2 *= K.sum() / n**2
        row_prod *= K.sum(axis=1) / n
    term1 = prod.sum() / n**2
    term3 = 2.0 * row_prod.sum() / n
    return float(term1 + term2 - term3)


def dhsic(Xs, kernels: Optional[Sequence[KernelSpec]] = None) -> float:
    """dHSIC of d variables, each given as an (N, M) matrix or an (N,) vector.

    A single 2-D array is split into its columns.
    """
    if isinstance(Xs, np.ndarray) and Xs.ndim == 2:
        Xs = [Xs[:, [j]] for j in range(Xs.shape[1])]
    Xs = [as_matrix(X, f"X{i}") for i, X in enumerate(Xs)]
    d = len(Xs)
    if d < 2:
        raise ValueError("dHSIC needs at least two variables")
    n = Xs[0].shape[0]
    if any(X.shape[0] != n for X in Xs):
        raise ValueError("all variables must have the same number of samples")
    if n < 2 * d:
        raise ValueError(f"sample size below 2d: N={n}, d={d}")
    kernels = kernels or [GAUSSIAN_MEDIAN] * d
    Ks = [kernel_matrix(X, k)[0] for X, k in zip(Xs, kernels)]
    return dhsic_from_kernels(Ks)


def permutation_test(X1, X2, k1: KernelSpec = GAUSSIAN_MEDIAN, k2: KernelSpec = GAUSSIAN_MEDIAN,
                     num_permutations: int = 200, alpha: float = 0.05, rng=None) -> TestResult:
    """HSIC permutation test of independence between X1 and X2.

    Rows of X2 are permuted; bandwidths are fixed on the unpermuted data.
    p = (1 + #{permuted >= observed}) / (1 + B).
    """
    if num_permutations < 50:
        raise ValueError("num_permutations must be at least 50")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    X1 = as_matrix(X1, "X1")
    X2 = as_matrix(X2, "X2")
    n = X1.shape[0]
    if X2.shape[0] != n:
        raise ValueError(f"sample counts differ: {n} vs {X2.shape[0]}")
    rng = make_rng(rng)
    K1, _ = kernel_matrix(X1, k1)
    K2, _ = kernel_matrix(X2, k2)
    K1c = double_center(K1)
    K2c = double_center(K2)
    denom = _denominator(n, "unbiased")
    observed = float(np.sum(K1c * K2c) / denom)
    exceed = 0
    for _ in range(num_permutations):
        perm = rng.permutation(n)
        stat = np.sum(K1c * K2c[np.ix_(perm, perm)]) / denom
        # tolerance guards against ties from rounding (e.g. the identity permutation)
        if stat >= observed - 1e-12 * abs(observed):
            exceed += 1
    p = (1 + exceed) / (1 + num_permutations)
    return TestResult(p_value=p, reject=p <= alpha, statistic=observed,
                      num_permutations=num_permutations)


def _column_kernels(R: np.ndarray, cols, kernel: KernelSpec):
    Ks = {}
    for j in cols:
        col = R[:, [j]]
        if np.ptp(col) == 0:
            raise ValueError(f"column {j} is constant")
        Ks[j] = kernel_matrix(col, kernel)[0]
    return Ks


def mean_pairwise_hsic(R, n: int, kernel: KernelSpec = GAUSSIAN_MEDIAN) -> float:
    """Average HSIC over all pairs of the first ``n`` columns of ``R``."""
    R = as_matrix(R, "R", min_rows=2)
    if not 2 <= n <= R.shape[1]:
        raise ValueError(f"n must satisfy 2 <= n <= {R.shape[1]}, got {n}")
    Ks = _column_kernels(R, range(n), kernel)
    centered = {j: double_center(K) for j, K in Ks.items()}
    denom = _denominator(R.shape[0], "unbiased")
    vals = [np.sum(centered[i] * Ks[j]) / denom for i, j in combinations(range(n), 2)]
    return float(np.mean(vals))


def dhsic_subsets(R, n: int, num_sets: int, rng=None,
                  kernel: KernelSpec = GAUSSIAN_MEDIAN) -> SubsetDhsic:
    """dHSIC on ``num_sets`` random n-column subsets of ``R``."""
    R = as_matrix(R, "R")
    N, D = R.shape
    if n > D:
        raise ValueError(f"n={n} exceeds the number of columns {D}")
    if N < 2 * n:
        raise ValueError(f"sample size below 2d: N={N}, n={n}")
    rng = make_rng(rng)
    subsets, values = [], []
    cache = {}
    for _ in range(num_sets):
        subset = tuple(sorted(int(j) for j in rng.choice(D, size=n, replace=False)))
        for j in subset:
            if j not in cache:
                cache.update(_column_kernels(R, [j], kernel))
        subsets.append(subset)
        values.append(dhsic_from_kernels([cache[j] for j in subset]))
    return SubsetDhsic(subsets=subsets, values=values)
