"""Dense matrix helpers, whitening, seeded randomness and first-order optimizers.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 with rows as
samples and columns as features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

RNG_ALGORITHM = "numpy.PCG64"


def as_matrix(x, name: str = "matrix", min_rows: int = 1) -> np.ndarray:
    """Coerce ``x`` to a finite 2-D float64 array.

    1-D input is treated as a single column.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name}: expected a 2-D array, got shape {arr.shape}")
    if arr.shape[0] < min_rows or arr.shape[1] < 1:
        raise ValueError(f"{name}: empty or too few rows, shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name}: contains NaN or Inf")
    return arr


def make_rng(seed=None) -> np.random.Generator:
    """Return a PCG64 generator; passes an existing Generator through untouched."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def draw_seed(rng: np.random.Generator) -> int:
    """Draw a fresh 63-bit seed so sub-objects can record how to rebuild themselves."""
    return int(rng.integers(0, 2**63 - 1))


def covariance(Z) -> np.ndarray:
    """Sample covariance with the N-1 denominator, exactly symmetric."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[:, None]
    n = Z.shape[0]
    if n < 2:
        raise ValueError("insufficient samples: covariance needs N >= 2")
    Zc = Z - Z.mean(axis=0)
    C = Zc.T @ Zc / (n - 1)
    return 0.5 * (C + C.T)


def inverse_sqrt_psd(C: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root of a positive definite matrix."""
    evals, evecs = np.linalg.eigh(C)
    T = (evecs / np.sqrt(evals)) @ evecs.T
    return 0.5 * (T + T.T)


def whiten(Y, eps: float = 1e-8):
    """ZCA-whiten ``Y``.

    Returns:
        (W, transform, mean) with ``W = (Y - mean) @ transform`` and
        ``transform`` the symmetric inverse square root of ``Cov(Y) + eps*I``.
    """
    Y = as_matrix(Y, "Y")
    n, d = Y.shape
    if n <= d:
        raise ValueError(f"whitening needs N > D, got N={n}, D={d}")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    mean = Y.mean(axis=0)
    C = covariance(Y) + eps * np.eye(d)
    evals = np.linalg.eigvalsh(C)
    scale = max(float(np.max(np.abs(evals))), 1e-300)
    if evals[0] <= 1e-12 * scale:
        if eps == 0:
            raise np.linalg.LinAlgError("rank-deficient input, supply eps")
        raise np.linalg.LinAlgError("regularized covariance is not positive definite")
    transform = inverse_sqrt_psd(C)
    return (Y - mean) @ transform, transform, mean


def apply_whitening(Y, transform: np.ndarray, mean: np.ndarray) -> np.ndarray:
    return (np.asarray(Y, dtype=np.float64) - mean) @ transform


@dataclass
class OptimizerState:
    """First-order optimizer with per-parameter moment buffers.

    ``kind`` is one of ``sgd``, ``adam`` or ``lars``. LARS rescales each
    parameter's gradient by ``eta * ||p|| / ||g||`` before the momentum
    update, which makes the step size insensitive to the loss scale.
    ``lr_scale`` is a multiplier the caller may change between steps to
    implement a schedule.
    """

    kind: str = "sgd"
    lr: float = 0.01
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    eta: float = 1e-3
    lr_scale: float = 1.0
    buffers: dict = field(default_factory=dict)
    steps: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam", "lars"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        for name in ("momentum", "beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {value}")

    def step(self, key, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Return the updated parameters; ``params`` itself is not modified."""
        params = np.asarray(params, dtype=np.float64)
        grad = np.asarray(grad, dtype=np.float64)
        if params.shape != grad.shape:
            raise ValueError(f"shape mismatch: params {params.shape} vs grad {grad.shape}")
        lr = self.lr * self.lr_scale
        t = self.steps.get(key, 0) + 1
        self.steps[key] = t

        if self.kind == "adam":
            m, v = self.buffers.get(key, (np.zeros_like(params), np.zeros_like(params)))
            if m.shape != params.shape:
                raise ValueError(f"moment buffer for {key!r} has shape {m.shape}")
            if self.weight_decay:
                grad = grad + self.weight_decay * params
            m = self.beta1 * m + (1 - self.beta1) * grad
            v = self.beta2 * v + (1 - self.beta2) * grad * grad
            self.buffers[key] = (m, v)
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            return params - lr * m_hat / (np.sqrt(v_hat) + self.adam_eps)

        buf = self.buffers.get(key)
        if buf is None:
            buf = np.zeros_like(params)
        elif buf.shape != params.shape:
            raise ValueError(f"momentum buffer for {key!r} has shape {buf.shape}")
        if self.weight_decay:
            grad = grad + self.weight_decay * params
        if self.kind == "lars":
            p_norm = float(np.linalg.norm(params))
            g_norm = float(np.linalg.norm(grad))
            if p_norm > 0 and g_norm > 0:
                grad = grad * (self.eta * p_norm / g_norm)
        buf = self.momentum * buf + grad
        self.buffers[key] = buf
        return params - lr * buf


def optimizer_step(state: OptimizerState, params, grad, key="params") -> np.ndarray:
    return state.step(key, params, grad)


def cosine_factor(step: int, total: int) -> float:
    """Cosine decay multiplier going from 1 at step 0 to 0 at ``total``."""
    if total <= 0:
        return 1.0
    return 0.5 * (1.0 + math.cos(math.pi * min(step, total) / total))
