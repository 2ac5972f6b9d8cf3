"""Synthetic sources and linear / post-nonlinear mixtures."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics import as_matrix, draw_seed, make_rng

SIGNAL = "signal"
NOISE = "noise"

# base frequencies in cycles per sample; each draw jitters them by +-10%
_BASE_FREQ = {
    "sinusoid": 1 / 50,
    "am_sinusoid": 1 / 17,
    "am_envelope": 1 / 310,
    "sawtooth": 1 / 73,
    "square": 1 / 131,
}


@dataclass
class SourceSet:
    S: np.ndarray
    tags: list
    generators: list
    seed: int

    @property
    def signal_columns(self) -> list:
        return [i for i, t in enumerate(self.tags) if t == SIGNAL]


def generate_synthetic_sources(N: int, rng=None) -> SourceSet:
    """Four deterministic non-Gaussian signals plus two Gaussian noise channels.

    Every column is standardized to zero mean and unit variance.
    """
    if N < 1000:
        raise ValueError("need at least 1000 samples")
    seed = rng if isinstance(rng, (int, np.integer)) else draw_seed(make_rng(rng))
    r = make_rng(int(seed))
    t = np.arange(N, dtype=np.float64)
    freq = {k: v * r.uniform(0.9, 1.1) for k, v in _BASE_FREQ.items()}
    phase = {k: r.uniform(0.0, 2 * np.pi) for k in _BASE_FREQ}

    def wave(k):
        return 2 * np.pi * freq[k] * t + phase[k]

    cols = [
        np.sin(wave("sinusoid")),
        np.sin(wave("am_envelope")) * np.sin(wave("am_sinusoid")),
        2.0 * np.mod(freq["sawtooth"] * t + phase["sawtooth"] / (2 * np.pi), 1.0) - 1.0,
        np.sign(np.sin(wave("square"))),
        r.standard_normal(N),
        r.standard_normal(N),
    ]
    S = np.column_stack(cols)
    S = S - S.mean(axis=0)
    S = S / S.std(axis=0)
    # second pass removes the rounding left by the first
    S = (S - S.mean(axis=0)) / S.std(axis=0)
    generators = [
        {"kind": "sinusoid", "freq": freq["sinusoid"], "phase": phase["sinusoid"]},
        {"kind": "am_sinusoid", "freq": freq["am_sinusoid"], "phase": phase["am_sinusoid"],
         "envelope_freq": freq["am_envelope"], "envelope_phase": phase["am_envelope"]},
        {"kind": "sawtooth", "freq": freq["sawtooth"], "phase": phase["sawtooth"]},
        {"kind": "square", "freq": freq["square"], "phase": phase["square"]},
        {"kind": "gaussian_noise"},
        {"kind": "gaussian_noise"},
    ]
    return SourceSet(S=S, tags=[SIGNAL] * 4 + [NOISE] * 2, generators=generators, seed=int(seed))


def random_mixing_matrix(D: int, rng=None, max_condition: float = 100.0, max_draws: int = 100) -> np.ndarray:
    """Standard normal D x D matrix, redrawn until its condition number is below ``max_condition``."""
    rng = make_rng(rng)
    for _ in range(max_draws):
        A = rng.standard_normal((D, D))
        if np.linalg.cond(A) < max_condition:
            return A
    raise np.linalg.LinAlgError(f"no mixing matrix with condition < {max_condition} in {max_draws} draws")


def mix_linear(S, A=None, rng=None):
    """Return ``(S @ A, A)``; ``A`` is drawn with :func:`random_mixing_matrix` when omitted."""
    S = as_matrix(S, "S")
    if A is None:
        A = random_mixing_matrix(S.shape[1], rng)
    A = as_matrix(A, "A")
    if A.shape != (S.shape[1], S.shape[1]):
        raise ValueError(f"mixing matrix must be {S.shape[1]}x{S.shape[1]}, got {A.shape}")
    if np.linalg.cond(A) >= 1e6:
        raise np.linalg.LinAlgError("mixing matrix is not invertible (condition >= 1e6)")
    return S @ A, A


# strictly increasing for positive parameters
PNL_CATALOG = {
    "identity": (lambda x, a: x, lambda a: True),
    "tanh": (lambda x, a: np.tanh(a * x), lambda a: a > 0),
    "cubic": (lambda x, b: x + b * x**3, lambda b: b >= 0),
    "sinh": (lambda x, c: np.sinh(c * x), lambda c: c > 0),
}

DEFAULT_PNL = (("tanh", 0.5), ("cubic", 0.1), ("sinh", 0.5))


@dataclass
class MixingSpec:
    kind: str
    A: np.ndarray
    nonlinearities: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "A": self.A.tolist(),
                "nonlinearities": [list(nl) for nl in self.nonlinearities]}


def make_pnl_mixing(D: int, rng=None, catalog=DEFAULT_PNL) -> MixingSpec:
    """Random mixing with unit-norm columns followed by catalog nonlinearities assigned cyclically."""
    A = random_mixing_matrix(D, rng)
    A = A / np.linalg.norm(A, axis=0)
    nonlinearities = [tuple(catalog[k % len(catalog)]) for k in range(D)]
    return MixingSpec(kind="pnl", A=A, nonlinearities=nonlinearities)


def apply_nonlinearity(u: np.ndarray, name: str, param: float) -> np.ndarray:
    if name not in PNL_CATALOG:
        raise ValueError(f"unknown nonlinearity {name!r}")
    fn, monotone = PNL_CATALOG[name]
    if not monotone(param):
        raise ValueError(f"non-monotone catalog entry: {name}({param})")
    return fn(u, param)


def mix_pnl(S, spec: MixingSpec) -> np.ndarray:
    """Y[:, k] = f_k((S A)[:, k])."""
    if spec.kind != "pnl":
        raise ValueError("mix_pnl needs a spec of kind 'pnl'")
    U, _ = mix_linear(S, spec.A)
    if len(spec.nonlinearities) != U.shape[1]:
        raise ValueError("need one nonlinearity per channel")
    return np.column_stack([apply_nonlinearity(U[:, k], name, param)
                            for k, (name, param) in enumerate(spec.nonlinearities)])
