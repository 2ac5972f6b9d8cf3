"""Frozen random projectors with forward evaluation and input gradients.

A :class:`Projector` is an immutable chain of layers. ``forward`` returns the
embedding together with a :class:`Tape` holding what ``input_grad`` needs to
backpropagate a gradient from the embedding to the projector input. Batch
norm statistics are sampled per forward pass and treated as constants in the
backward pass.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .numerics import as_matrix, draw_seed, make_rng

_ids = itertools.count()


@dataclass(frozen=True)
class Linear:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: Optional[np.ndarray] = None


@dataclass(frozen=True)
class RandomizedBnParams:
    """Per-feature hyper-distributions of a randomized batch norm.

    The centering statistic is drawn from Normal(loc, scale); the scaling
    statistic from a Gamma with mean ``std_mean`` and variance ``std_var``
    (shape mean^2/var, rate mean/var). ``std_var == 0`` pins the scaling
    statistic to ``std_mean``.
    """

    loc: np.ndarray
    scale: np.ndarray
    std_mean: np.ndarray
    std_var: np.ndarray
    weight: float = 1.0
    bias: float = 0.0
    eps: float = 1e-5

    def __post_init__(self):
        if np.any(self.std_mean <= 0):
            raise ValueError("invalid Gamma parameters: std mean must be positive")
        if np.any(self.std_var < 0) or np.any(self.scale < 0):
            raise ValueError("invalid Gamma parameters: variances must be non-negative")

    @classmethod
    def default(cls, features: int, loc=0.0, scale=1.0, std_mean=1.0, std_var=0.25, eps=1e-5):
        full = lambda v: np.full(features, float(v))  # noqa: E731
        return cls(full(loc), full(scale), full(std_mean), full(std_var), eps=eps)

    @property
    def features(self) -> int:
        return self.loc.shape[0]


@dataclass(frozen=True)
class RandomizedBn:
    params: RandomizedBnParams


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class Projector:
    layers: tuple
    input_dim: int
    output_dim: int
    seed: int
    recipe: tuple
    trainable: bool = False
    uid: int = field(default_factory=lambda: next(_ids), compare=False)

    def describe(self) -> dict:
        """Serializable description for run manifests."""
        kind, kwargs = self.recipe
        return {"kind": kind, **kwargs, "seed": self.seed,
                "input_dim": self.input_dim, "output_dim": self.output_dim}


@dataclass
class Tape:
    projector_uid: int
    inputs: list
    bn_inv_std: dict

    def matches(self, p: Projector) -> bool:
        return self.projector_uid == p.uid


def uniform_weights(fan_in: int, fan_out: int, rng) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _seeded(rng):
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    return draw_seed(make_rng(rng))


def make_random_linear(D: int, P: int, rng=None) -> Projector:
    """Single bias-free linear layer with weights i.i.d. U(-1/sqrt(D), 1/sqrt(D))."""
    if D < 1 or P < 1:
        raise ValueError("dimensions must be positive")
    seed = _seeded(rng)
    W = uniform_weights(D, P, make_rng(seed))
    return Projector(layers=(Linear(W),), input_dim=D, output_dim=P, seed=seed,
                     recipe=("random_linear", {"D": D, "P": P}))


def make_elementwise_random_feature(D: int, L: int, rng=None, bn: Optional[dict] = None) -> Projector:
    """Map each input feature through L (randomized BN -> ReLU) channels.

    Output column ``i * L + l`` is channel ``l`` of input feature ``i``.
    ``bn`` overrides the hyper-distribution defaults of
    :meth:`RandomizedBnParams.default`.
    """
    if D < 1 or L < 1:
        raise ValueError("D and L must be positive")
    seed = _seeded(rng)
    expand = np.kron(np.eye(D), np.ones((1, L)))
    params = RandomizedBnParams.default(D * L, **(bn or {}))
    layers = (Linear(expand), RandomizedBn(params), Relu())
    return Projector(layers=layers, input_dim=D, output_dim=D * L, seed=seed,
                     recipe=("elementwise", {"D": D, "L": L, "bn": dict(bn or {})}))


def make_random_mlp(D: int, widths, P: Optional[int] = None, rng=None, with_bn: bool = False,
                    bn: Optional[dict] = None) -> Projector:
    """Random MLP: (linear -> [randomized BN] -> ReLU) per hidden width, then linear to P.

    With ``P=None`` the network ends on the last ReLU, i.e. a fully connected
    layer followed by a ReLU when ``widths`` has a single entry.
    """
    widths = [int(w) for w in widths]
    if not widths:
        raise ValueError("widths must be non-empty")
    seed = _seeded(rng)
    r = make_rng(seed)
    layers = []
    fan_in = D
    for w in widths:
        layers.append(Linear(uniform_weights(fan_in, w, r)))
        if with_bn:
            layers.append(RandomizedBn(RandomizedBnParams.default(w, **(bn or {}))))
        layers.append(Relu())
        fan_in = w
    if P is not None:
        layers.append(Linear(uniform_weights(fan_in, P, r)))
    return Projector(layers=tuple(layers), input_dim=D, output_dim=P if P is not None else fan_in,
                     seed=seed, recipe=("random_mlp", {"D": D, "widths": widths, "P": P,
                                                       "with_bn": with_bn, "bn": dict(bn or {})}))


def randomized_bn_forward(x, params: RandomizedBnParams, rng=None):
    """Normalize each feature with a freshly sampled mean and standard deviation.

    Returns ``(output, inv_std)`` where ``inv_std`` is the per-feature factor
    d output / d x.
    """
    x = np.asarray(x, dtype=np.float64)
    rng = make_rng(rng)
    m = params.loc + params.scale * rng.standard_normal(params.features)
    var = params.std_var
    safe_var = np.where(var > 0, var, 1.0)
    shape = params.std_mean**2 / safe_var
    rate = params.std_mean / safe_var
    s = np.where(var > 0, rng.gamma(shape, 1.0 / rate), params.std_mean)
    inv_std = params.weight / np.sqrt(s * s + params.eps)
    return (x - m) * inv_std + params.bias, inv_std


def forward(p: Projector, X, rng=None):
    """Evaluate the projector on X (N x D); returns ``(Z, tape)``.

    ``rng`` drives the batch-norm draws; when omitted a generator seeded from
    the projector seed is used, so repeated calls are identical.
    """
    X = as_matrix(X, "X")
    if X.shape[1] != p.input_dim:
        raise ValueError(f"projector expects {p.input_dim} columns, got {X.shape[1]}")
    bn_rng = make_rng(rng) if rng is not None else make_rng(p.seed + 1)
    h = X
    inputs, inv_std = [], {}
    for idx, layer in enumerate(p.layers):
        inputs.append(h)
        if isinstance(layer, Linear):
            h = h @ layer.weight
            if layer.bias is not None:
                h = h + layer.bias
        elif isinstance(layer, RandomizedBn):
            h, inv_std[idx] = randomized_bn_forward(h, layer.params, bn_rng)
        elif isinstance(layer, Relu):
            h = np.maximum(h, 0.0)
        else:
            raise TypeError(f"unknown layer {layer!r}")
    return h, Tape(projector_uid=p.uid, inputs=inputs, bn_inv_std=inv_std)


def input_grad(p: Projector, tape: Tape, dL_dZ) -> np.ndarray:
    """Backpropagate dL/dZ to dL/dX through the frozen layers."""
    if not tape.matches(p):
        raise ValueError("stale tape: it was recorded for a different projector")
    g = np.asarray(dL_dZ, dtype=np.float64)
    n = tape.inputs[0].shape[0]
    if g.shape != (n, p.output_dim):
        raise ValueError(f"gradient shape {g.shape} does not match output ({n}, {p.output_dim})")
    for idx in range(len(p.layers) - 1, -1, -1):
        layer = p.layers[idx]
        if isinstance(layer, Linear):
            g = g @ layer.weight.T
        elif isinstance(layer, RandomizedBn):
            g = g * tape.bn_inv_std[idx]
        else:
            g = g * (tape.inputs[idx] > 0)
    return g


def resample(p: Projector, rng=None) -> Projector:
    """Fresh draw of every random quantity following the construction recipe of ``p``."""
    kind, kwargs = p.recipe
    if kind == "random_linear":
        return make_random_linear(kwargs["D"], kwargs["P"], rng)
    if kind == "elementwise":
        return make_elementwise_random_feature(kwargs["D"], kwargs["L"], rng, bn=kwargs["bn"])
    if kind == "random_mlp":
        return make_random_mlp(kwargs["D"], kwargs["widths"], kwargs["P"], rng,
                               with_bn=kwargs["with_bn"], bn=kwargs["bn"])
    if kind == "identity":
        return identity_projector(kwargs["D"])
    raise ValueError(f"unknown projector recipe {kind!r}")


def identity_projector(D: int) -> Projector:
    """Single linear layer with W = I (no randomness)."""
    return Projector(layers=(Linear(np.eye(D)),), input_dim=D, output_dim=D, seed=0,
                     recipe=("identity", {"D": D}))
