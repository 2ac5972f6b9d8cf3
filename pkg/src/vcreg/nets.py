"""Small trainable networks with hand-written backward passes.

Used for the post-nonlinear ICA encoder and decoder. Parameters live in a flat
``params`` dict (``"<layer>.<name>" -> ndarray``) so an optimizer can update
them by key.
"""

from __future__ import annotations

import numpy as np

from .numerics import make_rng


class Dense:
    """Affine layer. W is U(+-1/sqrt(fan_in)) when ``gain`` is None and
    Gaussian with standard deviation gain/sqrt(fan_in) otherwise.

    b is always U(+-1/sqrt(fan_in)); a zero bias would give LARS a zero
    trust-ratio reference.
    """

    def __init__(self, fan_in: int, fan_out: int, rng, gain=None):
        bound = 1.0 / np.sqrt(fan_in)
        if gain is None:
            W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        else:
            W = rng.normal(0.0, gain * bound, size=(fan_in, fan_out))
        self.params = {"W": W, "b": rng.uniform(-bound, bound, size=fan_out)}

    def forward(self, x):
        return x @ self.params["W"] + self.params["b"], x

    def backward(self, x, g):
        return g @ self.params["W"].T, {"W": x.T @ g, "b": g.sum(axis=0)}


class ChannelDense:
    """Independent dense maps per channel: (N, C, fan_in) -> (N, C, fan_out)."""

    def __init__(self, channels: int, fan_in: int, fan_out: int, rng):
        bound = 1.0 / np.sqrt(fan_in)
        self.params = {
            "W": rng.uniform(-bound, bound, size=(channels, fan_in, fan_out)),
            "b": rng.uniform(-bound, bound, size=(channels, fan_out)),
        }

    def forward(self, x):
        return np.einsum("nci,cio->nco", x, self.params["W"]) + self.params["b"], x

    def backward(self, x, g):
        return (np.einsum("nco,cio->nci", g, self.params["W"]),
                {"W": np.einsum("nci,nco->cio", x, g), "b": g.sum(axis=0)})


class Activation:
    def __init__(self, kind: str):
        if kind not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {kind!r}")
        self.kind = kind
        self.params = {}

    def forward(self, x):
        if self.kind == "relu":
            return np.maximum(x, 0.0), x
        y = np.tanh(x)
        return y, y

    def backward(self, cache, g):
        if self.kind == "relu":
            return g * (cache > 0), {}
        return g * (1.0 - cache * cache), {}


class Reshape:
    def __init__(self, shape_fn):
        self.shape_fn = shape_fn
        self.params = {}

    def forward(self, x):
        return x.reshape(self.shape_fn(x)), x.shape

    def backward(self, shape, g):
        return g.reshape(shape), {}


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    @property
    def params(self) -> dict:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.params.items()}

    def set_param(self, key: str, value: np.ndarray):
        i, name = key.split(".", 1)
        layer = self.layers[int(i)]
        if layer.params[name].shape != value.shape:
            raise ValueError(f"shape mismatch for {key}")
        layer.params[name] = value

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, caches, g):
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            g, layer_grads = self.layers[i].backward(caches[i], g)
            for k, v in layer_grads.items():
                grads[f"{i}.{k}"] = v
        return g, grads

    def state(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    def load_state(self, state: dict):
        for k, v in state.items():
            self.set_param(k, np.array(v, dtype=np.float64))


_GAINS = {"relu": np.sqrt(2.0), "tanh": 1.0}


def make_mlp(sizes, activation: str = "relu", rng=None, init: str = "uniform") -> Sequential:
    """Dense layers of the given sizes with ``activation`` between them (none after the last).

    ``init="uniform"`` uses U(+-1/sqrt(fan_in)) for weights and biases.
    ``init="scaled"`` draws Gaussian weights sized so that unit-variance
    inputs give roughly unit-variance outputs.
    """
    if init not in ("uniform", "scaled"):
        raise ValueError(f"unknown init {init!r}")
    rng = make_rng(rng)
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        hidden = i < len(sizes) - 2
        gain = None if init == "uniform" else (_GAINS.get(activation, 1.0) if hidden else 1.0)
        layers.append(Dense(a, b, rng, gain))
        if hidden:
            layers.append(Activation(activation))
    return Sequential(layers)


def make_channelwise_decoder(D: int, hidden: int = 16, depth: int = 3, activation: str = "tanh",
                             rng=None) -> Sequential:
    """Per-channel learnable nonlinearity (1 -> hidden x depth -> 1) followed by a dense D -> D layer."""
    rng = make_rng(rng)
    layers = [Reshape(lambda x: (x.shape[0], x.shape[1], 1))]
    sizes = [1] + [hidden] * depth + [1]
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(ChannelDense(D, a, b, rng))
        if i < len(sizes) - 2:
            layers.append(Activation(activation))
    layers.append(Reshape(lambda x: (x.shape[0], x.shape[1])))
    layers.append(Dense(D, D, rng))
    return Sequential(layers)
