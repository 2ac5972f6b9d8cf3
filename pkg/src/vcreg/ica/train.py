"""VC-regularized ICA trainers.

Both trainers minimize the variance-covariance loss of a frozen random
projector applied to the recovered sources ``X``; gradients reach the encoder
through :func:`vcreg.projectors.input_grad`. The post-nonlinear trainer adds
a decoder and a reconstruction term.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..kernels import dhsic
from ..losses import scaled_covariance_weight, vc_loss
from ..nets import Sequential, make_channelwise_decoder, make_mlp
from ..numerics import OptimizerState, as_matrix, cosine_factor, make_rng
from ..projectors import forward, identity_projector, input_grad, make_random_linear, make_random_mlp, resample
from .metrics import max_correlation

_PROJECTORS = ("mlp", "linear", "identity")


@dataclass
class IcaRunConfig:
    """Hyper-parameters of one ICA training run.

    ``lr`` is the base learning rate; the optimizer uses
    ``lr * batch_size / 256``. The default suits the linear model; the
    command line uses 10 for the post-nonlinear one. ``layers`` hidden layers
    of size ``width`` followed by ReLU form the projector (``projector="mlp"``).
    ``reconstruction_weight`` only affects the post-nonlinear model.
    """

    encoder: str = "linear"
    projector: str = "mlp"
    width: int = 1024
    layers: int = 1
    with_bn: bool = True
    resample_every_step: bool = True
    variance_weight: float = 100.0
    covariance_weight: float = 1.0
    reconstruction_weight: float = 1e4
    scale_covariance: bool = False
    optimizer: str = "lars"
    lr: float = 100.0
    momentum: float = 0.9
    weight_decay: float = 1e-6
    lars_eta: float = 1e-3
    schedule: str = "cosine"
    batch_size: int = 64
    epochs: int = 100
    seed: int = 0
    selection: str = "dhsic"
    eval_samples: int = 500
    encoder_width: int = 128
    encoder_layers: int = 3
    encoder_activation: str = "relu"
    encoder_init: str = "scaled"
    decoder_hidden: int = 16
    decoder_depth: int = 3
    freeze_encoder: bool = False

    def __post_init__(self):
        if self.encoder not in ("linear", "mlp"):
            raise ValueError(f"unknown encoder {self.encoder!r}")
        if self.projector not in _PROJECTORS:
            raise ValueError(f"unknown projector {self.projector!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2")
        if self.width < 1 or self.layers < 1:
            raise ValueError("projector width and layers must be positive")
        if self.encoder_layers < 1:
            raise ValueError("encoder needs at least one layer")
        if self.encoder_init not in ("uniform", "scaled"):
            raise ValueError(f"unknown encoder init {self.encoder_init!r}")
        if self.selection not in ("last", "dhsic"):
            raise ValueError(f"unknown selection rule {self.selection!r}")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        for name in ("variance_weight", "covariance_weight", "reconstruction_weight", "lr"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be finite and non-negative")
        if self.lr == 0:
            raise ValueError("lr must be positive")

    @property
    def effective_lr(self) -> float:
        return self.lr * self.batch_size / 256.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainingHistory:
    """Per-step losses, per-epoch evaluations and the selected checkpoint.

    Epoch 0 is the initialization; ``selected`` is an epoch index.
    """

    steps: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    selected: Optional[int] = None
    params: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def selected_record(self) -> dict:
        return next(r for r in self.epochs if r["epoch"] == self.selected)


class IcaDivergenceError(FloatingPointError):
    """Raised when the loss or parameters stop being finite.

    ``state`` holds the last finite parameters and ``history`` the records so far.
    """

    def __init__(self, message, state, history):
        super().__init__(message)
        self.state = state
        self.history = history


class _LinearModel:
    def __init__(self, D: int):
        self.M = np.eye(D)

    def state(self) -> dict:
        return {"M": self.M.copy()}

    def load(self, state):
        self.M = np.array(state["M"], dtype=np.float64)

    def trainable(self) -> dict:
        return {"M": self.M}

    def set(self, key, value):
        self.M = value

    def encode(self, Y):
        return Y @ self.M

    def loss_and_grads(self, Yb, projector, bn_rng, cfg, alpha):
        X = Yb @ self.M
        Z, tape = forward(projector, X, bn_rng)
        lv = vc_loss(Z, alpha=alpha, variance_weight=cfg.variance_weight)
        dX = input_grad(projector, tape, lv.grad)
        return lv.total, dict(lv.terms), {"M": Yb.T @ dX}


class _PnlModel:
    def __init__(self, D: int, cfg: IcaRunConfig, rng):
        sizes = [D] + [cfg.encoder_width] * (cfg.encoder_layers - 1) + [D]
        self.encoder = make_mlp(sizes, activation=cfg.encoder_activation, rng=rng, init=cfg.encoder_init)
        self.decoder = make_channelwise_decoder(D, hidden=cfg.decoder_hidden, depth=cfg.decoder_depth, rng=rng)
        self.freeze_encoder = cfg.freeze_encoder

    def state(self) -> dict:
        out = {f"encoder.{k}": v for k, v in self.encoder.state().items()}
        out.update({f"decoder.{k}": v for k, v in self.decoder.state().items()})
        return out

    def load(self, state):
        for key, value in state.items():
            self.set(key, np.array(value, dtype=np.float64))

    def trainable(self) -> dict:
        out = {} if self.freeze_encoder else {f"encoder.{k}": v for k, v in self.encoder.params.items()}
        out.update({f"decoder.{k}": v for k, v in self.decoder.params.items()})
        return out

    def set(self, key, value):
        net, name = key.split(".", 1)
        (self.encoder if net == "encoder" else self.decoder).set_param(name, value)

    def encode(self, Y):
        return self.encoder(Y)

    def loss_and_grads(self, Yb, projector, bn_rng, cfg, alpha):
        X, enc_caches = self.encoder.forward(Yb)
        Z, tape = forward(projector, X, bn_rng)
        lv = vc_loss(Z, alpha=alpha, variance_weight=cfg.variance_weight)
        Y_hat, dec_caches = self.decoder.forward(X)
        resid = Y_hat - Yb
        rec = float(np.mean(resid * resid))
        lam = cfg.reconstruction_weight
        dX_dec, dec_grads = self.decoder.backward(dec_caches, lam * 2.0 * resid / resid.size)
        grads = {f"decoder.{k}": v for k, v in dec_grads.items()}
        if not self.freeze_encoder:
            dX = input_grad(projector, tape, lv.grad) + dX_dec
            _, enc_grads = self.encoder.backward(enc_caches, dX)
            grads.update({f"encoder.{k}": v for k, v in enc_grads.items()})
        terms = dict(lv.terms)
        terms["reconstruction"] = rec
        return lv.total + lam * rec, terms, grads


def _make_projector(D: int, cfg: IcaRunConfig, rng):
    if cfg.projector == "identity":
        return identity_projector(D)
    if cfg.projector == "linear":
        return make_random_linear(D, cfg.width, rng)
    return make_random_mlp(D, [cfg.width] * cfg.layers, None, rng, with_bn=cfg.with_bn)


def _train(model, Y, cfg: IcaRunConfig, S_true, signal, streams):
    n, D = Y.shape
    if cfg.batch_size > n:
        raise ValueError(f"batch size {cfg.batch_size} exceeds the {n} available samples")
    order_rng, proj_rng, bn_rng, eval_rng = streams
    projector = _make_projector(D, cfg, proj_rng)
    width = projector.output_dim
    alpha = scaled_covariance_weight(cfg.covariance_weight, width) if cfg.scale_covariance else cfg.covariance_weight
    opt = OptimizerState(kind=cfg.optimizer, lr=cfg.effective_lr, momentum=cfg.momentum,
                         weight_decay=cfg.weight_decay, eta=cfg.lars_eta)
    eval_idx = np.sort(eval_rng.choice(n, size=min(cfg.eval_samples, n), replace=False))
    if len(eval_idx) < 2 * D:
        raise ValueError(f"need at least {2 * D} samples to evaluate dHSIC")
    history = TrainingHistory()
    best = {"dhsic": np.inf, "epoch": None, "state": None}

    def evaluate(epoch):
        X_eval = model.encode(Y[eval_idx])
        record = {"epoch": epoch, "dhsic": _safe_dhsic(X_eval)}
        if S_true is not None:
            record["max_correlation"] = max_correlation(S_true, model.encode(Y), signal)
        history.epochs.append(record)
        if cfg.selection == "last" or record["dhsic"] < best["dhsic"]:
            best.update(dhsic=record["dhsic"], epoch=epoch, state=model.state())

    evaluate(0)
    per_epoch = n // cfg.batch_size
    total_steps = cfg.epochs * per_epoch
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        perm = order_rng.permutation(n)
        for b in range(per_epoch):
            if cfg.resample_every_step:
                projector = resample(projector, proj_rng)
            Yb = Y[perm[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            last_state = model.state()
            with np.errstate(over="ignore", invalid="ignore"):
                total, terms, grads = model.loss_and_grads(Yb, projector, bn_rng, cfg, alpha)
            if not np.isfinite(total) or not all(np.isfinite(g).all() for g in grads.values()):
                history.params = last_state
                raise IcaDivergenceError(f"loss diverged at step {step}", last_state, history)
            if cfg.schedule == "cosine":
                opt.lr_scale = cosine_factor(step, total_steps)
            current = model.trainable()
            for key, g in grads.items():
                model.set(key, opt.step(key, current[key], g))
            if not all(np.isfinite(v).all() for v in model.trainable().values()):
                history.params = last_state
                raise IcaDivergenceError(f"parameters diverged at step {step}", last_state, history)
            history.steps.append({"step": step, "epoch": epoch, "loss": float(total),
                                  **{k: float(v) for k, v in terms.items()}})
            step += 1
        evaluate(epoch)

    model.load(best["state"])
    history.selected = best["epoch"]
    history.params = best["state"]
    return history


def _safe_dhsic(X: np.ndarray) -> float:
    # the kernel is not scale invariant, so compare checkpoints on standardized channels;
    # collapsed or exploded channels break the bandwidth and count as maximally dependent
    try:
        with np.errstate(all="raise"):
            X = (X - X.mean(axis=0)) / X.std(axis=0)
        return float(dhsic(X))
    except (ValueError, OverflowError, FloatingPointError):
        return float("inf")


def _streams(seed: int, count: int):
    return [make_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def _check_truth(Y, S_true, signal):
    if S_true is None:
        return None, None
    S_true = as_matrix(S_true, "S_true")
    if S_true.shape[0] != Y.shape[0]:
        raise ValueError("ground truth and data need the same number of rows")
    return S_true, signal


def train_linear_ica(Y, cfg: IcaRunConfig, S_true=None, signal: Optional[Sequence[int]] = None):
    """Learn a square unmixing matrix M (initialized at identity) for whitened ``Y``.

    Each step draws a batch, maps it through ``X = Y_batch @ M`` and the
    frozen projector, and takes an optimizer step on the VC loss. When
    ``S_true`` is given the per-epoch records include the max correlation.

    Returns:
        (M, history) with M the selected checkpoint.

    Raises:
        IcaDivergenceError: on a non-finite loss or parameter.
    """
    if cfg.encoder != "linear":
        raise ValueError("train_linear_ica needs encoder='linear'")
    Y = as_matrix(Y, "Y", min_rows=2)
    if Y.shape[1] < 2:
        raise ValueError("need at least 2 data channels")
    S_true, signal = _check_truth(Y, S_true, signal)
    model = _LinearModel(Y.shape[1])
    history = _train(model, Y, cfg, S_true, signal, _streams(cfg.seed, 4))
    return model.M, history


def train_pnl_ica(Y, cfg: IcaRunConfig, S_true=None, signal: Optional[Sequence[int]] = None):
    """Train an MLP encoder and an elementwise-nonlinearity decoder on post-nonlinear mixtures.

    The loss is the VC loss of the projected encoder output plus
    ``cfg.reconstruction_weight`` times the mean squared reconstruction error
    of the decoder. ``cfg.freeze_encoder`` trains the decoder alone.

    Returns:
        (encoder, history); ``history.extras["decoder"]`` is the trained decoder.
    """
    if cfg.encoder != "mlp":
        raise ValueError("train_pnl_ica needs encoder='mlp'")
    Y = as_matrix(Y, "Y", min_rows=2)
    if Y.shape[1] < 2:
        raise ValueError("need at least 2 data channels")
    S_true, signal = _check_truth(Y, S_true, signal)
    init_rng, *streams = _streams(cfg.seed, 5)
    model = _PnlModel(Y.shape[1], cfg, init_rng)
    history = _train(model, Y, cfg, S_true, signal, streams)
    history.extras["decoder"] = model.decoder
    return model.encoder, history


def recover(encoder, Y) -> np.ndarray:
    """Apply a trained encoder (matrix or network) to data."""
    if isinstance(encoder, Sequential):
        return encoder(np.asarray(Y, dtype=np.float64))
    return np.asarray(Y, dtype=np.float64) @ encoder
