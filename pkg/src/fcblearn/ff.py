"""Shallow Forward-Forward layers and greedy stack pre-training.

Each shallow model is a single bias-free ReLU layer. It is trained so that
the goodness (sum of squared activations) of positive rows rises above a
threshold ``theta`` and that of negative rows falls below it, using the
smooth margin loss ``softplus(theta - g)`` / ``softplus(g - theta)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .numerics import ShapeError, as_matrix, randn_matrix, sigmoid, softplus
from .training import AdamState, adam_step

log = logging.getLogger(__name__)

NORM_EPS = 1e-8


@dataclass(frozen=True)
class FFLayerConfig:
    theta: float = 2.0
    epochs: int = 10
    learning_rate: float = 1e-3
    batch_size: int = 64
    optimizer: str = "adam"
    normalize: bool = False
    init_std: float = 0.1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")


@dataclass
class FFLayer:
    weights: np.ndarray
    config: FFLayerConfig

    def __post_init__(self):
        self.weights = as_matrix(self.weights, "weights")
        if not np.isfinite(self.weights).all():
            raise ValueError("FF weights must be finite")

    def hidden(self, x):
        return np.maximum(as_matrix(x) @ self.weights, 0.0)


def goodness(hidden):
    """Per-row sum of squares."""
    hidden = as_matrix(hidden, "hidden")
    return np.einsum("ij,ij->i", hidden, hidden)


def p_positive(g, theta):
    return sigmoid(np.asarray(g, dtype=np.float64) - theta)


def layer_normalize(hidden):
    hidden = as_matrix(hidden, "hidden")
    norms = np.sqrt(np.einsum("ij,ij->i", hidden, hidden))
    return hidden / (norms + NORM_EPS)[:, None]


def ff_loss_and_grad(weights, batch, positive, theta):
    """Mean margin loss over the rows of ``batch`` and its weight gradient."""
    batch = as_matrix(batch, "batch")
    if batch.shape[1] != weights.shape[0]:
        raise ShapeError(f"batch {batch.shape} does not match weights {weights.shape}")
    positive = np.asarray(positive, dtype=bool)
    m = batch.shape[0]
    h = np.maximum(batch @ weights, 0.0)
    g = np.einsum("ij,ij->i", h, h)
    sign = np.where(positive, 1.0, -1.0)
    # positive: softplus(theta - g); negative: softplus(g - theta)
    loss = float(np.mean(softplus(sign * (theta - g))))
    dg = (p_positive(g, theta) - positive) / m
    # relu'(z) * 2h == 2h since h is zero wherever z <= 0
    grad = batch.T @ (2.0 * h * dg[:, None])
    return loss, grad


def ff_layer_step(layer, batch, positive, state=None):
    """One update of ``layer``; returns ``(weights, loss)``.

    ``loss`` is evaluated before the update. With an :class:`AdamState` the
    step is ADAM (the state advances in place), otherwise plain SGD at
    ``layer.config.learning_rate``.
    """
    loss, grad = ff_loss_and_grad(layer.weights, batch, positive, layer.config.theta)
    if state is None:
        weights = layer.weights - layer.config.learning_rate * grad
    else:
        _, (weights,) = adam_step(state, [layer.weights], [grad])
    return weights, loss


def train_ff_layer(x, positive, fan_out, cfg, seed=0):
    """Train one shallow FF layer on ``x`` from a Normal(0, init_std) start."""
    x = as_matrix(x, "x")
    positive = np.asarray(positive, dtype=bool)
    rng = np.random.default_rng(seed)
    layer = FFLayer(randn_matrix(x.shape[1], fan_out, 0.0, cfg.init_std,
                                 int(rng.integers(2**63 - 1))), cfg)
    state = None
    if cfg.optimizer == "adam":
        state = AdamState.for_params([layer.weights], learning_rate=cfg.learning_rate)
    m = x.shape[0]
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(m)
        total = 0.0
        for start in range(0, m, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            layer.weights, loss = ff_layer_step(layer, x[idx], positive[idx], state)
            total += loss * idx.size
        history.append(total / m)
        if not np.isfinite(history[-1]):
            raise FloatingPointError(f"FF loss became non-finite at epoch {len(history)}")
    return layer, history


def pretrain_stack(training, widths, cfg, seed=0, log_fn=None):
    """Greedily train one shallow FF model per consecutive pair in ``widths``.

    The input of model ``k+1`` is ``relu(Y_k @ W_k)`` computed with the
    freshly trained ``W_k`` (row-normalised first when ``cfg.normalize``).
    Returns the trained weight matrices in order. ``log_fn(layer, epoch,
    loss)`` receives each epoch's mean loss.
    """
    x = as_matrix(getattr(training, "data", training), "training data")
    positive = np.asarray(training.polarity, dtype=bool)
    widths = [int(w) for w in widths]
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ShapeError(f"invalid FF widths {widths}")
    if widths[0] != x.shape[1]:
        raise ShapeError(f"widths[0]={widths[0]} but training data has {x.shape[1]} columns")
    seeds = np.random.SeedSequence(seed).spawn(len(widths) - 1)
    trained = []
    for k, fan_out in enumerate(widths[1:]):
        layer, history = train_ff_layer(x, positive, fan_out, cfg,
                                        seed=int(seeds[k].generate_state(1)[0]))
        for epoch, loss in enumerate(history, start=1):
            log.debug("ff layer %d epoch %d loss %.6g", k, epoch, loss)
            if log_fn is not None:
                log_fn(k, epoch, loss)
        trained.append(layer.weights)
        x = layer.hidden(x)
        if cfg.normalize:
            x = layer_normalize(x)
    return trained
