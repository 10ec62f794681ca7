"""Reconstruction cost, ADAM, and the mini-batch training loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .meud import ModelParams, backward, forward
from .numerics import ShapeError, as_matrix

log = logging.getLogger(__name__)


class NonFiniteError(FloatingPointError):
    """Training produced NaN/Inf; ``epoch`` and ``batch`` locate it (1-based)."""

    def __init__(self, epoch, batch, what="loss"):
        super().__init__(f"non-finite {what} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


def mse_cost(X, Xhat):
    """``sum((X - Xhat)**2) / (2*m*n)``."""
    X = as_matrix(X, "X")
    Xhat = as_matrix(Xhat, "Xhat")
    if X.shape != Xhat.shape:
        raise ShapeError(f"X {X.shape} and Xhat {Xhat.shape} differ")
    m, n = X.shape
    return float(np.sum((X - Xhat) ** 2) / (2 * m * n))


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    learning_rate: float = 1e-3

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.epsilon <= 0 or self.learning_rate <= 0:
            raise ValueError("epsilon and learning_rate must be positive")

    @classmethod
    def for_params(cls, params, **kw):
        arrays = _flat(params)
        return cls([np.zeros_like(a) for a in arrays],
                   [np.zeros_like(a) for a in arrays], **kw)


def _flat(params):
    return params.arrays() if isinstance(params, ModelParams) else list(params)


def adam_step(state, params, grads):
    """One bias-corrected ADAM update.

    ``params`` and ``grads`` are either :class:`ModelParams` or matching
    lists of arrays. Returns ``(state, new_params)``; ``state`` is advanced
    in place and new parameter arrays are allocated.
    """
    p_arr, g_arr = _flat(params), _flat(grads)
    if len(p_arr) != len(g_arr) or len(p_arr) != len(state.first_moment):
        raise ShapeError("parameter, gradient and moment lists differ in length")
    for p, g, m in zip(p_arr, g_arr, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    new = []
    for i, (p, g) in enumerate(zip(p_arr, g_arr)):
        m = b1 * state.first_moment[i] + (1.0 - b1) * g
        v = b2 * state.second_moment[i] + (1.0 - b2) * g * g
        state.first_moment[i] = m
        state.second_moment[i] = v
        new.append(p - state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon))
    if isinstance(params, ModelParams):
        return state, params.with_arrays(new)
    return state, new


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    params: ModelParams | None = None
    steps: int = 0

    def csv_rows(self):
        return [(i + 1, loss, sec) for i, (loss, sec) in enumerate(zip(self.losses, self.seconds))]


def train(params, training, cfg, on_epoch=None):
    """Fit ``params`` to reconstruct every row of ``training``.

    ``training`` may be an :class:`~fcblearn.datasets.EncodedMatrix` or a
    plain matrix. Each epoch's loss is the row-weighted mean of the
    per-batch costs evaluated before each update. ``on_epoch(epoch, loss,
    seconds)`` is called after every epoch if given.
    """
    data = as_matrix(getattr(training, "data", training), "training data")
    if data.shape[1] != params.config.widths[0]:
        raise ShapeError(f"training data has {data.shape[1]} features, "
                         f"network expects {params.config.widths[0]}")
    m = data.shape[0]
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.for_params(params, learning_rate=cfg.learning_rate)
    params = params.copy()
    report = TrainReport()
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(m) if cfg.shuffle else np.arange(m)
        total = 0.0
        for b, start in enumerate(range(0, m, cfg.batch_size), start=1):
            xb = data[order[start:start + cfg.batch_size]]
            cache = forward(params, xb)
            loss = mse_cost(xb, cache.post[-1])
            if not np.isfinite(loss):
                raise NonFiniteError(epoch, b)
            grads = backward(params, cache, xb)
            state, params = adam_step(state, params, grads)
            if not params.all_finite():
                raise NonFiniteError(epoch, b, "parameters")
            total += loss * xb.shape[0]
            report.steps += 1
        report.losses.append(total / m)
        report.seconds.append(time.perf_counter() - t0)
        log.debug("epoch %d loss %.6g", epoch, report.losses[-1])
        if on_epoch is not None:
            on_epoch(epoch, report.losses[-1], report.seconds[-1])
    report.params = params
    return report
