"""Dense matrix helpers shared by every other module.

Matrices are plain float64 ``numpy.ndarray`` objects with samples as rows.
"""

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are not conformable."""


ACTIVATIONS = ("identity", "relu", "sigmoid", "relu_grad", "sigmoid_grad")


def as_matrix(a, name="matrix"):
    """Return ``a`` as a 2-D float64 array, raising ShapeError otherwise."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matmul(a, b):
    a = as_matrix(a, "A")
    b = as_matrix(b, "B")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


_SIG_LO = np.finfo(np.float64).tiny
_SIG_HI = np.nextafter(1.0, 0.0)


def sigmoid(x):
    # split by sign so neither branch can overflow exp
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    # saturated values would otherwise round to exactly 0 or 1
    return np.clip(out, _SIG_LO, _SIG_HI)


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def activate(m, kind):
    """Apply an elementwise activation or its derivative.

    ``relu_grad`` and ``sigmoid_grad`` take the *pre-activation* and return
    the derivative evaluated there. The ReLU derivative at 0 is taken as 0.
    """
    m = np.asarray(m, dtype=np.float64)
    if kind == "identity":
        return m.copy()
    if kind == "relu":
        return np.maximum(m, 0.0)
    if kind == "sigmoid":
        return sigmoid(m)
    if kind == "relu_grad":
        return (m > 0).astype(np.float64)
    if kind == "sigmoid_grad":
        s = sigmoid(m)
        return s * (1.0 - s)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def randn_matrix(rows, cols, mean=0.0, std=0.1, seed=0):
    """Draw a ``rows x cols`` matrix from Normal(mean, std).

    Uses numpy's PCG64 generator, so the same arguments always give the
    same bytes.
    """
    if std < 0:
        raise ValueError(f"std must be non-negative, got {std}")
    rng = np.random.default_rng(seed)
    return rng.normal(mean, std, size=(rows, cols))
