"""Multi Encoding Uni Decoding networks and the baseline autoencoder.

A network is a chain of weight matrices with no biases. Layer ``k`` receives
``X[k] = Y[k-1] @ W[k-1]``; the input layer is the identity, the latent
layer is a sigmoid and every other layer is a ReLU. In the cooperation
variants the bottleneck-to-latent weight is a tridiagonal :class:`BandWeights`
instead of a dense matrix.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import ShapeError, activate, as_matrix, randn_matrix

INIT_STD = 0.1
CHECKPOINT_VERSION = 1


class Variant(str, enum.Enum):
    BASELINE_AE = "BaselineAE"
    MEUD = "MEUD"
    MEUD_FF = "MEUD_FF"
    MEUD_COOP = "MEUD_Coop"
    MEUD_FF_COOP = "MEUD_FF_Coop"

    @property
    def uses_ff(self):
        return self in (Variant.MEUD_FF, Variant.MEUD_FF_COOP)

    @property
    def uses_coop(self):
        return self in (Variant.MEUD_COOP, Variant.MEUD_FF_COOP)

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).replace("-", "_").lower()
        for v in cls:
            if v.value.lower() == key or v.name.lower() == key:
                return v
        raise ValueError(f"unknown variant {name!r}")


ALL_VARIANTS = tuple(Variant)


class CheckpointError(ValueError):
    pass


def encoder_widths(n, r, depth=4):
    """Widths ``r_0 .. r_{s-1}`` from ``n`` down to ``r``.

    Hidden widths follow a geometric schedule over ``depth - 1`` steps,
    rounded and forced strictly decreasing.
    """
    if depth < 2:
        raise ValueError("depth must be at least 2")
    if not 0 < r < n:
        raise ValueError(f"need 0 < r < n, got r={r}, n={n}")
    steps = depth - 1
    widths = [n]
    for k in range(1, steps):
        w = int(round(n * (r / n) ** (k / steps)))
        widths.append(min(w, widths[-1] - 1))
    widths.append(r)
    if any(b >= a for a, b in zip(widths, widths[1:])):
        raise ValueError(f"cannot fit {steps} strictly decreasing steps from {n} to {r}")
    return widths


def make_widths(n, r, depth=4, variant=Variant.MEUD):
    """Full layer widths for ``variant``.

    MEUD variants: ``[n, ..., r, r, n]`` (``depth + 2`` layers).
    BaselineAE: the same encoder mirrored back to ``n``, e.g.
    ``[n, h1, h2, r, h2, h1, n]``.
    """
    enc = encoder_widths(n, r, depth)
    if Variant(variant) is Variant.BASELINE_AE:
        return enc + enc[-2::-1]
    return enc + [r, n]


@dataclass(frozen=True)
class NetworkConfig:
    widths: tuple
    variant: Variant = Variant.MEUD
    seed: int = 0
    ff_count: int | None = None
    ring: bool = False

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "variant", Variant.parse(self.variant)
                           if not isinstance(self.variant, Variant) else self.variant)
        w = self.widths
        if len(w) < 4 or any(x < 1 for x in w):
            raise ValueError(f"invalid widths {w}")
        if self.variant is Variant.BASELINE_AE:
            if w != w[::-1] or len(w) % 2 == 0:
                raise ValueError(f"BaselineAE widths must be an odd-length palindrome, got {w}")
        else:
            s = len(w) - 2
            if w[-1] != w[0] or w[s] != w[s - 1]:
                raise ValueError(f"MEUD widths need r_s = r_(s-1) and r_(s+1) = r_0, got {w}")
            if any(b >= a for a, b in zip(w[:s], w[1:s])):
                raise ValueError(f"encoder widths must strictly decrease, got {w[:s]}")
        if self.ring and self.variant.uses_coop and self.r < 3:
            raise ValueError("ring cooperation needs r >= 3")
        if self.ff_count is not None and not 0 <= self.ff_count <= self.max_ff_count:
            raise ValueError(f"ff_count must be in [0, {self.max_ff_count}]")

    @property
    def s(self):
        """Number of hidden layers (latent included)."""
        return len(self.widths) - 2

    @property
    def latent_index(self):
        if self.variant is Variant.BASELINE_AE:
            return len(self.widths) // 2
        return self.s

    @property
    def coop_index(self):
        """Index of the bottleneck-to-latent weight, or None."""
        return self.s - 1 if self.variant.uses_coop else None

    @property
    def r(self):
        return self.widths[self.latent_index]

    @property
    def max_ff_count(self):
        if self.variant is Variant.BASELINE_AE:
            return 0
        return self.s - 1 if self.variant.uses_coop else self.s

    @property
    def n_ff(self):
        """How many leading weight matrices come from FF pre-training."""
        if not self.variant.uses_ff:
            return 0
        return self.s - 1 if self.ff_count is None else self.ff_count

    @property
    def ff_widths(self):
        return list(self.widths[:self.n_ff + 1])


@dataclass
class BandWeights:
    """Tridiagonal lateral weights between two layers of equal width.

    ``out[:, j] = sub[j-1]*y[:, j-1] + diag[j]*y[:, j] + sup[j]*y[:, j+1]``
    with missing neighbours dropped. With ``ring=True`` node 0 and node
    ``r-1`` are neighbours and ``sub``/``sup`` have length ``r``.
    """

    diag: np.ndarray
    sub: np.ndarray
    sup: np.ndarray
    ring: bool = False

    def __post_init__(self):
        self.diag = np.asarray(self.diag, dtype=np.float64)
        self.sub = np.asarray(self.sub, dtype=np.float64)
        self.sup = np.asarray(self.sup, dtype=np.float64)
        r = self.diag.size
        k = r if self.ring else r - 1
        if self.sub.shape != (k,) or self.sup.shape != (k,):
            raise ShapeError(f"band of size {r} needs sub/sup of length {k}, "
                             f"got {self.sub.shape} and {self.sup.shape}")

    @property
    def size(self):
        return self.diag.size

    @property
    def shape(self):
        return (self.size, self.size)

    @classmethod
    def random(cls, r, std=INIT_STD, seed=0, ring=False):
        k = r if ring else r - 1
        flat = randn_matrix(1, r + 2 * k, 0.0, std, seed)[0]
        return cls(flat[:r], flat[r:r + k], flat[r + k:], ring)

    @classmethod
    def project(cls, dense, ring=False):
        """Keep only the band positions of a dense ``r x r`` matrix."""
        dense = as_matrix(dense)
        r = dense.shape[0]
        idx = np.arange(r if ring else r - 1)
        nxt = (idx + 1) % r
        return cls(np.diag(dense).copy(), dense[idx, nxt], dense[nxt, idx], ring)

    def dense(self):
        r = self.size
        out = np.zeros((r, r))
        out[np.arange(r), np.arange(r)] = self.diag
        idx = np.arange(self.sub.size)
        nxt = (idx + 1) % r
        np.add.at(out, (idx, nxt), self.sub)
        np.add.at(out, (nxt, idx), self.sup)
        return out

    def arrays(self):
        return [self.diag, self.sub, self.sup]

    def with_arrays(self, arrays):
        return BandWeights(*arrays, ring=self.ring)

    def transpose(self):
        return BandWeights(self.diag, self.sup, self.sub, self.ring)


def band_apply(band, y):
    """Multiply ``y`` on the right by the band's dense expansion."""
    y = as_matrix(y, "y")
    r = band.size
    if y.shape[1] != r:
        raise ShapeError(f"band of size {r} cannot act on {y.shape}")
    out = y * band.diag
    if band.ring:
        out += np.roll(y * band.sub, 1, axis=1)
        out += np.roll(y, -1, axis=1) * band.sup
    elif r > 1:
        out[:, 1:] += y[:, :-1] * band.sub
        out[:, :-1] += y[:, 1:] * band.sup
    return out


def _apply(w, y):
    if isinstance(w, BandWeights):
        return band_apply(w, y)
    if y.shape[1] != w.shape[0]:
        raise ShapeError(f"layer input {y.shape} does not match weight {w.shape}")
    return y @ w


@dataclass
class ModelParams:
    """Every weight of a network, in layer order.

    ``weights[k]`` connects layer ``k`` to layer ``k+1``. At the cooperation
    position it is a :class:`BandWeights`; everywhere else a dense matrix.
    """

    config: NetworkConfig
    weights: list

    def __post_init__(self):
        w = self.config.widths
        if len(self.weights) != len(w) - 1:
            raise ShapeError(f"expected {len(w) - 1} weights, got {len(self.weights)}")
        for k, mat in enumerate(self.weights):
            if mat.shape != (w[k], w[k + 1]):
                raise ShapeError(f"weight {k} has shape {mat.shape}, "
                                 f"expected {(w[k], w[k + 1])}")
            if isinstance(mat, BandWeights) != (k == self.config.coop_index):
                raise ShapeError(f"weight {k}: band/dense kind does not match the variant")

    @property
    def dense_weights(self):
        return [w for w in self.weights if not isinstance(w, BandWeights)]

    @property
    def coop(self):
        """The bottleneck-to-latent weight (band or dense); None for BaselineAE."""
        if self.config.variant is Variant.BASELINE_AE:
            return None
        return self.weights[self.config.s - 1]

    def arrays(self):
        """Flat list of parameter arrays (band split into diag/sub/sup)."""
        out = []
        for w in self.weights:
            out.extend(w.arrays() if isinstance(w, BandWeights) else [w])
        return out

    def with_arrays(self, arrays):
        it = iter(arrays)
        weights = []
        for w in self.weights:
            if isinstance(w, BandWeights):
                weights.append(w.with_arrays([next(it), next(it), next(it)]))
            else:
                weights.append(next(it))
        return ModelParams(self.config, weights)

    def copy(self):
        return self.with_arrays([a.copy() for a in self.arrays()])

    def all_finite(self):
        return all(np.isfinite(a).all() for a in self.arrays())


@dataclass
class ActivationCache:
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)


def init_params(cfg, ff_weights=None):
    """Initialise a network for ``cfg``.

    Every weight is drawn from Normal(0, 0.1) except, for the FF variants,
    the first ``cfg.n_ff`` matrices, which are copied from ``ff_weights``.
    Each weight uses its own child seed of ``cfg.seed``.
    """
    w = cfg.widths
    n_ff = cfg.n_ff
    if n_ff:
        if ff_weights is None or len(ff_weights) < n_ff:
            raise ShapeError(f"{cfg.variant.value} needs {n_ff} FF weight matrices")
        for k in range(n_ff):
            if np.shape(ff_weights[k]) != (w[k], w[k + 1]):
                raise ShapeError(f"FF weight {k} has shape {np.shape(ff_weights[k])}, "
                                 f"expected {(w[k], w[k + 1])}")
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(w) - 1)
    weights = []
    for k in range(len(w) - 1):
        child = int(seeds[k].generate_state(1)[0])
        if k < n_ff:
            weights.append(np.array(ff_weights[k], dtype=np.float64))
        elif k == cfg.coop_index:
            weights.append(BandWeights.random(w[k], INIT_STD, child, cfg.ring))
        else:
            weights.append(randn_matrix(w[k], w[k + 1], 0.0, INIT_STD, child))
    return ModelParams(cfg, weights)


def _activation(cfg, k):
    if k == 0:
        return "identity"
    return "sigmoid" if k == cfg.latent_index else "relu"


def forward(params, X):
    X = as_matrix(X, "X")
    cfg = params.config
    if X.shape[1] != cfg.widths[0]:
        raise ShapeError(f"input has {X.shape[1]} features, network expects {cfg.widths[0]}")
    cache = ActivationCache([X], [X])
    for k in range(1, len(cfg.widths)):
        z = _apply(params.weights[k - 1], cache.post[-1])
        cache.pre.append(z)
        cache.post.append(activate(z, _activation(cfg, k)))
    return cache


def reconstruct(params, X):
    return forward(params, X).post[-1]


def extract_embedding(params, X):
    """Latent-layer output, shape ``(m, r)``, entries in (0, 1)."""
    return forward(params, X).post[params.config.latent_index]


def backward(params, cache, X):
    """Gradient of the reconstruction cost ``sum((X - Xhat)^2) / (2mn)``.

    Returns a :class:`ModelParams` holding the gradients. Band gradients are
    the dense gradient restricted to the band positions.
    """
    cfg = params.config
    X = as_matrix(X, "X")
    L = len(cfg.widths)
    if len(cache.pre) != L or cache.pre[0].shape != X.shape:
        raise ShapeError("activation cache does not belong to this network/input")
    for k in range(L):
        if cache.pre[k].shape[1] != cfg.widths[k]:
            raise ShapeError(f"stale cache: layer {k} width {cache.pre[k].shape[1]}")
    m, n = X.shape
    grad_y = (cache.post[-1] - X) / (m * n)
    grads = [None] * (L - 1)
    for k in range(L - 1, 0, -1):
        kind = "sigmoid_grad" if k == cfg.latent_index else "relu_grad"
        delta = grad_y * activate(cache.pre[k], kind)
        w = params.weights[k - 1]
        dense_grad = cache.post[k - 1].T @ delta
        if isinstance(w, BandWeights):
            grads[k - 1] = BandWeights.project(dense_grad, ring=w.ring)
            if k > 1:
                grad_y = band_apply(w.transpose(), delta)
        else:
            grads[k - 1] = dense_grad
            if k > 1:
                grad_y = delta @ w.T
    return ModelParams(cfg, grads)


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(params, path):
    """Write ``params`` to an ``.npz`` container with a JSON header."""
    cfg = params.config
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "widths": list(cfg.widths),
        "variant": cfg.variant.value,
        "seed": cfg.seed,
        "ff_count": cfg.ff_count,
        "ring": cfg.ring,
        "byte_order": "little",
    }
    arrays = {f"p{i:03d}": np.ascontiguousarray(a, dtype="<f8")
              for i, a in enumerate(params.arrays())}
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), np.uint8),
                 **arrays)
    return path


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        try:
            meta = json.loads(bytes(z["meta"]).decode())
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"{path}: missing or unreadable header") from exc
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: format version {meta.get('format_version')!r}, "
                                  f"this build reads {CHECKPOINT_VERSION}")
        keys = sorted(k for k in z.files if k.startswith("p"))
        arrays = [z[k].astype(np.float64) for k in keys]
    cfg = NetworkConfig(meta["widths"], Variant.parse(meta["variant"]), meta["seed"],
                        meta["ff_count"], meta["ring"])
    template = init_params(cfg, ff_weights=_zeros_like_ff(cfg))
    if len(arrays) != len(template.arrays()):
        raise CheckpointError(f"{path}: expected {len(template.arrays())} arrays, got {len(arrays)}")
    return template.with_arrays(arrays)


def _zeros_like_ff(cfg):
    w = cfg.widths
    return [np.zeros((w[k], w[k + 1])) for k in range(cfg.n_ff)]
