"""Experiment orchestration: train, sweep and evaluate reducers.

An :class:`ExperimentConfig` can be read from a flat ``key = value`` text
file (lists comma-separated) and overridden from the command line. All
outputs are CSV files with a ``#``-prefixed provenance block on top.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import datasets as dsets
from .evaluation import METRIC_NAMES, classification_metrics, gnb_fit_predict, knn_classify, trustworthiness
from .ff import FFLayerConfig, pretrain_stack
from .meud import (CHECKPOINT_VERSION, NetworkConfig, Variant, extract_embedding, init_params,
                   load_checkpoint, make_widths, save_checkpoint)
from .training import TrainConfig, train

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
LOSS_HEADER = ("epoch", "loss", "seconds")
METRICS_HEADER = ("dataset", "variant", "r", "seed", "metric", "value")
DEFAULT_R = tuple(range(25, 501, 25))
CLASSIFIERS = ("knn", "gnb")
ALL_METRICS = ("trustworthiness",) + tuple(f"{c}_{m}" for c in CLASSIFIERS for m in METRIC_NAMES)

# keys that do not change results and are left out of the config hash
_UNHASHED = {"out_dir", "jobs"}


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a run. See README for each key."""

    name: str = ""
    dataset: str = "synth"
    test_dataset: str = ""
    format: str = "synth"
    variants: tuple = tuple(v.value for v in Variant)
    r: tuple = DEFAULT_R
    depth: int = 4
    seeds: tuple = (0,)
    data_seed: int = 0
    limit: int = 0
    test_limit: int = 0
    mirrored: bool = False
    # FF pre-training
    ff_theta: float = 2.0
    ff_epochs: int = 10
    ff_lr: float = 1e-3
    ff_batch_size: int = 64
    ff_optimizer: str = "adam"
    ff_normalize: bool = False
    ff_count: int = -1
    ring: bool = False
    # backprop training
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    shuffle: bool = True
    # evaluation
    trust_k: int = 5
    knn_k: int = 5
    subsample_cap: int = 2000
    eval_all: bool = False
    neutral_test_embedding: bool = False
    # synthetic data
    synth_classes: int = 10
    synth_per_class: int = 50
    synth_n: int = 64
    synth_spread: float = 0.1
    synth_test_fraction: float = 0.2
    # execution
    jobs: int = 1
    out_dir: str = "out"

    def __post_init__(self):
        self.variants = tuple(Variant.parse(v).value for v in self.variants)
        self.r = tuple(int(x) for x in self.r)
        self.seeds = tuple(int(x) for x in self.seeds)
        if not self.variants:
            raise ValueError("variant list is empty")
        if not self.seeds:
            raise ValueError("seed list is empty")
        if not self.r or min(self.r) < 1:
            raise ValueError(f"invalid r list {self.r}")
        if self.format not in ("idx", "cifar10", "synth"):
            raise ValueError(f"unknown format {self.format!r}")

    @property
    def dataset_name(self):
        if self.name:
            return self.name
        return "synth" if self.format == "synth" else Path(self.dataset).name

    def ff_config(self):
        return FFLayerConfig(theta=self.ff_theta, epochs=self.ff_epochs, learning_rate=self.ff_lr,
                             batch_size=self.ff_batch_size, optimizer=self.ff_optimizer,
                             normalize=self.ff_normalize)

    def train_config(self, seed):
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           learning_rate=self.lr, seed=seed, shuffle=self.shuffle)

    def hashable(self):
        return {k: v for k, v in asdict(self).items() if k not in _UNHASHED}

    def config_hash(self):
        text = "\n".join(f"{k}={_fmt_value(v)}" for k, v in sorted(self.hashable().items()))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def override(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _fmt_value(v):
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def _coerce(f, raw):
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    raw = raw.strip()
    if kind == "bool":
        low = raw.lower()
        if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
            raise ValueError(f"{f.name}: not a boolean: {raw!r}")
        return low in ("1", "true", "yes", "on")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "tuple":
        return tuple(x.strip() for x in raw.split(",") if x.strip())
    return raw


def parse_config_text(text, base=None):
    """Parse ``key = value`` lines. ``#`` starts a comment; unknown keys raise."""
    known = {f.name: f for f in fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _coerce(known[key], raw)
    return replace(base or ExperimentConfig(), **values)


def load_config(path, base=None):
    return parse_config_text(Path(path).read_text(), base)


# -- data ---------------------------------------------------------------------

def load_splits(cfg):
    """Return ``(train, test)`` LabeledDatasets for ``cfg``."""
    if cfg.format == "synth":
        per = cfg.synth_per_class
        per_test = max(1, int(round(per * cfg.synth_test_fraction)))
        full = dsets.synth_blobs(cfg.synth_classes, per + per_test, cfg.synth_n,
                                 cfg.synth_spread, seed=cfg.data_seed)
        full = full.shuffled(cfg.data_seed)
        cut = cfg.synth_classes * per
        train_ds, test_ds = full.subset(np.arange(cut)), full.subset(np.arange(cut, len(full)))
    else:
        loader = dsets.load_idx_dir if cfg.format == "idx" else dsets.load_cifar10_dir
        train_ds = loader(cfg.dataset, "train")
        test_ds = loader(cfg.test_dataset or cfg.dataset, "test")
        p = max(train_ds.num_classes, test_ds.num_classes)
        train_ds = dsets.LabeledDataset(train_ds.samples, train_ds.labels, p)
        test_ds = dsets.LabeledDataset(test_ds.samples, test_ds.labels, p)
        train_ds = train_ds.shuffled(cfg.data_seed)
        test_ds = test_ds.shuffled(cfg.data_seed)
    if cfg.limit:
        train_ds = train_ds.subset(np.arange(min(cfg.limit, len(train_ds))))
    if cfg.test_limit:
        test_ds = test_ds.subset(np.arange(min(cfg.test_limit, len(test_ds))))
    return train_ds, test_ds


# -- single runs ----------------------------------------------------------------

@dataclass
class RunResult:
    params: object
    losses: list
    seconds: list
    ff_log: list = field(default_factory=list)


def network_config(cfg, variant, r, seed, n):
    variant = Variant.parse(variant)
    if r >= n:
        raise ValueError(f"r={r} must be smaller than n={n}")
    ff_count = None if cfg.ff_count < 0 else cfg.ff_count
    return NetworkConfig(make_widths(n, r, cfg.depth, variant), variant, seed, ff_count, cfg.ring)


def fit(cfg, train_ds, variant, r, seed, on_epoch=None):
    """Build the label-embedded matrix, pre-train if needed, then backprop-train."""
    enc = dsets.build_training_matrix(train_ds, seed=seed, mirrored=cfg.mirrored)
    net = network_config(cfg, variant, r, seed, enc.data.shape[1])
    ff_log = []
    ff_weights = None
    if net.n_ff:
        ff_weights = pretrain_stack(enc, net.ff_widths, cfg.ff_config(), seed=seed,
                                    log_fn=lambda k, e, loss: ff_log.append((k + 1, e, loss)))
    params = init_params(net, ff_weights)
    report = train(params, enc, cfg.train_config(seed), on_epoch=on_epoch)
    return RunResult(report.params, report.losses, report.seconds, ff_log), enc


def evaluate(cfg, params, enc, test_ds, seed):
    """Trustworthiness plus KNN/GNB metric suites, as an ordered dict."""
    rows = np.arange(len(enc)) if cfg.eval_all else enc.positive_rows
    X = enc.data[rows]
    y = enc.source_labels[rows]
    E = extract_embedding(params, X)
    sub = np.arange(len(rows))
    if cfg.subsample_cap and len(rows) > cfg.subsample_cap:
        sub = np.sort(np.random.default_rng(seed).choice(len(rows), cfg.subsample_cap, replace=False))
    out = {"trustworthiness": trustworthiness(X[sub], E[sub], cfg.trust_k)}
    if cfg.neutral_test_embedding:
        Xt = dsets.neutral_embedding(test_ds)
    else:
        Xt = dsets.embed_labels(test_ds, dsets.POSITIVE).data
    Et = extract_embedding(params, Xt)
    p = enc.num_classes
    for name, (pred, scores) in (
        ("knn", knn_classify(E, y, Et, cfg.knn_k, num_classes=p)),
        ("gnb", gnb_fit_predict(E, y, Et, num_classes=p)),
    ):
        rep = classification_metrics(test_ds.labels, pred, scores)
        for metric, value in rep.as_dict().items():
            out[f"{name}_{metric}"] = value
    return out


# -- CSV --------------------------------------------------------------------------

def provenance(cfg, extra=()):
    lines = [f"fcblearn format_version={FORMAT_VERSION}",
             f"config_hash={cfg.config_hash()}",
             f"seeds={_fmt_value(cfg.seeds)} data_seed={cfg.data_seed}",
             f"trust_k={cfg.trust_k} knn_k={cfg.knn_k} subsample_cap={cfg.subsample_cap}"
             f" subsample_seed=cell_seed"]
    lines.extend(extra)
    return [f"# {line}" for line in lines]


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_csv(path, comments, header, rows):
    buf = io.StringIO()
    for c in comments:
        buf.write(c + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(buf.getvalue())
    return Path(path)


def read_csv_rows(path):
    """Data rows of a CSV written by :func:`write_csv` (comments skipped)."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, list(reader)


def cell_stem(cfg, variant, r, seed):
    return f"{cfg.dataset_name}_{Variant.parse(variant).value}_r{r}_s{seed}"


def write_loss_csv(path, cfg, result, variant, r, seed):
    extra = [f"variant={Variant.parse(variant).value} r={r} seed={seed}"]
    extra += [f"ff layer={k} epoch={e} loss={loss!r}" for k, e, loss in result.ff_log]
    rows = [(i + 1, loss, f"{sec:.6f}")
            for i, (loss, sec) in enumerate(zip(result.losses, result.seconds))]
    return write_csv(path, provenance(cfg, extra), LOSS_HEADER, rows)


def metric_rows(cfg, variant, r, seed, metrics):
    name = cfg.dataset_name
    return [(name, Variant.parse(variant).value, r, seed, k, v) for k, v in metrics.items()]


def summary_rows(cfg, rows):
    """Mean over every successful (r, seed) cell per (variant, metric)."""
    acc = {}
    for _, variant, _, _, metric, value in rows:
        if metric == "error":
            continue
        acc.setdefault((variant, metric), []).append(float(value))
    order = [v for v in cfg.variants]
    out = []
    for variant in order:
        for metric in ALL_METRICS:
            vals = acc.get((variant, metric))
            if vals:
                out.append((cfg.dataset_name, variant, "mean", "all", metric, float(np.mean(vals))))
    return out


# -- commands -----------------------------------------------------------------------

def cmd_train(cfg, variant, r, seed):
    """Train one model; write its checkpoint and loss CSV. Returns (result, paths)."""
    train_ds, _ = load_splits(cfg)
    result, _ = fit(cfg, train_ds, variant, r, seed)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = cell_stem(cfg, variant, r, seed)
    ckpt = save_checkpoint(result.params, out / f"{stem}.npz")
    loss = write_loss_csv(out / f"{stem}_loss.csv", cfg, result, variant, r, seed)
    return result, {"checkpoint": ckpt, "loss_csv": loss}


def _run_cell(cfg, variant, r, seed, splits=None):
    try:
        train_ds, test_ds = splits if splits is not None else load_splits(cfg)
        result, enc = fit(cfg, train_ds, variant, r, seed)
        write_loss_csv(Path(cfg.out_dir) / "loss" / f"{cell_stem(cfg, variant, r, seed)}_loss.csv",
                       cfg, result, variant, r, seed)
        metrics = evaluate(cfg, result.params, enc, test_ds, seed)
        return metric_rows(cfg, variant, r, seed, metrics), None
    except Exception as exc:  # a failed cell becomes an error row; the sweep goes on
        log.error("cell %s r=%s seed=%s failed: %s", variant, r, seed, exc)
        log.debug("%s", traceback.format_exc())
        msg = f"{type(exc).__name__}: {exc}"
        return [(cfg.dataset_name, Variant.parse(variant).value, r, seed, "error", msg)], msg


def cmd_sweep(cfg):
    """Run every (variant, r, seed) cell. Returns ``(csv_path, n_failed)``."""
    cells = [(v, r, s) for v in cfg.variants for r in cfg.r for s in cfg.seeds]
    log.info("sweep: %d cells", len(cells))
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = [pool.submit(_run_cell, cfg, *c) for c in cells]
            results = [f.result() for f in futures]
    else:
        splits = load_splits(cfg)
        results = [_run_cell(cfg, *c, splits=splits) for c in cells]
    rows = [row for cell_rows, _ in results for row in cell_rows]
    failed = sum(err is not None for _, err in results)
    path = write_csv(Path(cfg.out_dir) / f"{cfg.dataset_name}_metrics.csv",
                     provenance(cfg, [f"cells={len(cells)} failed={failed}"]),
                     METRICS_HEADER, rows + summary_rows(cfg, rows))
    return path, failed


def cmd_eval(cfg, checkpoint):
    """Evaluate a saved model on ``cfg``'s data without training."""
    params = load_checkpoint(checkpoint)
    net = params.config
    train_ds, test_ds = load_splits(cfg)
    if train_ds.n_features != net.widths[0]:
        raise ValueError(f"dataset has {train_ds.n_features} features, "
                         f"checkpoint expects {net.widths[0]}")
    enc = dsets.build_training_matrix(train_ds, seed=net.seed, mirrored=cfg.mirrored)
    metrics = evaluate(cfg, params, enc, test_ds, net.seed)
    rows = metric_rows(cfg, net.variant, net.r, net.seed, metrics)
    stem = Path(checkpoint).stem
    extra = [f"checkpoint={Path(checkpoint).name} checkpoint_version={CHECKPOINT_VERSION}"]
    return write_csv(Path(cfg.out_dir) / f"{stem}_eval.csv", provenance(cfg, extra),
                     METRICS_HEADER, rows)
