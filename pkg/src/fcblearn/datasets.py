"""Dataset loaders and the label-embedded training matrix.

Supported on-disk formats are the MNIST-family IDX files (optionally
gzipped) and CIFAR-10 binary batches. Every loader returns a
:class:`LabeledDataset` with pixels scaled to [0, 1].
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073
CIFAR_PIXELS = 3072

POSITIVE = True
NEGATIVE = False


class DatasetError(ValueError):
    """Base class for malformed dataset input."""


class BadMagicError(DatasetError):
    pass


class TruncatedPayloadError(DatasetError):
    pass


class CountMismatchError(DatasetError):
    pass


class InvalidLabelError(DatasetError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    samples: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if samples.ndim != 2:
            raise DatasetError(f"samples must be 2-D, got shape {samples.shape}")
        if labels.shape != (samples.shape[0],):
            raise CountMismatchError(
                f"{samples.shape[0]} samples but {labels.shape[0]} labels")
        if samples.size and (samples.min() < 0.0 or samples.max() > 1.0):
            raise DatasetError("sample entries must lie in [0, 1]")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise InvalidLabelError(
                f"labels must lie in [0, {self.num_classes - 1}]")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def n_features(self):
        return self.samples.shape[1]

    def subset(self, index):
        index = np.asarray(index)
        return LabeledDataset(self.samples[index], self.labels[index], self.num_classes)

    def shuffled(self, seed):
        perm = np.random.default_rng(seed).permutation(len(self))
        return self.subset(perm)


@dataclass(frozen=True)
class EncodedMatrix:
    """Samples whose first ``num_classes`` features hold a one-hot label.

    ``polarity[i]`` is True for a positive row (true label embedded) and
    False for a negative row (some other label embedded).
    """

    data: np.ndarray
    polarity: np.ndarray
    source_labels: np.ndarray
    embedded_labels: np.ndarray
    num_classes: int
    mirrored: bool = field(default=False)

    def __len__(self):
        return self.data.shape[0]

    @property
    def positive_rows(self):
        return np.flatnonzero(self.polarity)


def _read_header(buf, magic, ndims, what):
    need = 4 + 4 * ndims
    if len(buf) < need:
        raise TruncatedPayloadError(f"{what}: header needs {need} bytes, got {len(buf)}")
    got = struct.unpack(">I", buf[:4])[0]
    if got != magic:
        raise BadMagicError(f"{what}: magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndims}I", buf[4:need])
    return dims, need


def parse_idx(image_bytes, label_bytes, num_classes=None, label_offset=0):
    """Decode an IDX image file and its IDX label file.

    Parameters
    ----------
    image_bytes, label_bytes : bytes
        Raw (already decompressed) file contents.
    num_classes : int, optional
        Defaults to ``max(label) + 1`` after the offset is applied.
    label_offset : int
        Subtracted from every raw label byte (1 for EMNIST Letters).
    """
    (count, rows, cols), off = _read_header(image_bytes, IDX_IMAGES_MAGIC, 3, "images")
    (nlab,), loff = _read_header(label_bytes, IDX_LABELS_MAGIC, 1, "labels")
    if count != nlab:
        raise CountMismatchError(f"{count} images but {nlab} labels")
    npix = count * rows * cols
    if len(image_bytes) - off < npix:
        raise TruncatedPayloadError(
            f"images: expected {npix} pixel bytes, got {len(image_bytes) - off}")
    if len(label_bytes) - loff < nlab:
        raise TruncatedPayloadError(
            f"labels: expected {nlab} label bytes, got {len(label_bytes) - loff}")
    pixels = np.frombuffer(image_bytes, dtype=np.uint8, count=npix, offset=off)
    samples = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(label_bytes, dtype=np.uint8, count=nlab, offset=loff)
    labels = labels.astype(np.int64) - label_offset
    if labels.size and labels.min() < 0:
        raise InvalidLabelError(f"label below offset {label_offset}")
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 1
    return LabeledDataset(samples, labels, num_classes)


def parse_cifar10_bin(batch_bytes):
    """Decode one or more concatenated CIFAR-10 binary batches."""
    if len(batch_bytes) % CIFAR_RECORD:
        raise TruncatedPayloadError(
            f"CIFAR-10 stream length {len(batch_bytes)} is not a multiple of {CIFAR_RECORD}")
    raw = np.frombuffer(batch_bytes, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = raw[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        bad = int(np.flatnonzero(labels > 9)[0])
        raise InvalidLabelError(f"record {bad} has label byte {labels[bad]}")
    samples = raw[:, 1:].astype(np.float64) / 255.0
    return LabeledDataset(samples, labels, 10)


def embed_labels(ds, polarity, seed=0):
    """Overwrite the first ``num_classes`` features with a one-hot label.

    Positive rows get the true label. Negative rows get a label drawn
    uniformly from the other ``num_classes - 1`` classes using ``seed``.
    """
    p = ds.num_classes
    m, n = ds.samples.shape
    if p > n:
        raise DatasetError(f"{p} classes do not fit in {n} features")
    if polarity == POSITIVE:
        hot = ds.labels.copy()
    else:
        if p < 2:
            raise DatasetError("negative labels need at least two classes")
        rng = np.random.default_rng(seed)
        # shift by 1..p-1 so the true label is never chosen
        hot = (ds.labels + rng.integers(1, p, size=m)) % p
    data = ds.samples.copy()
    data[:, :p] = 0.0
    data[np.arange(m), hot] = 1.0
    return EncodedMatrix(
        data=data,
        polarity=np.full(m, bool(polarity)),
        source_labels=ds.labels.copy(),
        embedded_labels=hot,
        num_classes=p,
    )


def neutral_embedding(ds):
    """Zero the label block instead of filling it."""
    data = ds.samples.copy()
    data[:, :ds.num_classes] = 0.0
    return data


def build_training_matrix(ds, seed=0, mirrored=False):
    """Stack positive rows on top of negative rows.

    By default the first ``ceil(m/2)`` samples become positives and the rest
    negatives, so the result has exactly ``m`` rows. With ``mirrored=True``
    every sample appears twice, once per polarity (``2m`` rows).
    """
    m = len(ds)
    if m < 2:
        raise DatasetError(f"need at least 2 samples, got {m}")
    if mirrored:
        pos_ds, neg_ds = ds, ds
    else:
        half = (m + 1) // 2
        pos_ds, neg_ds = ds.subset(np.arange(half)), ds.subset(np.arange(half, m))
    pos = embed_labels(pos_ds, POSITIVE)
    neg = embed_labels(neg_ds, NEGATIVE, seed=seed)
    return EncodedMatrix(
        data=np.vstack([pos.data, neg.data]),
        polarity=np.concatenate([pos.polarity, neg.polarity]),
        source_labels=np.concatenate([pos.source_labels, neg.source_labels]),
        embedded_labels=np.concatenate([pos.embedded_labels, neg.embedded_labels]),
        num_classes=ds.num_classes,
        mirrored=mirrored,
    )


def synth_blobs(num_classes, per_class, n, spread=0.05, seed=0):
    """Gaussian clusters in [0,1]^n, one per class.

    Class centres are drawn uniformly from [0.15, 0.85]^n; samples are
    centre + Normal(0, spread) noise, clipped to [0, 1]. Labels are
    ``per_class`` copies of each class index in class order.
    """
    if n < num_classes:
        raise DatasetError(f"n={n} is smaller than num_classes={num_classes}")
    rng = np.random.default_rng(seed)
    centres = rng.uniform(0.15, 0.85, size=(num_classes, n))
    labels = np.repeat(np.arange(num_classes), per_class)
    noise = rng.normal(0.0, spread, size=(labels.size, n)) if spread > 0 else 0.0
    samples = np.clip(centres[labels] + noise, 0.0, 1.0)
    return LabeledDataset(samples, labels, num_classes)


# -- file loaders -----------------------------------------------------------

def _read(path):
    path = Path(path)
    with (gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")) as fh:
        return fh.read()


def _find_one(directory, patterns):
    for pat in patterns:
        hits = sorted(Path(directory).glob(pat))
        if hits:
            return hits[0]
    raise FileNotFoundError(f"no file matching {patterns} in {directory}")


def load_idx_dir(directory, split="train"):
    """Load ``split`` ('train' or 'test') from a directory of IDX files.

    Recognises the MNIST/Fashion-MNIST names (``train-*``/``t10k-*``) and
    the EMNIST names (``emnist-<subset>-train-*``). EMNIST Letters labels
    are shifted from 1..26 to 0..25.
    """
    tag = ["train"] if split == "train" else ["t10k", "test"]
    img = _find_one(directory, [f"*{t}-images*idx3*" for t in tag])
    lab = _find_one(directory, [f"*{t}-labels*idx1*" for t in tag])
    letters = "letters" in img.name
    return parse_idx(_read(img), _read(lab),
                     num_classes=26 if letters else None,
                     label_offset=1 if letters else 0)


def load_cifar10_dir(directory, split="train"):
    d = Path(directory)
    files = sorted(d.glob("data_batch_*.bin")) if split == "train" else [d / "test_batch.bin"]
    if not files or not all(f.exists() for f in files):
        raise FileNotFoundError(f"no CIFAR-10 {split} batches in {directory}")
    return parse_cifar10_bin(b"".join(_read(f) for f in files))
