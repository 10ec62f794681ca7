import os
import struct
from pathlib import Path

import numpy as np
import pytest

from fcblearn.datasets import LabeledDataset, load_idx_dir, parse_idx

_ACCEPTANCE = []


def idx_bytes(images_u8, labels_u8):
    """Encode uint8 arrays (count, rows, cols) / (count,) as IDX files."""
    count, rows, cols = images_u8.shape
    img = struct.pack(">IIII", 0x00000803, count, rows, cols) + images_u8.tobytes()
    lab = struct.pack(">II", 0x00000801, count) + labels_u8.tobytes()
    return img, lab


def _mnist_pool():
    """Real MNIST digits as (train, test) LabeledDatasets.

    Uses the IDX files in $FCB_MNIST_DIR when set, otherwise the 5000-image
    MNIST sample bundled with mlxtend, routed through the IDX parser.
    """
    root = os.environ.get("FCB_MNIST_DIR")
    if root:
        return load_idx_dir(root, "train").shuffled(0), load_idx_dir(root, "test").shuffled(0)
    mlx = pytest.importorskip("mlxtend.data")
    X, y = mlx.mnist_data()
    img, lab = idx_bytes(X.astype(np.uint8).reshape(-1, 28, 28), y.astype(np.uint8))
    ds = parse_idx(img, lab, num_classes=10).shuffled(0)
    return ds.subset(np.arange(2000)), ds.subset(np.arange(2000, len(ds)))


@pytest.fixture(scope="session")
def mnist_subset():
    """2000 training and 500 held-out MNIST images (disjoint)."""
    train, test = _mnist_pool()
    return train.subset(np.arange(2000)), test.subset(np.arange(500))


@pytest.fixture
def record():
    def _record(number, title, ok, detail=""):
        _ACCEPTANCE.append((number, title, bool(ok), detail))
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(_ACCEPTANCE, key=lambda t: t[0]):
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:>2}. {title}  {detail}".rstrip())
