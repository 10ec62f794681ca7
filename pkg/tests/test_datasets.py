import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fcblearn.datasets import (NEGATIVE, POSITIVE, BadMagicError, CountMismatchError,
                               DatasetError, InvalidLabelError, LabeledDataset,
                               TruncatedPayloadError, build_training_matrix, embed_labels,
                               load_cifar10_dir, load_idx_dir, neutral_embedding,
                               parse_cifar10_bin, parse_idx, synth_blobs)

# two 2x2 images, pixels 0, 255, 51, 102 / 1, 2, 3, 4
IDX_IMAGES = bytes.fromhex("00000803" "00000002" "00000002" "00000002"
                           "00ff3366" "01020304")
IDX_LABELS = bytes.fromhex("00000801" "00000002" "0709")


def cifar_record(label, fill):
    return bytes([label]) + bytes(fill(i) for i in range(3072))


def test_parse_idx_hand_decoded():
    ds = parse_idx(IDX_IMAGES, IDX_LABELS, num_classes=10)
    expected = np.array([[0, 255, 51, 102], [1, 2, 3, 4]]) / 255.0
    assert ds.samples.shape == (2, 4)
    np.testing.assert_array_equal(ds.samples, expected)
    assert ds.samples[0, 1] == 1.0 and ds.samples[0, 0] == 0.0
    assert ds.labels.tolist() == [7, 9]


def test_parse_idx_errors():
    with pytest.raises(TruncatedPayloadError):
        parse_idx(IDX_IMAGES[:-1], IDX_LABELS)
    with pytest.raises(BadMagicError):
        parse_idx(b"\x00\x00\x08\x01" + IDX_IMAGES[4:], IDX_LABELS)
    three_labels = bytes.fromhex("00000801" "00000003" "070901")
    with pytest.raises(CountMismatchError):
        parse_idx(IDX_IMAGES, three_labels)


def test_parse_idx_label_offset():
    letters = bytes.fromhex("00000801" "00000002" "011a")
    ds = parse_idx(IDX_IMAGES, letters, num_classes=26, label_offset=1)
    assert ds.labels.tolist() == [0, 25]


def test_load_idx_dir_gzip(tmp_path):
    import gzip
    (tmp_path / "train-images-idx3-ubyte.gz").write_bytes(gzip.compress(IDX_IMAGES))
    (tmp_path / "train-labels-idx1-ubyte").write_bytes(IDX_LABELS)
    ds = load_idx_dir(tmp_path, "train")
    assert ds.labels.tolist() == [7, 9]


def test_parse_cifar_hand_built():
    raw = cifar_record(3, lambda i: i % 256) + cifar_record(9, lambda i: 255 - i % 256)
    ds = parse_cifar10_bin(raw)
    assert ds.samples.shape == (2, 3072)
    assert ds.labels.tolist() == [3, 9]
    assert ds.num_classes == 10
    np.testing.assert_array_equal(ds.samples[0, :3], np.array([0, 1, 2]) / 255.0)
    # channel-major: red plane first, green plane starts at 1024
    assert ds.samples[0, 1024] == (1024 % 256) / 255.0
    assert ds.samples[1, 0] == 1.0


def test_parse_cifar_edge_cases(tmp_path):
    assert len(parse_cifar10_bin(b"")) == 0
    with pytest.raises(InvalidLabelError):
        parse_cifar10_bin(cifar_record(11, lambda i: 0))
    with pytest.raises(TruncatedPayloadError):
        parse_cifar10_bin(cifar_record(1, lambda i: 0)[:-1])
    (tmp_path / "data_batch_1.bin").write_bytes(cifar_record(2, lambda i: 7))
    (tmp_path / "test_batch.bin").write_bytes(cifar_record(4, lambda i: 7))
    assert load_cifar10_dir(tmp_path, "train").labels.tolist() == [2]
    assert load_cifar10_dir(tmp_path, "test").labels.tolist() == [4]


def test_labeled_dataset_invariants():
    with pytest.raises(DatasetError):
        LabeledDataset(np.full((1, 3), 1.5), [0], 2)
    with pytest.raises(InvalidLabelError):
        LabeledDataset(np.zeros((1, 3)), [2], 2)
    with pytest.raises(CountMismatchError):
        LabeledDataset(np.zeros((2, 3)), [0], 2)


def digit_three():
    return LabeledDataset(np.full((1, 784), 0.5), [3], 10)


def test_embed_positive_digit_three():
    enc = embed_labels(digit_three(), POSITIVE)
    assert enc.data[0, :10].tolist() == [0, 0, 0, 1, 0, 0, 0, 0, 0, 0]
    assert np.all(enc.data[0, 10:] == 0.5)
    assert enc.source_labels.tolist() == [3]


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1))
def test_embed_negative_never_true_label(seed):
    enc = embed_labels(digit_three(), NEGATIVE, seed=seed)
    hot = int(np.argmax(enc.data[0, :10]))
    assert hot != 3 and enc.data[0, :10].sum() == 1.0
    assert enc.embedded_labels[0] == hot


def test_embed_negative_covers_other_classes():
    ds = LabeledDataset(np.zeros((2000, 12)), np.full(2000, 3), 10)
    hot = embed_labels(ds, NEGATIVE, seed=0).embedded_labels
    assert set(hot.tolist()) == set(range(10)) - {3}


def test_embed_errors():
    one_class = LabeledDataset(np.zeros((2, 4)), [0, 0], 1)
    with pytest.raises(DatasetError):
        embed_labels(one_class, NEGATIVE)
    narrow = LabeledDataset(np.zeros((1, 3)), [0], 5)
    with pytest.raises(DatasetError):
        embed_labels(narrow, POSITIVE)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(0, 1000))
def test_embedding_preserves_trailing_features_and_determinism(m, seed):
    ds = synth_blobs(5, m, 9, spread=0.2, seed=seed)
    for pol in (POSITIVE, NEGATIVE):
        enc = embed_labels(ds, pol, seed=seed)
        np.testing.assert_array_equal(enc.data[:, 5:], ds.samples[:, 5:])
        np.testing.assert_array_equal(enc.data, embed_labels(ds, pol, seed=seed).data)
    pos_a = embed_labels(ds, POSITIVE, seed=1).data
    pos_b = embed_labels(ds, POSITIVE, seed=2).data
    np.testing.assert_array_equal(pos_a, pos_b)


def test_build_training_matrix_halves():
    ds = LabeledDataset(np.random.default_rng(0).uniform(size=(4, 12)), [0, 1, 2, 3], 10)
    enc = build_training_matrix(ds, seed=5)
    assert enc.polarity.tolist() == [True, True, False, False]
    assert enc.source_labels.tolist() == [0, 1, 2, 3]
    np.testing.assert_array_equal(np.argmax(enc.data[:2, :10], axis=1), [0, 1])
    assert np.all(np.argmax(enc.data[2:, :10], axis=1) != [2, 3])
    np.testing.assert_array_equal(enc.data[:, 10:], ds.samples[:, 10:])


def test_build_training_matrix_counts_and_one_hot():
    ds = synth_blobs(10, 7, 20, seed=1)
    enc = build_training_matrix(ds, seed=3)
    assert len(enc) == 70
    assert enc.polarity.sum() == 35
    np.testing.assert_array_equal(enc.data[:, :10].sum(axis=1), np.ones(70))
    odd = build_training_matrix(ds.subset(np.arange(5)), seed=0)
    assert odd.polarity.sum() == 3


def test_build_training_matrix_mirrored():
    ds = synth_blobs(3, 2, 6, seed=0)
    enc = build_training_matrix(ds, seed=0, mirrored=True)
    assert len(enc) == 12 and enc.polarity.sum() == 6
    np.testing.assert_array_equal(enc.data[:6, 3:], enc.data[6:, 3:])


def test_build_training_matrix_too_small():
    with pytest.raises(DatasetError):
        build_training_matrix(LabeledDataset(np.zeros((1, 4)), [0], 2))


def test_neutral_embedding_zeroes_label_block():
    data = neutral_embedding(digit_three())
    assert np.all(data[0, :10] == 0) and np.all(data[0, 10:] == 0.5)


def test_synth_blobs():
    ds = synth_blobs(4, 5, 8, spread=0.0, seed=3)
    for c in range(4):
        rows = ds.samples[ds.labels == c]
        assert np.all(rows == rows[0])
    assert ds.labels.tolist() == sorted([0, 1, 2, 3] * 5)
    other = synth_blobs(4, 5, 8, spread=0.0, seed=4)
    assert not np.array_equal(ds.samples, other.samples)
    np.testing.assert_array_equal(ds.labels, other.labels)
    noisy = synth_blobs(4, 50, 8, spread=0.5, seed=3)
    assert noisy.samples.min() >= 0 and noisy.samples.max() <= 1
    with pytest.raises(DatasetError):
        synth_blobs(5, 2, 3)


def test_header_too_short():
    with pytest.raises(TruncatedPayloadError):
        parse_idx(struct.pack(">I", 0x803), IDX_LABELS)
