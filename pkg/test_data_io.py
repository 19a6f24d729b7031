import gzip
import struct

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from datasets.dataset import Dataset
from datasets.parsers import (
    CIFAR_RECORD, load_dataset, parse_cifar10, parse_idx, serialize_cifar10, serialize_idx,
)
from datasets.targets import assign_targets, eval_subset
from utils.errors import DataError, InvalidArgumentError, ParseError


def idx_images(pixels):
    pixels = np.asarray(pixels, dtype=np.uint8)
    header = struct.pack(">BBBB", 0, 0, 0x08, pixels.ndim) + struct.pack(f">{pixels.ndim}I", *pixels.shape)
    return header + pixels.tobytes()


def idx_labels(labels):
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">BBBBI", 0, 0, 0x08, 1, labels.size) + labels.tobytes()


@pytest.fixture
def mnist_like():
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, size=(5, 4, 4), dtype=np.uint8)
    labels = np.array([3, 0, 9, 1, 1], dtype=np.uint8)
    return pixels, labels


def test_parse_idx_scales_pixels(mnist_like):
    pixels, labels = mnist_like
    data = parse_idx(idx_images(pixels), idx_labels(labels))
    assert len(data) == 5
    assert data.image_shape == (1, 4, 4)
    assert data.images.dtype == np.float32
    assert_array_equal(data.images[:, 0], pixels.astype(np.float32) / np.float32(255))
    assert_array_equal(data.labels, labels)
    assert data[2].label == 9


def test_idx_round_trip_is_byte_exact(mnist_like):
    pixels, labels = mnist_like
    img_bytes, lab_bytes = idx_images(pixels), idx_labels(labels)
    assert serialize_idx(parse_idx(img_bytes, lab_bytes)) == (img_bytes, lab_bytes)


def test_four_dim_idx_keeps_its_rank():
    img_bytes = idx_images(np.arange(8).reshape(2, 1, 2, 2))
    lab_bytes = idx_labels([0, 1])
    data = parse_idx(img_bytes, lab_bytes)
    assert data.image_shape == (1, 2, 2) and data.source_ndim == 4
    assert serialize_idx(data) == (img_bytes, lab_bytes)
    assert serialize_idx(data.subset([1, 0]))[0][:20] == img_bytes[:20]
    three = parse_idx(idx_images(np.arange(8).reshape(2, 2, 2)), lab_bytes)
    assert serialize_idx(three)[0][3] == 3


def test_cifar_round_trip_is_byte_exact():
    rng = np.random.default_rng(1)
    records = rng.integers(0, 256, size=(3, CIFAR_RECORD), dtype=np.uint8)
    records[:, 0] = [0, 9, 4]
    raw = records.tobytes()
    data = parse_cifar10(raw)
    assert data.image_shape == (3, 32, 32)
    assert_array_equal(data.labels, [0, 9, 4])
    # R plane first, row-major
    assert data.images[1, 0, 0, 1] == np.float32(records[1, 2]) / np.float32(255)
    assert data.images[1, 2, 31, 31] == np.float32(records[1, -1]) / np.float32(255)
    assert serialize_cifar10(data) == raw


def test_idx_bad_magic(mnist_like):
    pixels, labels = mnist_like
    bad = b"\x00\x00\x09\x03" + idx_images(pixels)[4:]
    with pytest.raises(ParseError) as err:
        parse_idx(bad, idx_labels(labels))
    assert err.value.offset == 0


def test_idx_truncated_payload(mnist_like):
    pixels, labels = mnist_like
    data = idx_images(pixels)[:-3]
    with pytest.raises(ParseError) as err:
        parse_idx(data, idx_labels(labels))
    assert err.value.offset == len(data)


def test_idx_trailing_bytes(mnist_like):
    pixels, labels = mnist_like
    data = idx_images(pixels)
    with pytest.raises(ParseError) as err:
        parse_idx(data + b"\x00", idx_labels(labels))
    assert err.value.offset == len(data)


def test_idx_label_count_mismatch(mnist_like):
    pixels, labels = mnist_like
    with pytest.raises(ParseError) as err:
        parse_idx(idx_images(pixels), idx_labels(labels[:4]))
    assert err.value.offset == 4 and err.value.source == "labels"


def test_idx_label_out_of_range(mnist_like):
    pixels, labels = mnist_like
    labels = labels.copy()
    labels[3] = 12
    with pytest.raises(ParseError) as err:
        parse_idx(idx_images(pixels), idx_labels(labels))
    assert err.value.offset == 8 + 3


def test_cifar_malformed_records():
    rng = np.random.default_rng(2)
    records = rng.integers(0, 10, size=(3, CIFAR_RECORD), dtype=np.uint8)
    with pytest.raises(ParseError) as err:
        parse_cifar10(records.tobytes()[:-1])
    assert err.value.offset == 2 * CIFAR_RECORD

    records[2, 0] = 10
    with pytest.raises(ParseError) as err:
        parse_cifar10(records.tobytes())
    assert err.value.offset == 2 * CIFAR_RECORD
    assert "byte offset" in str(err.value)


def test_load_dataset_from_data_dir(tmp_path, monkeypatch, mnist_like):
    pixels, labels = mnist_like
    (tmp_path / "train-images.gz").write_bytes(gzip.compress(idx_images(pixels)))
    (tmp_path / "train-labels").write_bytes(idx_labels(labels))
    monkeypatch.setenv("ADVLAB_DATA_DIR", str(tmp_path))
    data = load_dataset("idx", ["train-images.gz"], ["train-labels"])
    assert len(data) == 5


def test_load_dataset_concatenates_cifar_batches(tmp_path):
    rng = np.random.default_rng(3)
    for name, n in (("b1.bin", 2), ("b2.bin", 3)):
        records = rng.integers(0, 10, size=(n, CIFAR_RECORD), dtype=np.uint8)
        (tmp_path / name).write_bytes(records.tobytes())
    data = load_dataset("cifar10", [tmp_path / "b1.bin", tmp_path / "b2.bin"])
    assert len(data) == 5


def test_load_dataset_missing_file(tmp_path):
    with pytest.raises(DataError) as err:
        load_dataset("cifar10", [tmp_path / "nope.bin"])
    assert "nope.bin" in str(err.value)


def test_dataset_validation_and_immutability():
    with pytest.raises(InvalidArgumentError):
        Dataset(np.full((1, 1, 2, 2), 1.5), [0], 2)
    with pytest.raises(InvalidArgumentError):
        Dataset(np.zeros((1, 1, 2, 2)), [2], 2)
    source = np.zeros((2, 1, 2, 2), dtype=np.float32)
    data = Dataset(source, [0, 1], 2)
    assert source.flags.writeable
    with pytest.raises(ValueError):
        data.images[0, 0, 0, 0] = 1


def test_subset_keeps_order():
    data = Dataset(np.linspace(0, 1, 4).reshape(4, 1, 1, 1), [0, 1, 0, 1], 2, "toy")
    sub = data.subset([3, 1], tag="pick")
    assert_array_equal(sub.labels, [1, 1])
    assert sub.images[0, 0, 0, 0] == data.images[3, 0, 0, 0]
    assert sub.provenance == "toy[pick]"


def test_targets_differ_from_labels_and_replay():
    rng = np.random.default_rng(4)
    data = Dataset(np.zeros((50, 1, 2, 2)), rng.integers(0, 10, size=50), 10)
    first = assign_targets(data, seed=9)
    again = assign_targets(data, seed=9)
    assert_array_equal(first.targets, again.targets)
    assert np.all(first.targets != data.labels)
    assert first.targets.min() >= 0 and first.targets.max() < 10
    assert not np.array_equal(first.targets, assign_targets(data, seed=10).targets)


def test_targets_need_two_classes():
    with pytest.raises(InvalidArgumentError):
        assign_targets(Dataset(np.zeros((1, 1, 2, 2)), [0], 1), seed=0)


def test_eval_subset_is_seeded_prefix():
    data = Dataset(np.zeros((20, 1, 2, 2)), np.zeros(20, dtype=int), 2)
    small = eval_subset(data, 5, seed=1)
    large = eval_subset(data, 12, seed=1)
    assert len(set(small.tolist())) == 5
    assert_array_equal(large[:5], small)


def test_small_idx_and_cifar_examples():
    pixels = np.array([[[0, 255], [10, 20]], [[1, 2], [3, 4]]], dtype=np.uint8)
    data = parse_idx(idx_images(pixels), idx_labels([0, 1]))
    assert data.image_shape == (1, 2, 2)
    assert data.images[0, 0, 0, 1] == 1.0
    with pytest.raises(ParseError) as err:
        parse_idx(b"", idx_labels([0]))
    assert err.value.offset == 0

    black = parse_cifar10(bytes(2 * CIFAR_RECORD))
    assert len(black) == 2 and not black.images.any()
    assert_array_equal(black.labels, [0, 0])
    with pytest.raises(ParseError):
        parse_cifar10(bytes(CIFAR_RECORD - 1))


def test_two_classes_force_the_other_label():
    data = Dataset(np.zeros((6, 1, 2, 2)), [1, 1, 0, 1, 0, 0], 2)
    assert_array_equal(assign_targets(data, seed=3).targets, [0, 0, 1, 0, 1, 1])
