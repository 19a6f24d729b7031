"""
Binary dataset parsers
Supports MNIST-style IDX files and the CIFAR-10 binary batch format
"""
import gzip
import os
import struct
from pathlib import Path

import numpy as np

from datasets.dataset import Dataset
from utils.errors import DataError, InvalidArgumentError, ParseError


DATA_DIR_ENV = "ADVLAB_DATA_DIR"

IDX_UBYTE = 0x08
IDX_IMAGE_NDIMS = (3, 4)  # N x H x W (grayscale) or N x C x H x W
IDX_LABEL_NDIMS = (1,)

CIFAR_SIDE = 32
CIFAR_CHANNELS = 3
CIFAR_CLASSES = 10
CIFAR_RECORD = 1 + CIFAR_CHANNELS * CIFAR_SIDE * CIFAR_SIDE  # 3073


def _read_idx(data, source, ndims):
    """Validate an IDX header and return (dims, u8 payload)"""
    if len(data) < 4:
        raise ParseError("missing IDX magic", 0, source)
    if data[0] != 0 or data[1] != 0 or data[2] != IDX_UBYTE or data[3] not in ndims:
        raise ParseError(f"bad IDX magic 0x{bytes(data[:4]).hex()}", 0, source)
    ndim = data[3]
    header = 4 + 4 * ndim
    if len(data) < header:
        raise ParseError("truncated IDX header", len(data), source)
    dims = struct.unpack(f">{ndim}I", bytes(data[4:header]))
    count = int(np.prod(dims, dtype=np.int64))
    if len(data) < header + count:
        raise ParseError(f"truncated payload, expected {count} bytes", len(data), source)
    if len(data) > header + count:
        raise ParseError("trailing bytes after payload", header + count, source)
    payload = np.frombuffer(bytes(data), dtype=np.uint8, count=count, offset=header)
    return dims, payload


def parse_idx(image_bytes, label_bytes, num_classes=10, provenance="idx"):
    """
    Parse an IDX images file and its labels file into a Dataset

    Pixels are scaled from [0, 255] to [0, 1] by division by 255.
    """
    dims, pixels = _read_idx(image_bytes, "images", IDX_IMAGE_NDIMS)
    (count,), labels = _read_idx(label_bytes, "labels", IDX_LABEL_NDIMS)
    if count != dims[0]:
        raise ParseError(f"label count {count} does not match image count {dims[0]}", 4, "labels")
    bad = np.nonzero(labels >= num_classes)[0]
    if bad.size:
        raise ParseError(f"label {labels[bad[0]]} outside [0, {num_classes})", 8 + int(bad[0]), "labels")

    shape = (dims[0], 1) + tuple(dims[1:]) if len(dims) == 3 else tuple(dims)
    images = pixels.reshape(shape).astype(np.float32) / np.float32(255)
    return Dataset(images, labels.astype(np.int64), num_classes, provenance, len(dims))


def serialize_idx(dataset):
    """
    Inverse of parse_idx; returns (image_bytes, label_bytes)

    Single-channel images are written N x H x W unless the dataset was parsed
    from an N x C x H x W file.
    """
    images = np.rint(dataset.images * 255).astype(np.uint8)
    if images.shape[1] == 1 and dataset.source_ndim != 4:
        images = images[:, 0]
    image_header = struct.pack(">BBBB", 0, 0, IDX_UBYTE, images.ndim)
    image_header += struct.pack(f">{images.ndim}I", *images.shape)
    label_header = struct.pack(">BBBBI", 0, 0, IDX_UBYTE, 1, len(dataset))
    labels = dataset.labels.astype(np.uint8)
    return image_header + images.tobytes(), label_header + labels.tobytes()


def parse_cifar10(data, provenance="cifar10"):
    """Parse CIFAR-10 binary records: 1 label byte then R, G, B planes of 32x32"""
    if len(data) % CIFAR_RECORD:
        offset = (len(data) // CIFAR_RECORD) * CIFAR_RECORD
        raise ParseError(f"length {len(data)} is not a multiple of {CIFAR_RECORD}", offset, "cifar10")
    records = np.frombuffer(bytes(data), dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0]
    bad = np.nonzero(labels >= CIFAR_CLASSES)[0]
    if bad.size:
        raise ParseError(f"label byte {labels[bad[0]]} > 9", int(bad[0]) * CIFAR_RECORD, "cifar10")
    images = records[:, 1:].reshape(-1, CIFAR_CHANNELS, CIFAR_SIDE, CIFAR_SIDE)
    return Dataset(images.astype(np.float32) / np.float32(255), labels.astype(np.int64),
                   CIFAR_CLASSES, provenance)


def serialize_cifar10(dataset):
    if dataset.image_shape != (CIFAR_CHANNELS, CIFAR_SIDE, CIFAR_SIDE) or dataset.num_classes > CIFAR_CLASSES:
        raise InvalidArgumentError("only 3x32x32 images with at most 10 classes fit CIFAR-10 records")
    pixels = np.rint(dataset.images * 255).astype(np.uint8).reshape(len(dataset), -1)
    records = np.concatenate([dataset.labels.astype(np.uint8)[:, None], pixels], axis=1)
    return records.tobytes()


def data_root():
    root = os.environ.get(DATA_DIR_ENV)
    return Path(root) if root else None


def resolve_data_path(path):
    """Relative dataset paths are looked up under ADVLAB_DATA_DIR when it is set"""
    path = Path(path)
    if not path.is_absolute() and data_root() is not None:
        path = data_root() / path
    return path


def _read_bytes(path):
    path = resolve_data_path(path)
    if not path.is_file():
        raise DataError(f"dataset file not found: {path}")
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as f:
                return f.read()
        return path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e


def load_dataset(fmt, image_paths, label_paths=(), num_classes=10):
    """
    Read one or more files of the given format and concatenate them

    Args:
        fmt: "cifar10" or "idx"
        image_paths: CIFAR batch files, or IDX image files
        label_paths: IDX label files, paired with image_paths
    """
    image_paths = list(image_paths)
    if not image_paths:
        raise DataError("no dataset files configured")
    parts = []
    if fmt == "cifar10":
        for p in image_paths:
            parts.append(parse_cifar10(_read_bytes(p), provenance=str(p)))
    elif fmt == "idx":
        label_paths = list(label_paths)
        if len(label_paths) != len(image_paths):
            raise DataError("every IDX images file needs a labels file")
        for img, lab in zip(image_paths, label_paths):
            parts.append(parse_idx(_read_bytes(img), _read_bytes(lab), num_classes, provenance=str(img)))
    else:
        raise InvalidArgumentError(f"unknown dataset format '{fmt}'")

    dataset = parts[0] if len(parts) == 1 else Dataset.concatenate(parts)
    print(f"📥 Loaded {len(dataset)} images {dataset.image_shape} from {len(parts)} {fmt} file(s)")
    return dataset
