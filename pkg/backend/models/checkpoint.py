"""
Checkpoint files

Layout: magic "AVLB", u16 format version, 8-byte spec fingerprint, then one
record per weight array: u32 name length, name bytes, u32 ndim, u32 dims,
float32 payload. All integers and floats are little-endian.
"""
import struct
from pathlib import Path

import numpy as np

from models.zoo import Model, infer_shapes, spec_fingerprint
from utils.errors import CheckpointError, InvalidArgumentError


MAGIC = b"AVLB"
FORMAT_VERSION = 1
FINGERPRINT_BYTES = 8
_HEADER = struct.Struct("<4sH8s")
_U32 = struct.Struct("<I")


def encode_checkpoint(model):
    """Serialize a model's weights, in spec layer order"""
    chunks = [_HEADER.pack(MAGIC, FORMAT_VERSION, spec_fingerprint(model.spec))]
    for name in infer_shapes(model.spec)[1]:
        array = np.ascontiguousarray(model.weights[name], dtype="<f4")
        raw_name = name.encode("utf-8")
        chunks.append(_U32.pack(len(raw_name)))
        chunks.append(raw_name)
        chunks.append(_U32.pack(array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(array.tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what, array_name=None):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint while reading {what}", array_name)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what, array_name=None):
        return _U32.unpack(self.take(4, what, array_name))[0]


def decode_checkpoint(data, spec):
    """Rebuild a Model for `spec` from checkpoint bytes"""
    data = bytes(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise CheckpointError("bad magic, not an AVLB checkpoint")
    reader = _Reader(data)
    _, version, fingerprint = _HEADER.unpack(reader.take(_HEADER.size, "header"))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    expected = spec_fingerprint(spec)
    if fingerprint != expected:
        raise CheckpointError(
            f"fingerprint mismatch: file {fingerprint.hex()} vs {spec.architecture} spec {expected.hex()}"
        )

    shapes = infer_shapes(spec)[1]
    weights = {}
    while reader.pos < len(data):
        name_len = reader.u32("a name length")
        name = reader.take(name_len, "an array name").decode("utf-8", errors="replace")
        ndim = reader.u32("ndim", name)
        dims = struct.unpack(f"<{ndim}I", reader.take(4 * ndim, "dims", name))
        count = int(np.prod(dims, dtype=np.int64))
        payload = reader.take(4 * count, "payload", name)
        if name not in shapes:
            raise CheckpointError("array not in model spec", name)
        if tuple(dims) != shapes[name]:
            raise CheckpointError(f"shape {tuple(dims)} does not match spec {shapes[name]}", name)
        weights[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)

    missing = [n for n in shapes if n not in weights]
    if missing:
        raise CheckpointError("checkpoint ends before all arrays were read", missing[0])
    try:
        return Model(spec, weights)
    except InvalidArgumentError as e:
        raise CheckpointError(str(e)) from e


def save_checkpoint(model, path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_checkpoint(model))
    except OSError as e:
        raise CheckpointError(f"cannot write {path}: {e}") from e
    return path


def load_checkpoint(path, spec):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read {path}: {e}") from e
    return decode_checkpoint(data, spec)
