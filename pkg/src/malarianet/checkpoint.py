"""Bit-exact binary checkpoints for model weights and BN running statistics.

File layout (all integers little-endian)::

    magic   4 bytes  "MCKP"
    version u32      1
    meta    u32 length + UTF-8 JSON (class_names, input shape, seed, config)
    count   u32      number of tensor entries
    entry*  name_len u32, name UTF-8, ndim u32, dims u32 each,
            dtype u8 (0 = f32, 1 = f64), raw little-endian scalars
    crc32   u32      over every byte after the magic, up to here

The CRC turns any single flipped byte into a structured load failure
instead of a silently wrong model. Saving is deterministic, so
load -> save reproduces byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .exceptions import (
    BadMagicError,
    CheckpointError,
    CorruptPayloadError,
    TensorMismatchError,
    TruncatedError,
    VersionError,
)
from .model import ModelGraph, build_model

MAGIC = b"MCKP"
FORMAT_VERSION = 1
_DTYPE_TAG = {"f32": 0, "f64": 1}
_TAG_NP = {0: "<f4", 1: "<f8"}
_NP_TAG = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


# ---------------------------------------------------------------------------
# low-level encode/decode
# ---------------------------------------------------------------------------


def write_checkpoint(path, metadata: dict, tensors: list[tuple[str, np.ndarray]]) -> None:
    body = bytearray()
    body += struct.pack("<I", FORMAT_VERSION)
    meta = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body += struct.pack("<I", len(meta)) + meta
    body += struct.pack("<I", len(tensors))
    seen = set()
    for name, arr in tensors:
        if name in seen:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        seen.add(name)
        tag = _NP_TAG.get(arr.dtype)
        if tag is None:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        body += struct.pack("<I", len(nb)) + nb
        body += struct.pack("<I", arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
        body += struct.pack("<B", tag)
        body += arr.astype(_TAG_NP[tag], copy=False).tobytes()
    crc = zlib.crc32(bytes(body)) & 0xFFFFFFFF
    Path(path).write_bytes(MAGIC + bytes(body) + struct.pack("<I", crc))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.ofs = 0

    def take(self, n: int) -> bytes:
        if self.ofs + n > len(self.buf):
            raise TruncatedError(
                f"file ends at byte {len(self.buf)}, needed {self.ofs + n}"
            )
        out = self.buf[self.ofs : self.ofs + n]
        self.ofs += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path} is not a checkpoint (bad magic)")
    if len(raw) < 12:
        raise TruncatedError(f"{path} is shorter than any valid checkpoint")
    body, crc_bytes = raw[4:-4], raw[-4:]

    r = _Reader(body)
    version = r.u32()
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    meta_len = r.u32()
    meta_raw = r.take(meta_len)
    count = r.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8", errors="replace")
        ndim = r.u32()
        if ndim > 32:
            raise TruncatedError(f"implausible rank {ndim} for tensor {name!r}")
        dims = tuple(r.u32() for _ in range(ndim))
        tag = r.u8()
        if tag not in _TAG_NP:
            raise CorruptPayloadError(f"unknown dtype tag {tag} for tensor {name!r}")
        dt = np.dtype(_TAG_NP[tag])
        numel = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        data = r.take(numel * dt.itemsize)
        tensors[name] = np.frombuffer(data, dtype=dt).reshape(dims).copy()
    if r.ofs != len(body):
        raise TruncatedError(f"{len(body) - r.ofs} trailing bytes after tensor table")

    if (zlib.crc32(body) & 0xFFFFFFFF) != struct.unpack("<I", crc_bytes)[0]:
        raise CorruptPayloadError(f"{path} checksum mismatch: payload bytes corrupted")

    try:
        metadata = json.loads(meta_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptPayloadError(f"metadata is not valid JSON: {exc}") from exc
    return metadata, tensors


# ---------------------------------------------------------------------------
# model-level save/load
# ---------------------------------------------------------------------------


def save(model: ModelGraph, path, config: dict | None = None) -> None:
    """Write every named tensor (weights and running stats) plus metadata."""
    metadata = {
        "class_names": list(model.class_names),
        "input_shape": [3, 224, 224],
        "seed": getattr(model, "seed", 0),
        "dtype": getattr(model, "dtype", "f32"),
        "config": config or {},
    }
    write_checkpoint(path, metadata, [(p.name, p.value.data) for p in model.all_tensors()])


def load(path, model_factory=build_model) -> ModelGraph:
    """Rebuild the architecture and restore tensors bit-exactly from file."""
    metadata, tensors = read_checkpoint(path)
    model = model_factory(
        seed=int(metadata.get("seed", 0)), dtype=metadata.get("dtype", "f32")
    )
    expected = model.tensor_by_name()
    missing = sorted(set(expected) - set(tensors))
    if missing:
        raise TensorMismatchError(f"checkpoint is missing tensors: {', '.join(missing)}")
    extra = sorted(set(tensors) - set(expected))
    if extra:
        raise TensorMismatchError(f"checkpoint has unknown tensors: {', '.join(extra)}")
    for name, param in expected.items():
        arr = tensors[name]
        if arr.shape != param.value.shape:
            raise TensorMismatchError(
                f"tensor {name!r}: checkpoint shape {arr.shape} != model shape {param.value.shape}"
            )
        if arr.dtype != param.value.data.dtype:
            raise TensorMismatchError(
                f"tensor {name!r}: checkpoint dtype {arr.dtype} != model dtype {param.value.data.dtype}"
            )
        param.assign(arr)
    return model


def checkpoint_version(path) -> str:
    """Short content hash used as the served model's version string."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:12]
