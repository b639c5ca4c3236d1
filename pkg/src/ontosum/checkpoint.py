"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic      8 bytes  b"ONTOSUM\\x00"
    version    u32
    kind       u16 length + UTF-8            ("selector" | "summarizer")
    metadata   u32 length + UTF-8            "key=<json>" lines
    vocab      u32 length + UTF-8            tokens joined by "\\n"
    n_tensors  u32
    per tensor: u16 name length + UTF-8 name, u8 ndim, ndim x u64 dims,
                u64 value count, value count x f64
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"ONTOSUM\x00"
VERSION = 1
KINDS = ("selector", "summarizer")


class CheckpointError(ValueError):
    pass


class UnrecognizedFormat(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class ShapeMismatch(CheckpointError):
    pass


class TruncatedCheckpoint(CheckpointError):
    pass


@dataclass
class Checkpoint:
    kind: str
    vocab: list[str]
    tensors: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)
    version: int = VERSION


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()


def _blob(data: bytes, width: str = "<I") -> bytes:
    return struct.pack(width, len(data)) + data


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    if ckpt.kind not in KINDS:
        raise CheckpointError(f"unknown checkpoint kind {ckpt.kind!r}")
    meta = "".join(f"{k}={json.dumps(v, sort_keys=True)}\n" for k, v in ckpt.metadata.items())
    parts = [
        MAGIC,
        struct.pack("<I", ckpt.version),
        _blob(ckpt.kind.encode("utf-8"), "<H"),
        _blob(meta.encode("utf-8")),
        _blob("\n".join(ckpt.vocab).encode("utf-8")),
        struct.pack("<I", len(ckpt.tensors)),
    ]
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr, dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
        parts.append(_blob(name.encode("utf-8"), "<H"))
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(struct.pack("<Q", arr.size))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedCheckpoint(f"checkpoint truncated at byte {len(self.buf)} (needed {self.pos + n})")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self, width: str = "<I") -> str:
        (n,) = self.unpack(width)
        return self.take(n).decode("utf-8")


def load_checkpoint(path: str | Path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes())
    if len(r.buf) < len(MAGIC) or r.take(len(MAGIC)) != MAGIC:
        raise UnrecognizedFormat(f"unrecognized checkpoint format: {path}")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version} not supported (expected {VERSION})")
    kind = r.blob("<H")
    if kind not in KINDS:
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")
    metadata = {}
    for line in r.blob().splitlines():
        key, _, value = line.partition("=")
        metadata[key] = json.loads(value)
    vocab_text = r.blob()
    vocab = vocab_text.split("\n") if vocab_text else []
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        name = r.blob("<H")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q")
        (size,) = r.unpack("<Q")
        if int(np.prod(shape)) != size:
            raise ShapeMismatch(f"tensor {name!r}: declared shape {tuple(shape)} does not match {size} values")
        tensors[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(r.buf):
        raise CheckpointError(f"{len(r.buf) - r.pos} trailing bytes after last tensor")
    if "config" in metadata and "config_hash" in metadata:
        if config_hash(metadata["config"]) != metadata["config_hash"]:
            raise CheckpointError("config hash does not match the stored configuration")
    return Checkpoint(kind, vocab, tensors, metadata, version)
