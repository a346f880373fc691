"""Binary checkpoints for parameter stores.

Layout (all integers little-endian)::

    magic        8 bytes   b"CPLCKPT\\x00"
    version      uint32    FORMAT_VERSION
    agent        uint32 length + UTF-8 bytes
    config hash  uint32 length + UTF-8 bytes (hex digest)
    adam step    uint64
    n tensors    uint32
    per tensor, in store order:
        name     uint32 length + UTF-8 bytes
        ndim     uint32
        shape    ndim x uint64
        value    prod(shape) x float64 (C order)
        adam m   prod(shape) x float64
        adam v   prod(shape) x float64

Nothing else is written, so saving a freshly loaded store reproduces the
file byte for byte.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .autodiff import ParameterStore
from .errors import DataError

MAGIC = b"CPLCKPT\x00"
FORMAT_VERSION = 1
_F64 = np.dtype("<f8")


def _put_str(buf: list[bytes], s: str) -> None:
    raw = s.encode("utf-8")
    buf.append(struct.pack("<I", len(raw)))
    buf.append(raw)


def encode(store: ParameterStore, agent: str, config_hash: str) -> bytes:
    buf = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    _put_str(buf, agent)
    _put_str(buf, config_hash)
    buf.append(struct.pack("<QI", store.step, len(store.tensors)))
    for name, value in store.tensors.items():
        _put_str(buf, name)
        buf.append(struct.pack("<I", value.ndim))
        buf.append(struct.pack(f"<{value.ndim}Q", *value.shape))
        for arr in (value, store.m[name], store.v[name]):
            buf.append(np.ascontiguousarray(arr, dtype=_F64).tobytes())
    return b"".join(buf)


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")

    def array(self, shape: tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self.take(8 * count), dtype=_F64).reshape(shape).astype(np.float64)


def decode(data: bytes, path: str = "<bytes>") -> tuple[str, str, int, dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]]:
    """Parse a checkpoint into (agent, config hash, adam step, {name: (value, m, v)})."""
    rd = _Reader(data, path)
    if rd.take(len(MAGIC)) != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    (version,) = rd.unpack("<I")
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    agent = rd.string()
    chash = rd.string()
    step, n = rd.unpack("<QI")
    tensors = {}
    for _ in range(n):
        name = rd.string()
        (ndim,) = rd.unpack("<I")
        shape = tuple(rd.unpack(f"<{ndim}Q")) if ndim else ()
        tensors[name] = (rd.array(shape), rd.array(shape), rd.array(shape))
    if rd.pos != len(data):
        raise DataError(f"{path}: trailing bytes after checkpoint payload")
    return agent, chash, step, tensors


def save(path: str | os.PathLike, store: ParameterStore, agent: str, config_hash: str) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(store, agent, config_hash))


def load_into(path: str | os.PathLike, store: ParameterStore, agent: str, config_hash: str) -> None:
    """Overwrite ``store`` from ``path`` after checking agent, hash and shapes."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise DataError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        load_bytes_into(fh.read(), store, agent, config_hash, path)


def load_bytes_into(data: bytes, store: ParameterStore, agent: str, config_hash: str,
                    path: str = "<bytes>") -> None:
    got_agent, got_hash, step, tensors = decode(data, path)
    if got_agent != agent:
        raise DataError(f"{path}: checkpoint holds a {got_agent!r}, expected {agent!r}")
    if got_hash != config_hash:
        raise DataError(f"{path}: config hash mismatch ({got_hash[:12]} vs {config_hash[:12]})")
    if list(tensors) != list(store.tensors):
        raise DataError(f"{path}: tensor names differ from the model's")
    for name, (value, _, _) in tensors.items():
        if value.shape != store.tensors[name].shape:
            raise DataError(f"{path}: shape mismatch for {name!r}: "
                            f"{value.shape} vs {store.tensors[name].shape}")
    for name, (value, m, v) in tensors.items():
        store.tensors[name][...] = value
        store.m[name][...] = m
        store.v[name][...] = v
        store.grads[name].fill(0.0)
    store.step = step
    store.version += 1
