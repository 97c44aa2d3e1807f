"""Binary checkpoint format.

Layout (all integers little-endian):

    magic   4 bytes  b"SPA1"
    version 1 byte   0x01
    count   uint32   number of records
    record: name_len uint16, name utf-8, rank uint8, dims uint32 * rank,
            values float32 * prod(dims)

Weights are stored and restored as raw single-precision bytes, so a
save/load round trip is bitwise exact.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"SPA1"
VERSION = 1


def save_arrays(path, items):
    """Write (name, array) pairs; arrays are cast to little-endian float32."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<B", VERSION)
    items = list(items)
    blob += struct.pack("<I", len(items))
    for name, arr in items:
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        blob += struct.pack("<H", len(raw))
        blob += raw
        blob += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            blob += struct.pack("<I", d)
        blob += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"truncated checkpoint {self.path}: needed {n} bytes at "
                f"offset {self.pos}, file has {len(self.data)}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self):
        return struct.unpack("<B", self.take(1))[0]

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def load_arrays(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into {name: float32 array}."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc

    r = _Reader(data, path)
    magic = r.take(4)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r} in {path} (expected {MAGIC!r})")
    version = r.u8()
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} in {path}")
    count = r.u32()
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = r.u16()
        try:
            name = r.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"corrupt record name in {path}") from exc
        rank = r.u8()
        dims = tuple(r.u32() for _ in range(rank))
        n = 1
        for d in dims:
            n *= d
        if n > 1_000_000_000:
            raise FormatError(f"implausible record size {dims} in {path}")
        values = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims)
        if name in out:
            raise FormatError(f"duplicate record {name!r} in {path}")
        out[name] = values.astype(np.float32)
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after records in {path}")
    return out


def save_network(path, network):
    save_arrays(path, [(n, t.data) for n, t in network.parameters()])


def load_into_network(path, network):
    network.load_arrays(load_arrays(path))
