"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"PADA" | version u32 | block_0 | block_1 | ... | block_4

    block := count u32, then `count` entries
    entry := name_len u16 | name (utf-8) | ndim u8 | dims u32 * ndim | f64 payload

Blocks in order: parameters, path distribution, data distribution, RNG
streams, trainer state. Absent blocks are written with count 0.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError

MAGIC = b"PADA"
VERSION = 1
BLOCKS = ("params", "path_dist", "data_dist", "rng", "trainer")

Entries = dict[str, np.ndarray]


@dataclass
class Checkpoint:
    params: Entries = field(default_factory=dict)
    path_dist: Entries = field(default_factory=dict)
    data_dist: Entries = field(default_factory=dict)
    rng: Entries = field(default_factory=dict)
    trainer: Entries = field(default_factory=dict)


def _encode_block(entries: Entries, out: io.BytesIO) -> None:
    out.write(struct.pack("<I", len(entries)))
    for name, arr in entries.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise ValueError(f"entry {name!r} cannot be framed")
        out.write(struct.pack("<H", len(raw)))
        out.write(raw)
        out.write(struct.pack("<B", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(np.ascontiguousarray(arr).tobytes())


def encode(ckpt: Checkpoint) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", VERSION))
    for block in BLOCKS:
        _encode_block(getattr(ckpt, block), out)
    return out.getvalue()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise ParseError(f"truncated checkpoint: need {n} bytes for {what} at byte {self.pos}, file has {len(self.buf)}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise ParseError("not a checkpoint: bad magic at byte 0")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version} at byte 4, expected {VERSION}")
    blocks = {}
    for block in BLOCKS:
        (count,) = r.unpack("<I", f"{block} count")
        entries: Entries = {}
        for _ in range(count):
            (nlen,) = r.unpack("<H", "name length")
            try:
                name = r.take(nlen, "name").decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ParseError(f"invalid entry name before byte {r.pos}") from exc
            (ndim,) = r.unpack("<B", f"ndim of {name}")
            dims = r.unpack(f"<{ndim}I", f"dims of {name}")
            n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            payload = r.take(8 * n, f"payload of {name}")
            if name in entries:
                raise ParseError(f"duplicate entry {name!r} in block {block}")
            entries[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
        blocks[block] = entries
    if r.pos != len(buf):
        raise ParseError(f"trailing data after byte {r.pos} ({len(buf) - r.pos} bytes)")
    return Checkpoint(**blocks)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    data = encode(ckpt)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(buf)
