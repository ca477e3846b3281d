"""Canonical, length-prefixed byte encoding used for hashing.

Every value is a one-byte type tag followed by its body.  Variable-length
bodies carry a 4-byte big-endian length, so distinct values never share an
encoding.  Dataclasses encode their ``kind`` then their fields in
declaration order; dicts encode their items sorted by key.
"""
from __future__ import annotations

import dataclasses
import hashlib
import struct


def _len(n: int) -> bytes:
    return struct.pack(">I", n)


def encode(value) -> bytes:
    if value is None:
        return b"N"
    if isinstance(value, bool):
        return b"B" + (b"\x01" if value else b"\x00")
    if isinstance(value, int):
        body = str(value).encode("ascii")
        return b"I" + _len(len(body)) + body
    if isinstance(value, float):
        return b"F" + struct.pack(">d", value)
    if isinstance(value, str):
        body = value.encode("utf-8")
        return b"S" + _len(len(body)) + body
    if isinstance(value, (bytes, bytearray)):
        return b"Y" + _len(len(value)) + bytes(value)
    if isinstance(value, (list, tuple)):
        return b"L" + _len(len(value)) + b"".join(encode(v) for v in value)
    if isinstance(value, dict):
        items = sorted(value.items())
        return b"D" + _len(len(items)) + b"".join(encode(k) + encode(v) for k, v in items)
    if dataclasses.is_dataclass(value):
        tag = getattr(value, "kind", type(value).__name__)
        parts = [encode(getattr(value, f.name)) for f in dataclasses.fields(value)]
        return b"T" + encode(tag) + _len(len(parts)) + b"".join(parts)
    raise TypeError(f"cannot encode {type(value).__name__}")


def sha256_hex(*chunks: bytes) -> str:
    h = hashlib.sha256()
    for c in chunks:
        h.update(c)
    return h.hexdigest()
