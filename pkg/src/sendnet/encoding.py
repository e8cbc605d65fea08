"""Length-prefixed framing shared by every canonical encoding in the package.

A frame is a sequence of fields, each written as a 4-byte big-endian length
followed by the raw bytes.  Integers are written as fixed-width big-endian.
"""

from __future__ import annotations

import hashlib


class DecodeError(ValueError):
    pass


def H(*parts: bytes) -> bytes:
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return h.digest()


def u64(n: int) -> bytes:
    return n.to_bytes(8, "big")


def u32(n: int) -> bytes:
    return n.to_bytes(4, "big")


def frame(*fields: bytes) -> bytes:
    out = bytearray()
    for f in fields:
        out += len(f).to_bytes(4, "big")
        out += f
    return bytes(out)


def unframe(data: bytes) -> list[bytes]:
    fields = []
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise DecodeError("truncated length prefix")
        n = int.from_bytes(data[pos:pos + 4], "big")
        pos += 4
        if pos + n > len(data):
            raise DecodeError("truncated field")
        fields.append(data[pos:pos + n])
        pos += n
    return fields


def text(s: str) -> bytes:
    return s.encode("utf-8")
