"""Canonical byte encoding shared by hashing, proofs and file formats.

Integers are written big-endian with no leading zero bytes (zero is the empty
string) and every variable-length field carries a 4-byte big-endian length
prefix. See ``docs/encoding.md`` for the full layout of each structure.
"""

from __future__ import annotations

import struct


class DecodeError(ValueError):
    """Raised when a byte string does not follow the canonical layout."""


def int_to_bytes(n: int) -> bytes:
    if n < 0:
        raise ValueError("canonical encoding is defined for non-negative integers only")
    return n.to_bytes((n.bit_length() + 7) // 8, "big")


def lp(data: bytes) -> bytes:
    """Length-prefix ``data``."""
    return struct.pack(">I", len(data)) + data


def enc_int(n: int) -> bytes:
    return lp(int_to_bytes(n))


def u32(n: int) -> bytes:
    return struct.pack(">I", n)


def u64(n: int) -> bytes:
    return struct.pack(">Q", n)


class Reader:
    """Cursor over a canonical byte string."""

    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise DecodeError(f"truncated input at offset {self.pos} (wanted {n} bytes)")
        out = bytes(self.data[self.pos:self.pos + n])
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def blob(self) -> bytes:
        return self.take(self.u32())

    def int(self) -> int:
        raw = self.blob()
        if raw[:1] == b"\x00":
            raise DecodeError("non-minimal integer encoding")
        return int.from_bytes(raw, "big")

    def done(self) -> bool:
        return self.pos == len(self.data)

    def expect_end(self) -> None:
        if not self.done():
            raise DecodeError(f"{len(self.data) - self.pos} trailing bytes")
