"""Big-endian, length-prefixed byte helpers shared by every binary format."""

from __future__ import annotations

import struct


class DecodeError(ValueError):
    """Raised when a byte string does not match the expected layout."""


def u8(v: int) -> bytes:
    return struct.pack(">B", v)


def u16(v: int) -> bytes:
    return struct.pack(">H", v)


def u32(v: int) -> bytes:
    return struct.pack(">I", v)


def u64(v: int) -> bytes:
    return struct.pack(">Q", v)


def lp(data: bytes) -> bytes:
    """u32 length prefix followed by ``data``."""
    return u32(len(data)) + data


def int_bytes(v: int) -> bytes:
    """Big-endian unsigned magnitude, minimal length (zero is one 0x00 byte)."""
    if v < 0:
        raise ValueError("negative integers have no unsigned encoding")
    return v.to_bytes(max(1, (v.bit_length() + 7) // 8), "big")


def lp_int(v: int) -> bytes:
    return lp(int_bytes(v))


class Reader:
    """Sequential cursor over a byte string; every short read raises."""

    __slots__ = ("data", "pos")

    def __init__(self, data: bytes) -> None:
        self.data = bytes(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise DecodeError(f"truncated input: wanted {n} bytes at offset {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def lp(self, limit: int = 1 << 26) -> bytes:
        n = self.u32()
        if n > limit:
            raise DecodeError(f"length prefix {n} exceeds limit {limit}")
        return self.take(n)

    def lp_int(self) -> int:
        raw = self.lp()
        if not raw:
            raise DecodeError("empty integer encoding")
        if len(raw) > 1 and raw[0] == 0:
            raise DecodeError("non-minimal integer encoding")
        return int.from_bytes(raw, "big")

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def rest(self) -> bytes:
        return self.take(self.remaining())

    def expect_end(self) -> None:
        if self.pos != len(self.data):
            raise DecodeError(f"{len(self.data) - self.pos} trailing bytes")
