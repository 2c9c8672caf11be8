"""Seeded, hash-based deterministic randomness.

Cryptographic code in this package never touches the global ``random``
state. Every consumer gets a :class:`Drbg` keyed by a caller-supplied seed
and a purpose label, so that two runs with the same seeds produce identical
bytes and toggling one component never shifts the draws of another.
"""

from __future__ import annotations

import hashlib
import random
import secrets
import struct
from typing import Optional, Union

SeedLike = Union[int, bytes, str, None]


def seed_bytes(seed: SeedLike) -> bytes:
    if seed is None:
        return secrets.token_bytes(32)
    if isinstance(seed, bytes):
        return seed
    if isinstance(seed, str):
        return seed.encode("utf-8")
    if isinstance(seed, int):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        return seed.to_bytes(max(8, (seed.bit_length() + 7) // 8), "big")
    raise TypeError(f"unsupported seed type {type(seed).__name__}")


def derive_seed(seed: SeedLike, *labels: object) -> int:
    """Derive an independent 64-bit sub-seed from ``seed`` and labels."""
    h = hashlib.sha256(b"devneg/derive")
    h.update(seed_bytes(seed))
    for label in labels:
        raw = str(label).encode("utf-8")
        h.update(struct.pack(">I", len(raw)))
        h.update(raw)
    return int.from_bytes(h.digest()[:8], "big")


def py_random(seed: SeedLike, *labels: object) -> random.Random:
    """A stdlib ``Random`` seeded from a derived sub-seed."""
    return random.Random(derive_seed(seed, *labels))


class Drbg:
    """SHA-256 counter-mode byte stream.

    Not a certified DRBG; it exists so that key generation, blinding and
    proof nonces are reproducible from a seed in tests and simulations.
    Pass ``seed=None`` for OS entropy.
    """

    def __init__(self, seed: SeedLike, label: str = "") -> None:
        self._key = hashlib.sha256(
            b"devneg/drbg" + seed_bytes(seed) + b"/" + label.encode("utf-8")
        ).digest()
        self._counter = 0
        self._buf = b""

    def read(self, n: int) -> bytes:
        while len(self._buf) < n:
            block = hashlib.sha256(self._key + self._counter.to_bytes(8, "big")).digest()
            self._counter += 1
            self._buf += block
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def randbits(self, k: int) -> int:
        nbytes = (k + 7) // 8
        value = int.from_bytes(self.read(nbytes), "big")
        return value >> (nbytes * 8 - k)

    def randbelow(self, upper: int) -> int:
        """Uniform integer in ``[0, upper)`` by rejection sampling."""
        if upper <= 0:
            raise ValueError("upper bound must be positive")
        k = upper.bit_length()
        while True:
            v = self.randbits(k)
            if v < upper:
                return v

    def randrange(self, lo: int, hi: int) -> int:
        return lo + self.randbelow(hi - lo)

    def fork(self, label: str) -> "Drbg":
        return Drbg(self.read(32), label)


def make_drbg(seed: Optional[SeedLike], label: str) -> Drbg:
    return Drbg(seed, label)
