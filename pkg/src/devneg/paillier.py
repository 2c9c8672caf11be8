"""Paillier additively homomorphic encryption (``g = n + 1`` variant).

Signed plaintexts are encoded as residues mod ``n``: values above ``n // 2``
decode as negative.

Key file layout (big-endian)::

    public:  b"DNPK" | version u8 | bits u16 | u32 len | n
    secret:  b"DNSK" | version u8 | bits u16 | u32 len | p | u32 len | q

Ciphertexts serialize as ``u32 len | magnitude`` (big-endian unsigned).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import gmpy2
from gmpy2 import mpz

from ._rng import Drbg, SeedLike
from ._wire import DecodeError, Reader, lp, lp_int, u8, u16

KEY_VERSION = 1


class PaillierError(ValueError):
    pass


@dataclass(frozen=True)
class PublicKey:
    n: int

    @property
    def nsquare(self) -> int:
        return self.n * self.n

    @property
    def bits(self) -> int:
        return self.n.bit_length()

    @property
    def max_signed(self) -> int:
        """Largest magnitude that round-trips through the signed encoding."""
        return (self.n - 1) // 2

    def encode(self) -> bytes:
        return b"DNPK" + u8(KEY_VERSION) + u16(self.bits) + lp_int(self.n)

    @classmethod
    def decode(cls, data: bytes) -> "PublicKey":
        r = Reader(data)
        pk = cls._read(r)
        r.expect_end()
        return pk

    @classmethod
    def _read(cls, r: Reader) -> "PublicKey":
        if r.take(4) != b"DNPK":
            raise DecodeError("bad public key magic")
        if r.u8() != KEY_VERSION:
            raise DecodeError("unsupported key version")
        bits = r.u16()
        n = r.lp_int()
        if n.bit_length() != bits or n < 3 or n % 2 == 0:
            raise DecodeError("malformed modulus")
        return cls(n)


@dataclass(frozen=True)
class SecretKey:
    public: PublicKey
    p: int
    q: int

    @property
    def lam(self) -> int:
        return (self.p - 1) * (self.q - 1)

    def encode(self) -> bytes:
        return b"DNSK" + u8(KEY_VERSION) + u16(self.public.bits) + lp_int(self.p) + lp_int(self.q)

    @classmethod
    def decode(cls, data: bytes) -> "SecretKey":
        r = Reader(data)
        if r.take(4) != b"DNSK":
            raise DecodeError("bad secret key magic")
        if r.u8() != KEY_VERSION:
            raise DecodeError("unsupported key version")
        bits = r.u16()
        p, q = r.lp_int(), r.lp_int()
        r.expect_end()
        if (p * q).bit_length() != bits:
            raise DecodeError("factor sizes do not match header")
        return cls(PublicKey(p * q), p, q)


@dataclass(frozen=True)
class Keypair:
    public: PublicKey
    secret: SecretKey

    @property
    def bits(self) -> int:
        return self.public.bits


def _prime(drbg: Drbg, bits: int) -> int:
    while True:
        # top two bits set so that p*q has exactly 2*bits bits
        cand = drbg.randbits(bits) | (3 << (bits - 2)) | 1
        if gmpy2.is_prime(cand, 40):
            return int(cand)
        nxt = int(gmpy2.next_prime(cand))
        if nxt.bit_length() == bits:
            return nxt


def generate_keypair(bits: int = 2048, seed: SeedLike = None) -> Keypair:
    """Modulus of exactly ``bits`` bits from two distinct ``bits/2``-bit primes."""
    if bits < 64 or bits % 2:
        raise PaillierError("key size must be an even number of bits >= 64")
    drbg = Drbg(seed, f"paillier/{bits}")
    while True:
        p = _prime(drbg, bits // 2)
        q = _prime(drbg, bits // 2)
        if p != q and gmpy2.gcd(p * q, (p - 1) * (q - 1)) == 1:
            break
    pub = PublicKey(p * q)
    return Keypair(pub, SecretKey(pub, p, q))


@lru_cache(maxsize=64)
def cached_keypair(bits: int, seed: int) -> Keypair:
    return generate_keypair(bits, seed)


def encrypt(pk: PublicKey, m: int, drbg: Optional[Drbg] = None, *, r: Optional[int] = None) -> int:
    if not 0 <= m < pk.n:
        raise PaillierError("plaintext out of range [0, n)")
    n, n2 = mpz(pk.n), mpz(pk.nsquare)
    if r is None:
        drbg = drbg or Drbg(None, "paillier/encrypt")
        while True:
            r = drbg.randrange(1, pk.n)
            if gmpy2.gcd(r, n) == 1:
                break
    # (1 + n)^m = 1 + m*n mod n^2
    c = ((1 + m * n) % n2) * gmpy2.powmod(mpz(r), n, n2) % n2
    return int(c)


def encrypt_signed(pk: PublicKey, v: int, drbg: Optional[Drbg] = None) -> int:
    if abs(v) > pk.max_signed:
        raise PaillierError("signed plaintext magnitude too large for key")
    return encrypt(pk, v % pk.n, drbg)


def decrypt(sk: SecretKey, c: int) -> int:
    pk = sk.public
    if not 0 < c < pk.nsquare:
        raise PaillierError("ciphertext out of range")
    n, n2 = mpz(pk.n), mpz(pk.nsquare)
    lam = mpz(sk.lam)
    u = gmpy2.powmod(mpz(c), lam, n2)
    l_val = (u - 1) // n
    mu = gmpy2.invert(lam, n)
    return int(l_val * mu % n)


def decrypt_signed(sk: SecretKey, c: int) -> int:
    m = decrypt(sk, c)
    n = sk.public.n
    return m - n if m > n // 2 else m


def hom_add(pk: PublicKey, c1: int, c2: int) -> int:
    return int(mpz(c1) * mpz(c2) % pk.nsquare)


def hom_add_plain(pk: PublicKey, c: int, k: int) -> int:
    """Ciphertext of ``m + k`` from a ciphertext of ``m`` (k may be negative)."""
    n = pk.n
    return int(mpz(c) * ((1 + (k % n) * n) % pk.nsquare) % pk.nsquare)


def hom_scale(pk: PublicKey, c: int, k: int) -> int:
    """Ciphertext of ``k * m`` (k reduced mod n, so negatives negate)."""
    return int(gmpy2.powmod(mpz(c), mpz(k % pk.n), pk.nsquare))


def hom_neg(pk: PublicKey, c: int) -> int:
    return int(gmpy2.invert(mpz(c), pk.nsquare))


def encode_ciphertext(c: int, pk: PublicKey) -> bytes:
    width = (pk.nsquare.bit_length() + 7) // 8
    return lp(c.to_bytes(width, "big"))


def decode_ciphertext(r: Reader, pk: PublicKey) -> int:
    raw = r.lp(1 << 16)
    c = int.from_bytes(raw, "big")
    if not 0 < c < pk.nsquare:
        raise DecodeError("ciphertext out of range")
    return c
