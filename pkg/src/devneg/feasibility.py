"""Two-party overlap predicate ``buyer_max >= seller_min`` over Paillier.

Semi-honest protocol, three messages:

1. buyer -> seller  ``FeasCommit``: buyer's public key and ``Enc(buyer_max)``
2. seller -> buyer  ``FeasBlind``: ``Enc(r * (buyer_max - seller_min) + r')``
   with ``r >= 1`` and ``0 <= r' < r`` drawn by the seller
3. buyer -> seller  ``FeasResult``: one byte, 1 if the decrypted blinded
   difference is non-negative

Because ``r' < r`` the blinded value has the sign of the difference (zero
maps to non-negative), while its magnitude is masked by ``r`` and ``r'``.
The buyer learns the bit first and forwards it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

from . import paillier
from ._rng import Drbg, SeedLike, derive_seed
from ._wire import DecodeError, Reader

VALUE_BITS = 32
DEFAULT_BLIND_BITS = 128


class FeasibilityError(ValueError):
    pass


@dataclass(frozen=True)
class FeasResult:
    feasible: bool
    transcript_hash: bytes


@dataclass(frozen=True)
class FeasTranscript:
    commit: bytes
    blind: bytes
    result: bytes
    buyer_view: int  # signed plaintext the buyer decrypted


def check_blinding_bound(key_bits: int, blind_bits: int = DEFAULT_BLIND_BITS) -> None:
    """Refuse parameters where ``r*d + r'`` could wrap the signed plaintext space."""
    if blind_bits < 1:
        raise FeasibilityError("blind_bits must be positive")
    # |r*d + r'| < 2^blind * (2^32 + 1) must stay below n/2 >= 2^(key_bits-2)
    if blind_bits + VALUE_BITS + 1 >= key_bits - 2:
        raise FeasibilityError(
            f"{key_bits}-bit key too small for {VALUE_BITS}-bit values with {blind_bits}-bit blinding"
        )


def _check_value(name: str, v: int) -> None:
    if not 0 <= v < (1 << VALUE_BITS):
        raise FeasibilityError(f"{name} must fit in {VALUE_BITS} unsigned bits")


class BuyerSide:
    """Key holder; learns the predicate bit."""

    def __init__(self, keypair: paillier.Keypair, buyer_max: int, seed: SeedLike = None) -> None:
        _check_value("buyer_max", buyer_max)
        self.keypair = keypair
        self.buyer_max = buyer_max
        self._drbg = Drbg(seed, "feas/buyer")
        self.view: Optional[int] = None

    def commit(self) -> bytes:
        pk = self.keypair.public
        ct = paillier.encrypt(pk, self.buyer_max, self._drbg)
        return pk.encode() + paillier.encode_ciphertext(ct, pk)

    def resolve(self, blind_payload: bytes) -> bytes:
        pk = self.keypair.public
        r = Reader(blind_payload)
        ct = paillier.decode_ciphertext(r, pk)
        r.expect_end()
        self.view = paillier.decrypt_signed(self.keypair.secret, ct)
        return b"\x01" if self.view >= 0 else b"\x00"


class SellerSide:
    def __init__(self, seller_min: int, seed: SeedLike = None, blind_bits: int = DEFAULT_BLIND_BITS) -> None:
        _check_value("seller_min", seller_min)
        self.seller_min = seller_min
        self.blind_bits = blind_bits
        self._drbg = Drbg(seed, "feas/seller")

    def blind(self, commit_payload: bytes) -> bytes:
        r = Reader(commit_payload)
        pk = paillier.PublicKey._read(r)
        ct = paillier.decode_ciphertext(r, pk)
        r.expect_end()
        check_blinding_bound(pk.bits, self.blind_bits)
        diff = paillier.hom_add_plain(pk, ct, -self.seller_min)
        mult = self._drbg.randrange(1, 1 << self.blind_bits)
        offset = self._drbg.randbelow(mult)
        blinded = paillier.hom_scale(pk, diff, mult)
        blinded = paillier.hom_add(pk, blinded, paillier.encrypt(pk, offset, self._drbg))
        return paillier.encode_ciphertext(blinded, pk)


def decode_result(payload: bytes) -> bool:
    if payload not in (b"\x00", b"\x01"):
        raise DecodeError("feasibility result must be a single 0/1 byte")
    return payload == b"\x01"


def transcript_digest(commit: bytes, blind: bytes, result: bytes) -> bytes:
    h = hashlib.sha256(b"devneg/feas/v1")
    for part in (commit, blind, result):
        h.update(len(part).to_bytes(4, "big"))
        h.update(part)
    return h.digest()


def _sub(seed: SeedLike, label: str) -> SeedLike:
    return None if seed is None else derive_seed(seed, label)


def run_overlap_protocol(
    buyer_max: int,
    seller_min: int,
    keypair: paillier.Keypair,
    rng_seed: SeedLike = None,
    blind_bits: int = DEFAULT_BLIND_BITS,
) -> tuple[FeasResult, FeasTranscript]:
    _check_value("buyer_max", buyer_max)
    _check_value("seller_min", seller_min)
    check_blinding_bound(keypair.bits, blind_bits)
    buyer = BuyerSide(keypair, buyer_max, _sub(rng_seed, "buyer"))
    seller = SellerSide(seller_min, _sub(rng_seed, "seller"), blind_bits)
    m1 = buyer.commit()
    m2 = seller.blind(m1)
    m3 = buyer.resolve(m2)
    result = FeasResult(decode_result(m3), transcript_digest(m1, m2, m3))
    return result, FeasTranscript(m1, m2, m3, buyer.view)


def overlap_check(
    buyer_max: int,
    seller_min: int,
    key_bits: int = 512,
    rng_seed: SeedLike = None,
    *,
    keypair: Optional[paillier.Keypair] = None,
    blind_bits: int = DEFAULT_BLIND_BITS,
) -> FeasResult:
    """Secure evaluation of ``buyer_max >= seller_min``.

    A fresh keypair is derived from ``rng_seed`` unless one is supplied
    (key generation dominates the cost of a single check).
    """
    check_blinding_bound(key_bits if keypair is None else keypair.bits, blind_bits)
    _check_value("buyer_max", buyer_max)
    _check_value("seller_min", seller_min)
    if keypair is None:
        keypair = paillier.generate_keypair(key_bits, _sub(rng_seed, "key"))
    result, _ = run_overlap_protocol(buyer_max, seller_min, keypair, rng_seed, blind_bits)
    return result
