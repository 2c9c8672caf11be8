"""Pedersen commitments to secret price bounds and range proofs for offers.

A party commits to ``p_min`` and ``p_max`` once per session as
``C = v*H + r*G`` on secp256k1. For a public offer ``p`` it then proves
``p_min <= p <= p_max`` without opening either commitment:

* ``D_lo = p*H - C_min`` commits to ``p - p_min`` and
  ``D_hi = C_max - p*H`` commits to ``p_max - p``;
* each difference is split into ``k`` bit commitments ``B_i`` whose
  blindings are chosen so that ``sum(2^i * B_i) == D`` exactly;
* every ``B_i`` carries a two-branch OR proof that it commits to 0 or 1.

All ``2k`` OR proofs share one Fiat-Shamir challenge hashed over the
session id, the offer, both commitments and every prover message, so a
proof is bound to exactly one ``(offer, C_min, C_max, session_id)``.

Serialized proof layout (big-endian)::

    version u8 | k u8 | group_id u8
    u32 count | count * 33-byte bit commitments      (count = 2k)
    u32 count | count * 32-byte branch-0 challenges  (count = 2k)
    u32 count | count * 32-byte responses z0, z1     (count = 4k)
    u32 count | count * 32-byte Fiat-Shamir tag      (count = 1)
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Union

from . import group as grp
from ._rng import Drbg, SeedLike
from ._wire import DecodeError, Reader, u8, u32, u64

PROOF_VERSION = 1
DEFAULT_BITS = 32
_DOMAIN = b"devneg/range-proof/v1"


class RangeProofError(ValueError):
    """Raised by the prover when no valid proof exists."""


class Role(str, enum.Enum):
    BUYER = "buyer"
    SELLER = "seller"


@dataclass(frozen=True)
class Commitment:
    point: bytes  # 33-byte compressed secp256k1 point

    def hex(self) -> str:
        return self.point.hex()


def commit(value: int, blinding: int) -> Commitment:
    if value < 0:
        raise ValueError("committed values are non-negative")
    p = grp.add(grp.mul(grp.H, value), grp.base_mul(blinding))
    if p is None:
        raise RangeProofError("degenerate commitment")
    return Commitment(grp.encode_point(p))


def open_commitment(c: Commitment, value: int, blinding: int) -> bool:
    try:
        return value >= 0 and commit(value, blinding) == c
    except RangeProofError:
        return False


@dataclass(frozen=True)
class PrivateConstraint:
    """A party's secret price interval plus session commitments to its bounds.

    The blinding factors never leave the owning agent; only the two
    commitments are published.
    """

    p_min: int
    p_max: int
    role: Role
    commitment_min: Commitment
    commitment_max: Commitment
    blinding_min: int = field(repr=False)
    blinding_max: int = field(repr=False)
    k: int = DEFAULT_BITS

    @classmethod
    def create(
        cls, p_min: int, p_max: int, role: Union[Role, str], rng_seed: SeedLike = None, k: int = DEFAULT_BITS
    ) -> "PrivateConstraint":
        cmin, cmax, rmin, rmax = commit_bounds(p_min, p_max, rng_seed, k)
        return cls(p_min, p_max, Role(role), cmin, cmax, rmin, rmax, k)

    def contains(self, price: int) -> bool:
        return self.p_min <= price <= self.p_max

    def check(self) -> bool:
        return (
            0 <= self.p_min <= self.p_max < (1 << self.k)
            and open_commitment(self.commitment_min, self.p_min, self.blinding_min)
            and open_commitment(self.commitment_max, self.p_max, self.blinding_max)
        )


def commit_bounds(
    p_min: int, p_max: int, rng_seed: SeedLike = None, k: int = DEFAULT_BITS
) -> tuple[Commitment, Commitment, int, int]:
    """Commitments to both bounds and their blindings ``(cmin, cmax, rmin, rmax)``."""
    if not 0 <= p_min <= p_max:
        raise ValueError("need 0 <= p_min <= p_max")
    if p_max >= (1 << k):
        raise ValueError(f"bound exceeds 2^{k}")
    drbg = Drbg(rng_seed, "commit-bounds")
    rmin = drbg.randrange(1, grp.ORDER)
    rmax = drbg.randrange(1, grp.ORDER)
    return commit(p_min, rmin), commit(p_max, rmax), rmin, rmax


@dataclass(frozen=True)
class RangeProof:
    k: int
    bit_commitments: tuple[bytes, ...]
    challenges: tuple[int, ...]
    responses: tuple[int, ...]
    fiat_shamir_tag: bytes
    version: int = PROOF_VERSION
    group_id: int = grp.GROUP_ID

    def encode(self) -> bytes:
        out = [u8(self.version), u8(self.k), u8(self.group_id)]
        out.append(u32(len(self.bit_commitments)))
        out.extend(self.bit_commitments)
        out.append(u32(len(self.challenges)))
        out.extend(grp.scalar_bytes(e) for e in self.challenges)
        out.append(u32(len(self.responses)))
        out.extend(grp.scalar_bytes(z) for z in self.responses)
        out.append(u32(1))
        out.append(self.fiat_shamir_tag)
        return b"".join(out)

    @classmethod
    def decode(cls, data: bytes) -> "RangeProof":
        r = Reader(data)
        version, k, gid = r.u8(), r.u8(), r.u8()
        if version != PROOF_VERSION:
            raise DecodeError(f"unsupported proof version {version}")
        if gid != grp.GROUP_ID:
            raise DecodeError(f"unsupported group id {gid}")
        if not 1 <= k <= 64:
            raise DecodeError("bit width out of range")

        def array(expected: int, width: int) -> list[bytes]:
            if r.u32() != expected:
                raise DecodeError("component count mismatch")
            return [r.take(width) for _ in range(expected)]

        bits = array(2 * k, grp.POINT_LEN)
        chal = [_scalar(b) for b in array(2 * k, grp.SCALAR_LEN)]
        resp = [_scalar(b) for b in array(4 * k, grp.SCALAR_LEN)]
        tag = array(1, 32)[0]
        r.expect_end()
        return cls(k, tuple(bits), tuple(chal), tuple(resp), tag, version, gid)

    @property
    def size(self) -> int:
        return len(self.encode())


def _scalar(raw: bytes) -> int:
    v = int.from_bytes(raw, "big")
    if v >= grp.ORDER:
        raise DecodeError("non-canonical scalar")
    return v


def _offer_point(offer: int) -> grp.Point:
    return grp.mul(grp.H, offer)


def _difference_points(offer: int, cmin: grp.Point, cmax: grp.Point) -> tuple[grp.Point, grp.Point]:
    ph = _offer_point(offer)
    return grp.sub(ph, cmin), grp.sub(cmax, ph)


def _challenge(
    k: int,
    offer: int,
    cmin: bytes,
    cmax: bytes,
    session_id: bytes,
    bit_commitments: list[bytes],
    announcements: list[bytes],
) -> bytes:
    h = hashlib.sha256(_DOMAIN)
    h.update(u8(grp.GROUP_ID) + u8(k) + u32(len(session_id)) + session_id + u64(offer))
    h.update(cmin + cmax + grp.encode_point(grp.H))
    for b in bit_commitments:
        h.update(b)
    for a in announcements:
        h.update(a)
    return h.digest()


def _bits(value: int, k: int) -> list[int]:
    return [(value >> i) & 1 for i in range(k)]


def _bit_blindings(total: int, k: int, drbg: Drbg) -> list[int]:
    """Random blindings ``r_i`` with ``sum(2^i r_i) == total (mod order)``."""
    rs = [drbg.randrange(1, grp.ORDER) for _ in range(k - 1)]
    acc = sum(r << i for i, r in enumerate(rs)) % grp.ORDER
    last = (total - acc) * pow(1 << (k - 1), -1, grp.ORDER) % grp.ORDER
    return rs + [last]


def prove_in_range(
    offer: int, c: PrivateConstraint, session_id: bytes, rng_seed: SeedLike = None
) -> RangeProof:
    if not c.p_min <= offer <= c.p_max:
        raise RangeProofError("offer outside the committed range; refusing to prove")
    k = c.k
    drbg = Drbg(rng_seed, "range-proof")
    # (difference value, blinding) of D_lo and D_hi
    sides = [(offer - c.p_min, -c.blinding_min % grp.ORDER), (c.p_max - offer, c.blinding_max)]

    bit_points: list[grp.Point] = []
    bit_values: list[int] = []
    blindings: list[int] = []
    for value, rho in sides:
        bits = _bits(value, k)
        rs = _bit_blindings(rho, k, drbg)
        for b, r in zip(bits, rs):
            p = grp.add_base_mul(grp.H, r) if b else grp.base_mul(r)
            if p is None:
                raise RangeProofError("degenerate bit commitment; retry with another seed")
            bit_points.append(p)
            bit_values.append(b)
            blindings.append(r)

    neg_h = grp.neg(grp.H)
    announcements: list[bytes] = []
    state = []
    for p, b in zip(bit_points, bit_values):
        w = drbg.randrange(1, grp.ORDER)
        e_sim = drbg.randbelow(grp.ORDER)
        z_sim = drbg.randbelow(grp.ORDER)
        other = grp.add(p, neg_h) if b == 0 else p  # statement of the simulated branch
        a_real = grp.base_mul(w)
        a_sim = grp.add_base_mul(grp.mul(other, -e_sim), z_sim)
        a0, a1 = (a_real, a_sim) if b == 0 else (a_sim, a_real)
        announcements.append(grp.encode_point(a0))
        announcements.append(grp.encode_point(a1))
        state.append((w, e_sim, z_sim))

    encoded_bits = [grp.encode_point(p) for p in bit_points]
    tag = _challenge(
        k, offer, c.commitment_min.point, c.commitment_max.point, session_id, encoded_bits, announcements
    )
    e = int.from_bytes(tag, "big") % grp.ORDER

    challenges: list[int] = []
    responses: list[int] = []
    for b, r, (w, e_sim, z_sim) in zip(bit_values, blindings, state):
        e_real = (e - e_sim) % grp.ORDER
        z_real = (w + e_real * r) % grp.ORDER
        if b == 0:
            challenges.append(e_real)
            responses.extend((z_real, z_sim))
        else:
            challenges.append(e_sim)
            responses.extend((z_sim, z_real))
    return RangeProof(k, tuple(encoded_bits), tuple(challenges), tuple(responses), tag)


def verify_in_range(
    offer: int,
    cmin: Commitment,
    cmax: Commitment,
    proof: Union[RangeProof, bytes],
    session_id: bytes,
) -> bool:
    """True iff ``proof`` is valid for exactly this tuple. Never raises on bad input."""
    try:
        return _verify(offer, cmin, cmax, proof, session_id)
    except (DecodeError, grp.GroupError, ValueError, TypeError, OverflowError):
        return False


def _verify(offer: int, cmin: Commitment, cmax: Commitment, proof, session_id: bytes) -> bool:
    if isinstance(proof, (bytes, bytearray)):
        proof = RangeProof.decode(bytes(proof))
    k = proof.k
    if offer < 0 or offer >= (1 << 64):
        return False
    if (
        len(proof.bit_commitments) != 2 * k
        or len(proof.challenges) != 2 * k
        or len(proof.responses) != 4 * k
        or len(proof.fiat_shamir_tag) != 32
    ):
        return False
    cmin_p = grp.decode_point(cmin.point)
    cmax_p = grp.decode_point(cmax.point)
    d_lo, d_hi = _difference_points(offer, cmin_p, cmax_p)
    points = [grp.decode_point(b) for b in proof.bit_commitments]

    # sum(2^i B_i) must reproduce each difference commitment
    for side, target in ((points[:k], d_lo), (points[k:], d_hi)):
        acc: grp.Point = None
        for p in reversed(side):
            acc = grp.add(acc, acc, p)
        if grp.encode_point(acc) != grp.encode_point(target):
            return False

    e = int.from_bytes(proof.fiat_shamir_tag, "big") % grp.ORDER
    neg_h = grp.neg(grp.H)
    announcements: list[bytes] = []
    for i, p in enumerate(points):
        e0 = proof.challenges[i]
        e1 = (e - e0) % grp.ORDER
        z0, z1 = proof.responses[2 * i], proof.responses[2 * i + 1]
        a0 = grp.add_base_mul(grp.mul(p, -e0), z0)
        a1 = grp.add_base_mul(grp.mul(grp.add(p, neg_h), -e1), z1)
        announcements.append(grp.encode_point(a0))
        announcements.append(grp.encode_point(a1))
    expected = _challenge(k, offer, cmin.point, cmax.point, session_id, list(proof.bit_commitments), announcements)
    return expected == proof.fiat_shamir_tag
