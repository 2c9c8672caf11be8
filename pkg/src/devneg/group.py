"""secp256k1 point arithmetic on top of libsecp256k1 (via coincurve).

Points are ``coincurve.PublicKey`` objects, with ``None`` standing for the
identity, which libsecp256k1 cannot represent. The identity encodes as 33
zero bytes so it can still be hashed into transcripts.
"""

from __future__ import annotations

import hashlib
from typing import Optional

from coincurve import PublicKey

GROUP_ID = 1
GROUP_NAME = "secp256k1"
ORDER = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141
POINT_LEN = 33
SCALAR_LEN = 32
IDENTITY_BYTES = bytes(POINT_LEN)

Point = Optional[PublicKey]


class GroupError(ValueError):
    pass


def scalar_bytes(s: int) -> bytes:
    return (s % ORDER).to_bytes(SCALAR_LEN, "big")


def encode_point(p: Point) -> bytes:
    return IDENTITY_BYTES if p is None else p.format(compressed=True)


def decode_point(data: bytes, allow_identity: bool = False) -> Point:
    if len(data) != POINT_LEN:
        raise GroupError("point encoding must be 33 bytes")
    if data == IDENTITY_BYTES:
        if allow_identity:
            return None
        raise GroupError("identity not allowed here")
    if data[0] not in (2, 3):
        raise GroupError("not a compressed point")
    try:
        return PublicKey(data)
    except (ValueError, TypeError) as exc:
        raise GroupError(str(exc)) from None


def base_mul(s: int) -> Point:
    s %= ORDER
    if s == 0:
        return None
    return PublicKey.from_valid_secret(s.to_bytes(SCALAR_LEN, "big"))


def mul(p: Point, s: int) -> Point:
    s %= ORDER
    if p is None or s == 0:
        return None
    return p.multiply(s.to_bytes(SCALAR_LEN, "big"))


def neg(p: Point) -> Point:
    if p is None:
        return None
    raw = p.format(compressed=True)
    return PublicKey(bytes([raw[0] ^ 1]) + raw[1:])


def add(*points: Point) -> Point:
    pts = [p for p in points if p is not None]
    if not pts:
        return None
    if len(pts) == 1:
        return pts[0]
    try:
        return PublicKey.combine_keys(pts)
    except ValueError:
        # sum is the point at infinity
        return None


def sub(p: Point, q: Point) -> Point:
    return add(p, neg(q))


def add_base_mul(p: Point, s: int) -> Point:
    """``p + s*G``; generator-table multiply plus combine beats tweak-add here."""
    return add(p, base_mul(s))


def hash_to_point(label: bytes) -> PublicKey:
    """Try-and-increment map to a point with unknown discrete log."""
    counter = 0
    while True:
        x = hashlib.sha256(b"devneg/h2c/" + label + counter.to_bytes(4, "big")).digest()
        try:
            return PublicKey(b"\x02" + x)
        except ValueError:
            counter += 1


G: PublicKey = base_mul(1)
H: PublicKey = hash_to_point(b"pedersen-H")
