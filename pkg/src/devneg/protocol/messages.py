"""Wire messages exchanged between negotiation endpoints.

Canonical encoding, hashed into audit logs and transcripts::

    kind u8 | sender[16] | sequence u64 | payload_len u32 | payload

Sender ids are 1-16 bytes of ASCII without NUL, right-padded with NUL.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

from .._wire import DecodeError, Reader, u8, u32, u64
from ..group import POINT_LEN
from ..proofs import Commitment

SENDER_LEN = 16
HASH_LEN = 32


class MessageKind(enum.IntEnum):
    ATTEST = 1
    FEAS_COMMIT = 2
    FEAS_BLIND = 3
    FEAS_RESULT = 4
    OFFER = 5
    ACCEPT = 6
    ABORT = 7


class AbortReason(enum.IntEnum):
    ATTEST_FAILED = 1
    INFEASIBLE = 2
    PROOF_REJECTED = 3
    TIMEOUT = 4
    SAFETY = 5
    PROTOCOL = 6


def encode_sender(agent_id: str) -> bytes:
    raw = agent_id.encode("ascii")
    if not 1 <= len(raw) <= SENDER_LEN or b"\x00" in raw:
        raise ValueError("agent ids are 1-16 ASCII bytes without NUL")
    return raw.ljust(SENDER_LEN, b"\x00")


def decode_sender(raw: bytes) -> str:
    stripped = raw.rstrip(b"\x00")
    if not stripped or b"\x00" in stripped:
        raise DecodeError("malformed sender id")
    try:
        return stripped.decode("ascii")
    except UnicodeDecodeError:
        raise DecodeError("sender id is not ASCII") from None


@dataclass(frozen=True)
class NegotiationMessage:
    kind: MessageKind
    sender: str
    sequence: int
    payload: bytes = b""

    def encode(self) -> bytes:
        return (
            u8(int(self.kind))
            + encode_sender(self.sender)
            + u64(self.sequence)
            + u32(len(self.payload))
            + self.payload
        )

    @classmethod
    def decode(cls, data: bytes) -> "NegotiationMessage":
        r = Reader(data)
        msg = cls.read(r)
        r.expect_end()
        return msg

    @classmethod
    def read(cls, r: Reader) -> "NegotiationMessage":
        tag = r.u8()
        try:
            kind = MessageKind(tag)
        except ValueError:
            raise DecodeError(f"unknown message kind {tag}") from None
        sender = decode_sender(r.take(SENDER_LEN))
        seq = r.u64()
        payload = r.lp(1 << 24)
        return cls(kind, sender, seq, payload)


# payload helpers -------------------------------------------------------


@dataclass(frozen=True)
class AttestPayload:
    code_hash: bytes
    commitment_min: Commitment
    commitment_max: Commitment

    def encode(self) -> bytes:
        return self.code_hash + self.commitment_min.point + self.commitment_max.point

    @classmethod
    def decode(cls, data: bytes) -> "AttestPayload":
        if len(data) != HASH_LEN + 2 * POINT_LEN:
            raise DecodeError("attestation payload has wrong length")
        return cls(
            data[:HASH_LEN],
            Commitment(data[HASH_LEN : HASH_LEN + POINT_LEN]),
            Commitment(data[HASH_LEN + POINT_LEN :]),
        )


@dataclass(frozen=True)
class OfferPayload:
    price: int
    round: int
    proof: bytes  # empty when proofs are disabled

    def encode(self) -> bytes:
        return u64(self.price) + u32(self.round) + self.proof

    @classmethod
    def decode(cls, data: bytes) -> "OfferPayload":
        r = Reader(data)
        price, rnd = r.u64(), r.u32()
        if rnd < 1:
            raise DecodeError("offer rounds are 1-based")
        return cls(price, rnd, r.rest())


def encode_accept(price: int, proof: bytes = b"") -> bytes:
    return u64(price) + proof


def decode_accept(data: bytes) -> tuple[int, bytes]:
    """``(settle price, proof of that price against the sender's bounds)``."""
    r = Reader(data)
    return r.u64(), r.rest()


def encode_abort(reason: AbortReason, detail: str = "") -> bytes:
    return u8(int(reason)) + detail.encode("utf-8")


def decode_abort(data: bytes) -> tuple[AbortReason, str]:
    if not data:
        raise DecodeError("empty abort payload")
    try:
        reason = AbortReason(data[0])
    except ValueError:
        raise DecodeError("unknown abort reason") from None
    return reason, data[1:].decode("utf-8", errors="replace")


class SequenceTracker:
    """Enforces strictly increasing sequence numbers per sender."""

    def __init__(self) -> None:
        self._last: dict[str, int] = {}

    def check(self, msg: NegotiationMessage) -> bool:
        last: Optional[int] = self._last.get(msg.sender)
        if last is not None and msg.sequence <= last:
            return False
        self._last[msg.sender] = msg.sequence
        return True
