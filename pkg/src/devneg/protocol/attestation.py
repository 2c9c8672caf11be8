"""Simulated remote attestation against a registry of certified code hashes."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass
from typing import AbstractSet, Iterable

HASH_LEN = 32

DEFAULT_CODE_HASH = hashlib.sha256(b"devneg-agent/1").digest()
DEFAULT_REGISTRY: frozenset[bytes] = frozenset({DEFAULT_CODE_HASH})


class ProtocolError(ValueError):
    pass


class AttestStatus(str, enum.Enum):
    ESTABLISHED = "established"
    ABORTED = "aborted"


def code_hash_of(build: bytes) -> bytes:
    return hashlib.sha256(build).digest()


def check_hash(h: object) -> bytes:
    if not isinstance(h, (bytes, bytearray)) or len(h) != HASH_LEN:
        raise ProtocolError("code hash must be 32 bytes")
    return bytes(h)


def make_registry(hashes: Iterable[bytes]) -> frozenset[bytes]:
    return frozenset(check_hash(h) for h in hashes)


@dataclass(frozen=True)
class AttestationRecord:
    agent_id: str
    code_hash: bytes
    registry_ok: bool = False

    @classmethod
    def against(cls, agent_id: str, code_hash: bytes, registry: AbstractSet[bytes]) -> "AttestationRecord":
        h = check_hash(code_hash)
        return cls(agent_id, h, h in registry)


def attest_session(
    a: AttestationRecord, b: AttestationRecord, registry: AbstractSet[bytes]
) -> tuple[AttestStatus, tuple[AttestationRecord, AttestationRecord]]:
    """Check both reports; the returned records carry the recomputed registry flag.

    Raises ProtocolError on a malformed hash, which callers treat as an abort.
    """
    checked = (
        AttestationRecord.against(a.agent_id, a.code_hash, registry),
        AttestationRecord.against(b.agent_id, b.code_hash, registry),
    )
    ok = all(r.registry_ok for r in checked)
    return (AttestStatus.ESTABLISHED if ok else AttestStatus.ABORTED), checked
