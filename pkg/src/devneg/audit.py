"""Tamper-evident decision log.

Each decision record is chained to its predecessor with SHA-256
(``chain = H(canonical_bytes || previous_chain)``) and additionally committed
as a leaf of an append-only Merkle tree, which yields logarithmic-size
inclusion proofs against a single root. Roots can be anchored to an
external sink.

Byte layouts (all integers big-endian):

record canonical bytes::

    index u64 | timestamp_ms u64 | kind u8 | inputs_digest[32]
    | u32 len | reasoning utf-8 | u32 len | outcome utf-8

stored record = canonical bytes || chain_hash[32]

log file::

    b"DNAL" | version u8 (=1) | hash_alg u8 (1 = SHA-256)
    then per record: u32 len | stored record
"""

from __future__ import annotations

import enum
import hashlib
import os
import threading
import time
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Protocol, Sequence, Union

from ._wire import DecodeError, Reader, lp, u8, u32, u64

HASH_LEN = 32
MAX_REASONING_BYTES = 4096
MAX_OUTCOME_BYTES = 65536
LOG_MAGIC = b"DNAL"
LOG_VERSION = 1
HASH_ALG_SHA256 = 1

GENESIS = hashlib.sha256(b"genesis-v1").digest()


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


class DecisionKind(enum.IntEnum):
    GOAL = 1
    GUARDRAIL = 2
    PLAN = 3
    OFFER_SENT = 4
    OFFER_RECV = 5
    ACCEPT = 6
    ABORT = 7
    OUTCOME = 8


class AuditError(ValueError):
    pass


@dataclass(frozen=True)
class DecisionRecord:
    index: int
    timestamp: int
    kind: DecisionKind
    inputs_digest: bytes
    reasoning: str
    outcome: str
    chain_hash: bytes

    def canonical_bytes(self) -> bytes:
        return (
            u64(self.index)
            + u64(self.timestamp)
            + u8(int(self.kind))
            + self.inputs_digest
            + lp(self.reasoning.encode("utf-8"))
            + lp(self.outcome.encode("utf-8"))
        )

    def encode(self) -> bytes:
        return self.canonical_bytes() + self.chain_hash

    @classmethod
    def decode(cls, data: bytes) -> "DecisionRecord":
        r = Reader(data)
        index = r.u64()
        timestamp = r.u64()
        try:
            kind = DecisionKind(r.u8())
        except ValueError as exc:
            raise DecodeError(str(exc)) from None
        digest = r.take(HASH_LEN)
        try:
            reasoning = r.lp(MAX_REASONING_BYTES).decode("utf-8")
            outcome = r.lp(MAX_OUTCOME_BYTES).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(str(exc)) from None
        chain = r.take(HASH_LEN)
        r.expect_end()
        return cls(index, timestamp, kind, digest, reasoning, outcome, chain)

    def expected_chain(self, previous: bytes) -> bytes:
        return sha256(self.canonical_bytes() + previous)


# ---------------------------------------------------------------- Merkle tree

_LEAF = b"\x00"
_NODE = b"\x01"
_EMPTY = b"\x02"


def leaf_hash(data: bytes) -> bytes:
    return sha256(_LEAF + data)


def node_hash(left: bytes, right: bytes) -> bytes:
    return sha256(_NODE + left + right)


_EMPTY_LEVELS: list[bytes] = [sha256(_EMPTY)]


def empty_hash(level: int) -> bytes:
    """Root of an all-empty subtree of the given height."""
    while len(_EMPTY_LEVELS) <= level:
        prev = _EMPTY_LEVELS[-1]
        _EMPTY_LEVELS.append(node_hash(prev, prev))
    return _EMPTY_LEVELS[level]


def tree_height(n: int) -> int:
    """``ceil(log2(n))`` for n >= 1 (0 for a single leaf)."""
    return (n - 1).bit_length() if n > 1 else 0


class MerkleTree:
    """Append-only binary Merkle tree padded with empty subtrees.

    An odd node at any level is paired with the empty-subtree hash of that
    level, so the root equals the root of the tree padded to the next power
    of two and every inclusion proof has exactly ``ceil(log2 n)`` siblings.
    Appends recompute only the path of the new leaf.
    """

    def __init__(self, leaves: Iterable[bytes] = ()) -> None:
        self._levels: list[list[bytes]] = [[]]
        for leaf in leaves:
            self.append_hash(leaf)

    def __len__(self) -> int:
        return len(self._levels[0])

    @property
    def height(self) -> int:
        return tree_height(len(self))

    def append_hash(self, leaf: bytes) -> int:
        levels = self._levels
        idx = len(levels[0])
        levels[0].append(leaf)
        height = tree_height(idx + 1)
        while len(levels) <= height:
            levels.append([])
        pos = idx
        for level in range(height):
            parent = pos >> 1
            left_i = parent << 1
            row = levels[level]
            left = row[left_i]
            right = row[left_i + 1] if left_i + 1 < len(row) else empty_hash(level)
            h = node_hash(left, right)
            nxt = levels[level + 1]
            if parent < len(nxt):
                nxt[parent] = h
            else:
                nxt.append(h)
            pos = parent
        return idx

    @property
    def root(self) -> bytes:
        if not self._levels[0]:
            return empty_hash(0)
        return self._levels[self.height][0]

    def leaf(self, index: int) -> bytes:
        return self._levels[0][index]

    def proof(self, index: int) -> "MerkleProof":
        n = len(self)
        if not 0 <= index < n:
            raise IndexError(f"leaf index {index} out of range for {n} leaves")
        siblings: list[tuple[bytes, str]] = []
        pos = index
        for level in range(self.height):
            row = self._levels[level]
            sib = pos ^ 1
            sib_hash = row[sib] if sib < len(row) else empty_hash(level)
            side = "left" if sib < pos else "right"
            siblings.append((sib_hash, side))
            pos >>= 1
        return MerkleProof(index, tuple(siblings), self.root)


@dataclass(frozen=True)
class MerkleProof:
    leaf_index: int
    siblings: tuple[tuple[bytes, str], ...]
    root: bytes

    def compute_root(self, leaf: bytes) -> bytes:
        h = leaf
        for sib, side in self.siblings:
            if side == "left":
                h = node_hash(sib, h)
            elif side == "right":
                h = node_hash(h, sib)
            else:
                raise AuditError(f"bad sibling side {side!r}")
        return h

    def verify(self, leaf: bytes, trusted_root: Optional[bytes] = None) -> bool:
        """Check the proof for a leaf hash against ``trusted_root`` (or its own)."""
        target = self.root if trusted_root is None else trusted_root
        try:
            return self.compute_root(leaf) == target
        except AuditError:
            return False


def record_leaf(record: DecisionRecord) -> bytes:
    return leaf_hash(record.encode())


# ---------------------------------------------------------------- anchoring


@dataclass(frozen=True)
class AnchorReceipt:
    root: bytes
    anchored_at: int
    sink: str


class AnchorSink(Protocol):
    name: str

    def publish(self, root: bytes, at: int) -> None: ...


class NullSink:
    name = "null"

    def publish(self, root: bytes, at: int) -> None:
        return None


class LocalFileSink:
    """Append-only text file of ``<timestamp_ms> <root hex>`` lines."""

    name = "local-file"

    def __init__(self, path: Union[str, os.PathLike]) -> None:
        self.path = Path(path)

    def publish(self, root: bytes, at: int) -> None:
        with self.path.open("a", encoding="ascii") as fh:
            fh.write(f"{at} {root.hex()}\n")

    def roots(self) -> list[tuple[int, bytes]]:
        if not self.path.exists():
            return []
        out = []
        for line in self.path.read_text(encoding="ascii").splitlines():
            at, root = line.split()
            out.append((int(at), bytes.fromhex(root)))
        return out


# ---------------------------------------------------------------- log


@dataclass(frozen=True)
class ChainVerdict:
    ok: bool
    first_bad: Optional[int] = None
    checked: int = 0

    def __bool__(self) -> bool:
        return self.ok


def _wall_clock_ms() -> int:
    return time.time_ns() // 1_000_000


class AuditLog:
    """Hash-chained, Merkle-committed decision log with one writer.

    ``clock`` returns milliseconds since the epoch; simulations pass a
    deterministic clock. Timestamps must be non-decreasing.
    """

    def __init__(self, clock: Optional[Callable[[], int]] = None) -> None:
        self._clock = clock or _wall_clock_ms
        self._records: list[DecisionRecord] = []
        self._timestamps: list[int] = []
        self._tree = MerkleTree()
        self._lock = threading.RLock()
        self.receipts: list[AnchorReceipt] = []

    @classmethod
    def from_records(
        cls, records: Iterable[DecisionRecord], clock: Optional[Callable[[], int]] = None
    ) -> "AuditLog":
        """Rebuild a log from stored records without re-chaining them."""
        log = cls(clock)
        for rec in records:
            log._records.append(rec)
            log._timestamps.append(rec.timestamp)
            log._tree.append_hash(record_leaf(rec))
        return log

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(list(self._records))

    @property
    def records(self) -> Sequence[DecisionRecord]:
        return tuple(self._records)

    @property
    def head(self) -> bytes:
        return self._records[-1].chain_hash if self._records else GENESIS

    @property
    def root(self) -> bytes:
        with self._lock:
            return self._tree.root

    def append(
        self,
        kind: Union[DecisionKind, str],
        reasoning: str = "",
        outcome: str = "",
        inputs: bytes = b"",
        *,
        inputs_digest: Optional[bytes] = None,
        timestamp: Optional[int] = None,
    ) -> DecisionRecord:
        if isinstance(kind, str):
            kind = DecisionKind[kind.upper()]
        if len(reasoning.encode("utf-8")) > MAX_REASONING_BYTES:
            raise AuditError(f"reasoning exceeds {MAX_REASONING_BYTES} bytes")
        if len(outcome.encode("utf-8")) > MAX_OUTCOME_BYTES:
            raise AuditError(f"outcome exceeds {MAX_OUTCOME_BYTES} bytes")
        digest = inputs_digest if inputs_digest is not None else sha256(inputs)
        if len(digest) != HASH_LEN:
            raise AuditError("inputs_digest must be 32 bytes")
        with self._lock:
            ts = self._clock() if timestamp is None else timestamp
            if self._timestamps and ts < self._timestamps[-1]:
                raise AuditError("timestamps must be non-decreasing")
            partial = DecisionRecord(len(self._records), ts, kind, digest, reasoning, outcome, b"")
            rec = DecisionRecord(
                partial.index, ts, kind, digest, reasoning, outcome, partial.expected_chain(self.head)
            )
            self._records.append(rec)
            self._timestamps.append(ts)
            self._tree.append_hash(record_leaf(rec))
            return rec

    # queries -------------------------------------------------------------

    def query_point(
        self, index: Optional[int] = None, *, timestamp: Optional[int] = None
    ) -> Optional[DecisionRecord]:
        """Record by index, or the earliest record at ``timestamp``; None if absent."""
        if (index is None) == (timestamp is None):
            raise TypeError("give exactly one of index or timestamp")
        with self._lock:
            if index is not None:
                return self._records[index] if 0 <= index < len(self._records) else None
            i = bisect_left(self._timestamps, timestamp)
            if i < len(self._records) and self._timestamps[i] == timestamp:
                return self._records[i]
            return None

    def query_range(self, t0: int, t1: int) -> list[DecisionRecord]:
        if t0 > t1:
            raise AuditError("range start after range end")
        with self._lock:
            lo = bisect_left(self._timestamps, t0)
            hi = bisect_right(self._timestamps, t1)
            return self._records[lo:hi]

    def prove_inclusion(self, index: int) -> MerkleProof:
        with self._lock:
            return self._tree.proof(index)

    def verify_inclusion(self, record: DecisionRecord, proof: MerkleProof, root: Optional[bytes] = None) -> bool:
        return proof.leaf_index == record.index and proof.verify(record_leaf(record), root)

    def verify_chain(self) -> ChainVerdict:
        with self._lock:
            records = list(self._records)
        prev = GENESIS
        for i, rec in enumerate(records):
            if rec.index != i or rec.expected_chain(prev) != rec.chain_hash:
                return ChainVerdict(False, i, i)
            prev = rec.chain_hash
        return ChainVerdict(True, None, len(records))

    # anchoring -----------------------------------------------------------

    def anchor(self, sink: Optional[AnchorSink] = None) -> AnchorReceipt:
        sink = sink or NullSink()
        with self._lock:
            root = self._tree.root
            at = self._clock()
            sink.publish(root, at)
            receipt = AnchorReceipt(root, at, sink.name)
            self.receipts.append(receipt)
            return receipt

    # storage -------------------------------------------------------------

    def to_bytes(self) -> bytes:
        with self._lock:
            body = b"".join(lp(rec.encode()) for rec in self._records)
        return LOG_MAGIC + u8(LOG_VERSION) + u8(HASH_ALG_SHA256) + body

    def save(self, path: Union[str, os.PathLike]) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "AuditLog":
        records, error = parse_log_bytes(data)
        if error is not None:
            raise error
        return cls.from_records(records)

    @classmethod
    def load(cls, path: Union[str, os.PathLike]) -> "AuditLog":
        return cls.from_bytes(Path(path).read_bytes())

    def storage_overhead(self) -> float:
        """Mean stored bytes per record beyond reasoning and outcome text.

        Counts the file length prefix, fixed fields, chain hash and one
        leaf plus (amortised) one internal Merkle node per record.
        """
        if not self._records:
            return 0.0
        total = 0
        for rec in self._records:
            content = len(rec.reasoning.encode("utf-8")) + len(rec.outcome.encode("utf-8"))
            total += 4 + len(rec.encode()) - content
        merkle = 2 * HASH_LEN * len(self._records)
        return (total + merkle) / len(self._records)


def parse_log_bytes(data: bytes) -> tuple[list[DecisionRecord], Optional[DecodeError]]:
    """Parse a log file. Returns records decoded so far plus the first error."""
    r = Reader(data)
    try:
        if r.take(4) != LOG_MAGIC:
            return [], DecodeError("bad magic")
        version, alg = r.u8(), r.u8()
    except DecodeError as exc:
        return [], exc
    if version != LOG_VERSION:
        return [], DecodeError(f"unsupported log version {version}")
    if alg != HASH_ALG_SHA256:
        return [], DecodeError(f"unsupported hash algorithm id {alg}")
    records: list[DecisionRecord] = []
    while r.remaining():
        try:
            records.append(DecisionRecord.decode(r.lp()))
        except DecodeError as exc:
            return records, exc
    return records, None


@dataclass
class LogCheck:
    ok: bool
    records: int
    first_bad: Optional[int] = None
    detail: str = ""
    root: bytes = field(default=b"", repr=False)


def verify_log_bytes(data: bytes) -> LogCheck:
    """Validate a serialized log: layout, record indices and the hash chain."""
    records, error = parse_log_bytes(data)
    log = AuditLog.from_records(records)
    verdict = log.verify_chain()
    if not verdict.ok:
        return LogCheck(False, len(records), verdict.first_bad, "chain hash mismatch", log.root)
    if error is not None:
        return LogCheck(False, len(records), len(records), f"decode error: {error}", log.root)
    return LogCheck(True, len(records), None, "ok", log.root)


def verify_log_file(path: Union[str, os.PathLike]) -> LogCheck:
    return verify_log_bytes(Path(path).read_bytes())
