from __future__ import annotations

import hashlib
import math
import random
import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from devneg.audit import (
    GENESIS,
    LOG_MAGIC,
    AuditError,
    AuditLog,
    DecisionKind,
    LocalFileSink,
    MerkleTree,
    leaf_hash,
    record_leaf,
    verify_log_bytes,
    verify_log_file,
)


def H(b: bytes) -> bytes:
    return hashlib.sha256(b).digest()


def canonical(index, ts, kind, digest, reasoning, outcome):
    """Independent re-statement of the record layout."""
    r, o = reasoning.encode(), outcome.encode()
    return struct.pack(">QQB", index, ts, kind) + digest + struct.pack(">I", len(r)) + r + struct.pack(">I", len(o)) + o


def oracle_root(leaves):
    """Root of the tree padded with empty subtrees to the next power of two."""
    if not leaves:
        return H(b"\x02")
    size = 1 << max(0, (len(leaves) - 1).bit_length())
    empty = [H(b"\x02")]
    while len(empty) <= 12:
        empty.append(H(b"\x01" + empty[-1] + empty[-1]))

    def node(lo, width, level):
        if lo >= len(leaves):
            return empty[level]
        if width == 1:
            return leaves[lo]
        half = width // 2
        return H(b"\x01" + node(lo, half, level - 1) + node(lo + half, half, level - 1))

    return node(0, size, int(math.log2(size)))


def make_log(n, seed=0):
    rng = random.Random(seed)
    log = AuditLog(clock=lambda: 0)
    for i in range(n):
        log.append(rng.choice(list(DecisionKind)), f"reason {i} " + "x" * rng.randrange(40), f"out{i}", bytes([i % 256]), timestamp=1000 + i)
    return log


def test_genesis_convention():
    assert GENESIS == H(b"genesis-v1")
    log = AuditLog(clock=lambda: 5)
    rec = log.append(DecisionKind.GOAL, "buy cover")
    assert rec.chain_hash == H(rec.canonical_bytes() + GENESIS)


def test_identical_content_chains_differently():
    log = AuditLog(clock=lambda: 5)
    a = log.append(DecisionKind.PLAN, "same", "same")
    b = log.append(DecisionKind.PLAN, "same", "same")
    assert a.chain_hash != b.chain_hash


def test_three_record_chain_matches_standalone_hash():
    log = AuditLog(clock=lambda: 0)
    contents = [(DecisionKind.GOAL, "goal", "", 10), (DecisionKind.OFFER_SENT, "offer 9000", "sent", 20), (DecisionKind.ACCEPT, "accept", "ok", 30)]
    for kind, reasoning, outcome, ts in contents:
        log.append(kind, reasoning, outcome, b"in", timestamp=ts)
    h = GENESIS
    for i, (kind, reasoning, outcome, ts) in enumerate(contents):
        h = H(canonical(i, ts, kind, H(b"in"), reasoning, outcome) + h)
    assert log.head == h


def test_reasoning_bound():
    log = AuditLog(clock=lambda: 0)
    log.append(DecisionKind.PLAN, "x" * 4096)
    with pytest.raises(AuditError):
        log.append(DecisionKind.PLAN, "x" * 4097)


def test_point_queries():
    log = AuditLog(clock=lambda: 0)
    for ts in (100, 200, 200, 300):
        log.append(DecisionKind.PLAN, f"t{ts}", timestamp=ts)
    assert log.query_point(0).chain_hash == H(log.records[0].canonical_bytes() + GENESIS)
    assert log.query_point(timestamp=50) is None
    assert log.query_point(timestamp=200).index == 1
    assert log.query_point(9) is None


def test_range_queries():
    log = AuditLog(clock=lambda: 0)
    for ts in (100, 200, 300, 400):
        log.append(DecisionKind.PLAN, f"t{ts}", timestamp=ts)
    assert len(log.query_range(0, 10**6)) == 4
    assert log.query_range(201, 299) == []
    assert [r.timestamp for r in log.query_range(200, 300)] == [200, 300]
    with pytest.raises(AuditError):
        log.query_range(5, 4)


def test_single_leaf_proof():
    log = make_log(1)
    p = log.prove_inclusion(0)
    assert p.siblings == () and log.root == record_leaf(log.records[0])


def test_1024_leaves_have_10_siblings():
    t = MerkleTree(leaf_hash(bytes([i % 256, i // 256])) for i in range(1024))
    assert all(len(t.proof(i).siblings) == 10 for i in (0, 1, 511, 1023))


@given(st.integers(1, 300))
def test_root_matches_oracle_and_proofs_verify(n):
    leaves = [leaf_hash(i.to_bytes(4, "big")) for i in range(n)]
    t = MerkleTree(leaves)
    assert t.root == oracle_root(leaves)
    for i in {0, n // 2, n - 1}:
        p = t.proof(i)
        assert len(p.siblings) == math.ceil(math.log2(n)) if n > 1 else p.siblings == ()
        assert p.verify(leaves[i], t.root)
        assert not p.verify(leaf_hash(b"other"), t.root)


def test_proof_index_out_of_range():
    with pytest.raises(IndexError):
        make_log(3).prove_inclusion(3)


def test_empty_and_intact_logs_verify():
    assert AuditLog().verify_chain()
    assert make_log(100).verify_chain()


def test_bit_flip_in_record_50_reported():
    log = make_log(100)
    data = bytearray(log.to_bytes())
    offset = 6
    for rec in log.records[:50]:
        offset += 4 + len(rec.encode())
    data[offset + 4 + 20] ^= 0x01  # somewhere in record 50's fixed fields
    chk = verify_log_bytes(bytes(data))
    assert not chk.ok and chk.first_bad == 50


def test_tampering_breaks_inclusion_for_later_indices():
    log = make_log(40)
    trusted = log.root
    raw = bytearray(log.records[17].encode())
    raw[30] ^= 0x80
    from devneg.audit import DecisionRecord

    tampered = list(log.records)
    tampered[17] = DecisionRecord.decode(bytes(raw))
    forged = AuditLog.from_records(tampered)
    assert forged.verify_chain().first_bad == 17
    for i in range(17, 40):
        assert not forged.verify_inclusion(forged.records[i], forged.prove_inclusion(i), trusted)
    assert not log.verify_inclusion(tampered[17], log.prove_inclusion(17), trusted)


def test_file_roundtrip_and_verify(tmp_path):
    log = make_log(25)
    path = tmp_path / "a.log"
    log.save(path)
    assert path.read_bytes()[:6] == LOG_MAGIC + b"\x01\x01"
    again = AuditLog.load(path)
    assert again.root == log.root and again.head == log.head
    chk = verify_log_file(path)
    assert chk.ok and chk.records == 25


def test_truncated_file_flags_the_cut():
    data = make_log(10).to_bytes()
    chk = verify_log_bytes(data[:-7])
    assert not chk.ok and chk.first_bad == 9


def test_anchoring(tmp_path):
    sink = LocalFileSink(tmp_path / "anchors.txt")
    log = make_log(5)
    r1 = log.anchor(sink)
    log.append(DecisionKind.OUTCOME, "done", timestamp=5000)
    r2 = log.anchor(sink)
    assert [root for _, root in sink.roots()] == [r1.root, r2.root]
    assert r2.root == log.root and r1.root != r2.root and r1.sink == "local-file"


def test_storage_overhead_within_bound():
    log = make_log(200)
    assert log.storage_overhead() <= 512


def test_timestamps_non_decreasing():
    log = AuditLog(clock=lambda: 0)
    log.append(DecisionKind.PLAN, timestamp=10)
    with pytest.raises(AuditError):
        log.append(DecisionKind.PLAN, timestamp=9)
