from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from devneg import group as grp
from devneg.proofs import (
    Commitment,
    PrivateConstraint,
    RangeProof,
    RangeProofError,
    commit,
    commit_bounds,
    open_commitment,
    prove_in_range,
    verify_in_range,
)
from devneg.protocol import LinearConcession, MessageKind, NegotiationAgent, SessionConfig, run_session
from devneg.protocol.messages import AttestPayload, OfferPayload, decode_accept
from devneg.protocol.session import session_id_for

SID = b"session-0001"


@pytest.fixture(scope="module")
def c():
    return PrivateConstraint.create(5000, 12000, "buyer", rng_seed=1)


@pytest.fixture(scope="module")
def proof(c):
    return prove_in_range(9000, c, SID, rng_seed=2)


def test_commit_zero_opens():
    cm = commit(0, 12345)
    assert open_commitment(cm, 0, 12345)


def test_commitments_are_randomised():
    a, _, _, _ = commit_bounds(10000, 10000, rng_seed=1)
    b, _, _, _ = commit_bounds(10000, 10000, rng_seed=2)
    assert a != b


def test_wrong_blinding_fails(c):
    assert c.check()
    assert not open_commitment(c.commitment_min, c.p_min, c.blinding_min ^ 1)
    assert not open_commitment(c.commitment_min, c.p_min + 1, c.blinding_min)


def test_bounds_limits():
    with pytest.raises(ValueError):
        commit_bounds(0, 2**32)
    with pytest.raises(ValueError):
        commit_bounds(10, 9)


def test_binding_probabilistic():
    # a commitment never opens to a second value under random blindings
    rng = random.Random(3)
    cm = commit(777, 999)
    for _ in range(200):
        assert not open_commitment(cm, rng.randrange(2**32), rng.randrange(1, grp.ORDER))


def test_interior_and_boundaries(c):
    for offer in (9000, 5000, 12000):
        p = prove_in_range(offer, c, SID, rng_seed=offer)
        assert verify_in_range(offer, c.commitment_min, c.commitment_max, p, SID)


def test_prover_refuses_outside_range(c):
    for offer in (12001, 4999):
        with pytest.raises(RangeProofError):
            prove_in_range(offer, c, SID, rng_seed=0)


def test_replay_and_offer_binding(c, proof):
    cmin, cmax = c.commitment_min, c.commitment_max
    assert verify_in_range(9000, cmin, cmax, proof, SID)
    assert not verify_in_range(9000, cmin, cmax, proof, b"session-0002")
    assert not verify_in_range(9001, cmin, cmax, proof, SID)
    assert not verify_in_range(8999, cmin, cmax, proof, SID)
    other = PrivateConstraint.create(5000, 12000, "buyer", rng_seed=99)
    assert not verify_in_range(9000, other.commitment_min, other.commitment_max, proof, SID)


def test_encoding_roundtrip_and_size(proof):
    raw = proof.encode()
    assert RangeProof.decode(raw) == proof
    k = proof.k
    assert len(raw) == 3 + 4 * 4 + 2 * k * 33 + 2 * k * 32 + 4 * k * 32 + 32


def test_size_is_linear_in_k():
    sizes = {}
    for k in (4, 8, 16, 32):
        cc = PrivateConstraint.create(3, 10, "seller", rng_seed=k, k=k)
        sizes[k] = prove_in_range(5, cc, SID, rng_seed=k).size
    per_bit = {(sizes[b] - sizes[a]) / (b - a) for a, b in ((4, 8), (8, 16), (16, 32))}
    assert per_bit == {2 * 33 + 2 * 32 + 4 * 32}


@given(st.binary(max_size=600))
def test_garbage_never_crashes(c, blob):
    assert verify_in_range(9000, c.commitment_min, c.commitment_max, blob, SID) is False


def test_bad_commitment_bytes(proof):
    bogus = Commitment(b"\x05" + bytes(32))
    assert not verify_in_range(9000, bogus, bogus, proof, SID)


def test_byte_mutation_sweep_small_field():
    # every single-byte change to a valid 8-bit-range proof is rejected
    cc = PrivateConstraint.create(20, 200, "buyer", rng_seed=5, k=8)
    raw = prove_in_range(77, cc, SID, rng_seed=6).encode()
    for i in range(len(raw)):
        bad = bytearray(raw)
        bad[i] ^= 0x5A
        assert not verify_in_range(77, cc.commitment_min, cc.commitment_max, bytes(bad), SID), i


@given(st.integers(0, 2**16), st.integers(0, 2**16), st.data())
def test_completeness_property(lo, width, data):
    cc = PrivateConstraint.create(lo, lo + width, "seller", rng_seed=lo, k=20)
    offer = data.draw(st.integers(lo, lo + width))
    p = prove_in_range(offer, cc, SID, rng_seed=offer)
    assert verify_in_range(offer, cc.commitment_min, cc.commitment_max, p, SID)


def test_out_of_range_forgeries_rejected(c, proof):
    # re-using an honest proof for an outside offer, or grinding fresh commitments, never verifies
    rng = random.Random(8)
    for _ in range(50):
        offer = rng.choice([rng.randrange(0, 5000), rng.randrange(12001, 2**32)])
        assert not verify_in_range(offer, c.commitment_min, c.commitment_max, proof, SID)


def test_zero_knowledge_byte_histograms():
    # two different ranges admitting the same offer produce indistinguishable proof bytes
    def histogram(lo, hi, seeds):
        counts = np.zeros(256)
        for s in seeds:
            cc = PrivateConstraint.create(lo, hi, "buyer", rng_seed=s, k=16)
            raw = prove_in_range(1000, cc, SID, rng_seed=s).encode()
            # scalars only: points carry a fixed prefix byte
            body = raw[3 + 4 + 32 * 33 + 4 :]
            counts += np.bincount(np.frombuffer(body, dtype=np.uint8), minlength=256)
        return counts

    a = histogram(900, 1100, range(30))
    b = histogram(10, 60000, range(100, 130))
    _, pvalue, _, _ = stats.chi2_contingency(np.vstack([a, b]))
    assert pvalue > 0.001


def test_commitments_fixed_for_the_session():
    b = NegotiationAgent("buyer", PrivateConstraint.create(5000, 12000, "buyer", 1), LinearConcession(1500))
    s = NegotiationAgent("seller", PrivateConstraint.create(8000, 15000, "seller", 2), LinearConcession(1500))
    out = run_session(b, s, SessionConfig(epsilon=100, seed=4))
    msgs = out.transcript
    published = {m.sender: AttestPayload.decode(m.payload) for m in msgs if m.kind == MessageKind.ATTEST}
    sid = session_id_for(*(m.payload for m in msgs if m.kind == MessageKind.ATTEST), 4)
    checked = 0
    for m in msgs:
        if m.kind in (MessageKind.OFFER, MessageKind.ACCEPT):
            if m.kind == MessageKind.OFFER:
                o = OfferPayload.decode(m.payload)
                price, raw = o.price, o.proof
            else:
                price, raw = decode_accept(m.payload)
            att = published[m.sender]
            assert verify_in_range(price, att.commitment_min, att.commitment_max, raw, sid)
            checked += 1
    assert checked >= 8
