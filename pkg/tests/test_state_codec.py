from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from devneg._wire import DecodeError
from devneg.state_codec import (
    EMBED_DIM,
    CheckpointStore,
    CompressedState,
    DanglingBaseError,
    ImportanceParams,
    ItemClass,
    StateItem,
    compress,
    compression_ratio,
    importance,
    materialize,
    restore,
    synthetic_state,
)

GOAL = np.eye(EMBED_DIM)[0]


def item(i, cls=ItemClass.MESSAGE, age=0, cos=None, now=10, payload=b"x" * 40):
    emb = None
    if cos is not None:
        emb = cos * np.eye(EMBED_DIM)[0] + np.sqrt(1 - cos * cos) * np.eye(EMBED_DIM)[1]
    return StateItem(f"i{i}", cls, now - age, payload, emb)


@pytest.mark.parametrize(
    "age,cos,expected",
    [
        (0, 1.0, 1.0),  # 0.5 * 1 + 0.5 * 1
        (5, 1.0, 0.75),  # one half-life
        (10, 0.0, 0.125),  # two half-lives, orthogonal
        (5, 0.6, 0.55),
        (0, None, 0.5),  # no embedding means zero relevance
    ],
)
def test_importance_examples(age, cos, expected):
    assert importance(item(0, age=age, cos=cos), GOAL, ImportanceParams(), now=10) == pytest.approx(expected)


def test_active_offer_is_always_critical():
    it = item(0, ItemClass.ACTIVE_OFFER, age=10, cos=0.0)
    assert importance(it, GOAL, ImportanceParams(), now=10) == 1.0
    c = compress([it], ImportanceParams(tau=0.99), GOAL, now=10)
    assert c.critical == (it,)
    assert restore(c).continuity


def test_negative_cosine_clamped():
    it = item(0, age=10, cos=-1.0 + 1e-12)
    assert importance(it, GOAL, ImportanceParams(), now=10) == pytest.approx(0.125)


def test_params_validation():
    for kw in ({"tau": 1.5}, {"relevance_weight": 0.7}, {"recency_half_life": 0}):
        with pytest.raises(ValueError):
            ImportanceParams(**kw)
    assert ImportanceParams.for_tier("low").tau == 0.65


def test_empty_state():
    c = compress([], ImportanceParams(), GOAL, now=0)
    back = restore(CompressedState.decode(c.encode()))
    assert back.stm == [] and back.ltm == [] and back.continuity


def test_duplicate_ids_rejected():
    with pytest.raises(ValueError):
        compress([item(0), item(0)], ImportanceParams(), GOAL, now=10)


state_items = st.lists(
    st.tuples(
        st.sampled_from(list(ItemClass)),
        st.integers(0, 30),
        st.one_of(st.none(), st.floats(0, 1)),
        st.binary(max_size=64),
    ),
    max_size=40,
)


@settings(max_examples=40)
@given(state_items, st.floats(0, 1))
def test_partition_is_exact_and_criticals_lossless(spec, tau):
    state = [
        StateItem(f"k{i}", cls, 30 - age, payload, None if cos is None else item(0, cos=cos).embedding)
        for i, (cls, age, cos, payload) in enumerate(spec)
    ]
    p = ImportanceParams(tau=tau)
    c = CompressedState.decode(compress(state, p, GOAL, now=30).encode())
    got = restore(c)
    crit_ids = {it.id for it in got.stm}
    for it in state:
        high = importance(it, GOAL, p, 30) > tau
        assert (it.id in crit_ids) == high
        if high:
            assert next(x for x in got.stm if x.id == it.id) == it
    covered = set(crit_ids)
    for s in got.ltm:
        covered |= set(s.member_ids)
    assert covered == {it.id for it in state}


@pytest.mark.parametrize("tier,target", [("high", 0.70), ("mid", 0.78), ("low", 0.85)])
@pytest.mark.parametrize("seed", [0, 1])
def test_tier_compression_targets(tier, target, seed):
    p = ImportanceParams.for_tier(tier)
    state, goal = synthetic_state(8 << 20, seed=seed, params=p)
    c = compress(state, p, goal, now=40)
    assert abs(compression_ratio(state, c) - target) <= 0.03


def test_three_deltas_match_full_restore():
    p = ImportanceParams()
    state, goal = synthetic_state(200_000, seed=4, params=p)
    store = CheckpointStore()
    prev = compress(state, p, goal, now=40)
    store.add(prev)
    for step in range(3):
        state = state + [StateItem(f"live{step}", ItemClass.MESSAGE, 40, b"new offer" * 20, goal)]
        d = compress(state, p, goal, now=40, base=prev, store=store)
        assert d.is_delta and d.size < compress(state, p, goal, now=40).size
        store.add(d)
        prev = d
    full = compress(state, p, goal, now=40)
    a, b = restore(prev, store), restore(full)
    assert a.stm == b.stm and a.continuity and b.continuity
    assert [x.encode() for x in a.ltm] == [x.encode() for x in b.ltm]


def test_unchanged_state_gives_empty_delta():
    p = ImportanceParams()
    state, goal = synthetic_state(50_000, seed=2, params=p)
    base = compress(state, p, goal, now=40)
    d = compress(state, p, goal, now=40, base=base)
    assert d.critical == () and d.dropped == () and d.summaries is None and d.continuity_ids is None
    assert materialize(d, {base.checkpoint_id: base}) == materialize(base)


def test_dangling_base():
    p = ImportanceParams()
    state, goal = synthetic_state(20_000, seed=2, params=p)
    base = compress(state, p, goal, now=40)
    d = compress(state, p, goal, now=40, base=base)
    with pytest.raises(DanglingBaseError):
        restore(CompressedState.decode(d.encode()), {})
    orphan = CompressedState.decode(d.encode())  # its own base is gone
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        out = compress(state, p, goal, now=40, base=orphan, store={})
    assert not out.is_delta and any(issubclass(x.category, RuntimeWarning) for x in w)


def test_dropped_criticals_leave_stm():
    p = ImportanceParams(tau=0.5)
    keep = item(1, age=0, cos=1.0)
    base_state = [keep, item(2, age=0, cos=0.9)]
    base = compress(base_state, p, GOAL, now=10)
    d = compress([keep], p, GOAL, now=10, base=base)
    assert d.dropped == ("i2",)
    assert [x.id for x in restore(d, {base.checkpoint_id: base}).stm] == ["i1"]


def test_decode_roundtrip_and_errors():
    p = ImportanceParams()
    state, goal = synthetic_state(30_000, seed=9, params=p)
    c = compress(state, p, goal, now=40)
    data = c.encode()
    assert CompressedState.decode(data).encode() == data
    with pytest.raises(DecodeError):
        CompressedState.decode(b"XXXX" + data[4:])
    with pytest.raises(DecodeError):
        CompressedState.decode(data[:4] + b"\x09" + data[5:])
    with pytest.raises(DecodeError):
        CompressedState.decode(data[:-3])


def test_bad_embedding_dimension():
    with pytest.raises(ValueError):
        StateItem("x", ItemClass.EMBEDDING, 0, b"", np.zeros(3))


def test_synthetic_state_is_seeded():
    a, ga = synthetic_state(40_000, seed=5)
    b, gb = synthetic_state(40_000, seed=5)
    assert a == b and np.array_equal(ga, gb)


def test_continuity_flag_tracks_recent_messages():
    p = ImportanceParams(tau=0.5)
    fresh = [item(i, age=0, cos=1.0) for i in range(3)]
    old = [item(9, age=10, cos=0.0)]
    assert restore(compress(fresh + old, p, GOAL, now=10)).continuity
    stale_last = fresh[:2] + [StateItem("late", ItemClass.MESSAGE, 10, b"z", None)]  # importance 0.5, not above tau
    assert not restore(compress(stale_last, p, GOAL, now=10)).continuity
