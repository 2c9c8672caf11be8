"""Selective state transfer for cross-device session migration.

Items whose importance exceeds ``tau_importance`` travel verbatim. The rest
are folded into per-class summaries, except embedding-memory items: the 50
most recent survive as bare vectors and older ones are clustered. A
checkpoint can be re-encoded as a delta against an earlier one, carrying
only the critical items that changed.

Container layout (all integers big-endian)::

    magic "DNSC" | version u8 | flags u8 | [base checkpoint id, 32 bytes]
    then TLV blocks: type u8 | length u32 | zlib(body)

Block types: 1 criticals, 2 summaries, 3 centroids, 4 dropped ids,
5 continuity ids. In a delta, an absent summaries / centroids / continuity
block means "same as base"; in a full encoding it means empty.
"""

from __future__ import annotations

import enum
import hashlib
import math
import warnings
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np

from ._wire import DecodeError, Reader, lp, u8, u16, u32

EMBED_DIM = 64
MAGIC = b"DNSC"
VERSION = 1
FLAG_DELTA = 0x01
RECENT_EMBEDDINGS = 50
CLUSTER_ITERS = 20
CONTINUITY_MESSAGES = 3

TIER_TAU = {"high": 0.35, "mid": 0.5, "low": 0.65}

_B_CRIT, _B_SUM, _B_CENT, _B_DROP, _B_CONT = 1, 2, 3, 4, 5


class ItemClass(enum.IntEnum):
    MESSAGE = 1
    ACTIVE_OFFER = 2
    EMBEDDING = 3
    PLAN = 4
    COUNTERPARTY_STAT = 5


class DanglingBaseError(KeyError):
    pass


def _vec(v) -> Optional[np.ndarray]:
    if v is None:
        return None
    a = np.asarray(v, dtype=">f4").reshape(-1)
    if a.shape != (EMBED_DIM,):
        raise ValueError(f"embeddings must have dimension {EMBED_DIM}")
    a.setflags(write=False)
    return a


def _read_vec(r: Reader) -> np.ndarray:
    a = np.frombuffer(r.take(4 * EMBED_DIM), dtype=">f4").copy()
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class StateItem:
    id: str
    cls: ItemClass
    created_at: int
    payload: bytes
    embedding: Optional[np.ndarray] = None
    version: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "cls", ItemClass(self.cls))
        object.__setattr__(self, "embedding", _vec(self.embedding))
        if self.created_at < 0 or self.version < 0:
            raise ValueError("created_at and version are non-negative")

    def encode(self) -> bytes:
        out = [lp(self.id.encode("utf-8")), u8(self.cls), u32(self.created_at), u32(self.version), lp(self.payload)]
        if self.embedding is None:
            out.append(u8(0))
        else:
            out += [u8(1), self.embedding.tobytes()]
        return b"".join(out)

    @classmethod
    def read(cls, r: Reader) -> "StateItem":
        ident = r.lp(1 << 16).decode("utf-8")
        try:
            klass = ItemClass(r.u8())
        except ValueError:
            raise DecodeError("unknown item class") from None
        created, version, payload = r.u32(), r.u32(), r.lp()
        flag = r.u8()
        if flag not in (0, 1):
            raise DecodeError("bad embedding flag")
        emb = _read_vec(r) if flag else None
        return cls(ident, klass, created, payload, emb, version)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, StateItem) and self.encode() == other.encode()

    def __hash__(self) -> int:
        return hash(self.encode())


@dataclass(frozen=True)
class ImportanceParams:
    tau: float = 0.5
    recency_half_life: float = 5.0
    relevance_weight: float = 0.5
    recency_weight: float = 0.5

    def __post_init__(self) -> None:
        if self.relevance_weight < 0 or self.recency_weight < 0:
            raise ValueError("weights must be non-negative")
        if abs(self.relevance_weight + self.recency_weight - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must be in [0, 1]")
        if self.recency_half_life <= 0:
            raise ValueError("half-life must be positive")

    @classmethod
    def for_tier(cls, tier: str, **overrides) -> "ImportanceParams":
        return cls(tau=TIER_TAU[tier], **overrides)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    a64, b64 = a.astype(np.float64), np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a64), np.linalg.norm(b64)
    if na == 0 or nb == 0:
        return 0.0
    return float(a64 @ b64 / (na * nb))


def importance(item: StateItem, goal_embedding, params: ImportanceParams, now: int) -> float:
    if item.cls == ItemClass.ACTIVE_OFFER:
        return 1.0
    age = max(0, now - item.created_at)
    recency = 2.0 ** (-age / params.recency_half_life)
    relevance = 0.0
    if item.embedding is not None:
        goal = np.asarray(goal_embedding, dtype=np.float64).reshape(-1)
        if goal.shape != (EMBED_DIM,):
            raise ValueError("goal embedding has the wrong dimension")
        relevance = max(0.0, _cosine(item.embedding, goal))
    return min(1.0, params.recency_weight * recency + params.relevance_weight * relevance)


# summaries ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SummaryItem:
    cls: ItemClass
    count: int
    min_round: int
    max_round: int
    digest: bytes
    mean_embedding: Optional[np.ndarray]
    member_ids: tuple[str, ...]

    def encode(self) -> bytes:
        out = [u8(self.cls), u32(self.count), u32(self.min_round), u32(self.max_round), self.digest]
        out.append(u8(0) if self.mean_embedding is None else u8(1) + self.mean_embedding.tobytes())
        out.append(_encode_ids(self.member_ids))
        return b"".join(out)

    @classmethod
    def read(cls, r: Reader) -> "SummaryItem":
        klass = ItemClass(r.u8())
        count, lo, hi, digest = r.u32(), r.u32(), r.u32(), r.take(32)
        mean = _read_vec(r) if r.u8() else None
        return cls(klass, count, lo, hi, digest, mean, _read_ids(r))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SummaryItem) and self.encode() == other.encode()

    def __hash__(self) -> int:
        return hash(self.encode())


@dataclass(frozen=True, eq=False)
class Centroid:
    vector: np.ndarray
    member_count: int
    member_ids: tuple[str, ...]

    def encode(self) -> bytes:
        return self.vector.tobytes() + u32(self.member_count) + _encode_ids(self.member_ids)

    @classmethod
    def read(cls, r: Reader) -> "Centroid":
        return cls(_read_vec(r), r.u32(), _read_ids(r))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Centroid) and self.encode() == other.encode()

    def __hash__(self) -> int:
        return hash(self.encode())


def _encode_ids(ids: Sequence[str]) -> bytes:
    return u32(len(ids)) + b"".join(u16(len(b)) + b for b in (i.encode("utf-8") for i in ids))


def _read_ids(r: Reader) -> tuple[str, ...]:
    return tuple(r.take(r.u16()).decode("utf-8") for _ in range(r.u32()))


def _order(item: StateItem) -> tuple[int, str]:
    return (item.created_at, item.id)


def summarize(cls: ItemClass, items: Sequence[StateItem]) -> SummaryItem:
    items = sorted(items, key=_order)
    h = bytes(32)
    for it in items:
        h = hashlib.sha256(h + hashlib.sha256(it.encode()).digest()).digest()
    embs = [it.embedding.astype(np.float64) for it in items if it.embedding is not None]
    mean = _vec(np.mean(embs, axis=0)) if embs else None
    return SummaryItem(
        cls,
        len(items),
        min(it.created_at for it in items),
        max(it.created_at for it in items),
        h,
        mean,
        tuple(it.id for it in items),
    )


def cluster_embeddings(items: Sequence[StateItem], seed: int = 0) -> list[Centroid]:
    """Keep the most recent vectors as singletons; k-means the older ones."""
    from sklearn.cluster import KMeans

    items = sorted(items, key=_order)
    recent = items[-RECENT_EMBEDDINGS:]
    old = items[: max(0, len(items) - RECENT_EMBEDDINGS)]
    out: list[Centroid] = []
    if old:
        k = math.ceil(len(old) / 10)
        X = np.stack([it.embedding.astype(np.float64) for it in old])
        if k == 1:
            labels = np.zeros(len(old), dtype=int)
            centers = X.mean(axis=0, keepdims=True)
        else:
            km = KMeans(n_clusters=k, n_init=1, max_iter=CLUSTER_ITERS, random_state=seed).fit(X)
            labels, centers = km.labels_, km.cluster_centers_
        for j in range(len(centers)):
            members = tuple(old[i].id for i in np.flatnonzero(labels == j))
            if members:
                out.append(Centroid(_vec(centers[j]), len(members), members))
    for it in recent:
        out.append(Centroid(it.embedding, 1, (it.id,)))
    return out


# container ------------------------------------------------------------------


@dataclass(frozen=True)
class CompressedState:
    critical: tuple[StateItem, ...] = ()
    summaries: Optional[tuple[SummaryItem, ...]] = ()
    pruned_embedding_centroids: Optional[tuple[Centroid, ...]] = ()
    delta_base: Optional[bytes] = None
    dropped: tuple[str, ...] = ()
    continuity_ids: Optional[tuple[str, ...]] = ()
    _encoded: Optional[bytes] = field(default=None, repr=False, compare=False)

    @property
    def is_delta(self) -> bool:
        return self.delta_base is not None

    def encode(self) -> bytes:
        if self._encoded is not None:
            return self._encoded
        out = [MAGIC, u8(VERSION), u8(FLAG_DELTA if self.is_delta else 0)]
        if self.is_delta:
            out.append(self.delta_base)

        def block(tag: int, body: bytes) -> None:
            z = zlib.compress(body, 6)
            out.append(u8(tag) + u32(len(z)) + z)

        if self.critical:
            block(_B_CRIT, u32(len(self.critical)) + b"".join(i.encode() for i in self.critical))
        for tag, group in ((_B_SUM, self.summaries), (_B_CENT, self.pruned_embedding_centroids)):
            if group is not None and (group or self.is_delta):
                block(tag, u32(len(group)) + b"".join(g.encode() for g in group))
        if self.dropped:
            block(_B_DROP, _encode_ids(self.dropped))
        if self.continuity_ids is not None and (self.continuity_ids or self.is_delta):
            block(_B_CONT, _encode_ids(self.continuity_ids))
        data = b"".join(out)
        object.__setattr__(self, "_encoded", data)
        return data

    @property
    def checkpoint_id(self) -> bytes:
        return hashlib.sha256(self.encode()).digest()

    @property
    def size(self) -> int:
        return len(self.encode())

    @classmethod
    def decode(cls, data: bytes) -> "CompressedState":
        r = Reader(data)
        if r.take(4) != MAGIC:
            raise DecodeError("not a state container")
        if r.u8() != VERSION:
            raise DecodeError("unsupported container version")
        flags = r.u8()
        if flags & ~FLAG_DELTA:
            raise DecodeError("unknown flags")
        delta = bool(flags & FLAG_DELTA)
        base = r.take(32) if delta else None
        absent = None if delta else ()
        fields: dict = {"critical": (), "summaries": absent, "centroids": absent, "dropped": (), "continuity": absent}
        last = 0
        while r.remaining():
            tag, n = r.u8(), r.u32()
            if tag <= last or tag > _B_CONT:
                raise DecodeError("blocks out of order or unknown")
            last = tag
            try:
                body = Reader(zlib.decompress(r.take(n)))
            except zlib.error:
                raise DecodeError("corrupt block") from None
            if tag == _B_CRIT:
                fields["critical"] = tuple(StateItem.read(body) for _ in range(body.u32()))
            elif tag == _B_SUM:
                fields["summaries"] = tuple(SummaryItem.read(body) for _ in range(body.u32()))
            elif tag == _B_CENT:
                fields["centroids"] = tuple(Centroid.read(body) for _ in range(body.u32()))
            elif tag == _B_DROP:
                fields["dropped"] = _read_ids(body)
            else:
                fields["continuity"] = _read_ids(body)
            body.expect_end()
        return cls(
            fields["critical"],
            fields["summaries"],
            fields["centroids"],
            base,
            fields["dropped"],
            fields["continuity"],
            _encoded=bytes(data),
        )


class CheckpointStore(dict):
    """checkpoint id -> CompressedState, for resolving delta chains."""

    def add(self, c: CompressedState) -> bytes:
        cid = c.checkpoint_id
        self[cid] = c
        return cid


def materialize(c: CompressedState, store: Optional[Mapping[bytes, CompressedState]] = None) -> CompressedState:
    """Resolve a delta chain into the equivalent full checkpoint."""
    chain = [c]
    seen = set()
    while chain[-1].is_delta:
        base_id = chain[-1].delta_base
        if store is None or base_id not in store or base_id in seen:
            raise DanglingBaseError(f"delta base {base_id.hex()[:16]} is not available")
        seen.add(base_id)
        chain.append(store[base_id])
    full = chain.pop()
    crit = {it.id: it for it in full.critical}
    summaries, centroids, cont = full.summaries, full.pruned_embedding_centroids, full.continuity_ids
    for d in reversed(chain):
        for ident in d.dropped:
            crit.pop(ident, None)
        for it in d.critical:
            crit[it.id] = it
        summaries = summaries if d.summaries is None else d.summaries
        centroids = centroids if d.pruned_embedding_centroids is None else d.pruned_embedding_centroids
        cont = cont if d.continuity_ids is None else d.continuity_ids
    return CompressedState(tuple(sorted(crit.values(), key=_order)), summaries, centroids, None, (), cont)


def _continuity_ids(state: Sequence[StateItem]) -> tuple[str, ...]:
    offers = [it.id for it in state if it.cls == ItemClass.ACTIVE_OFFER]
    msgs = sorted((it for it in state if it.cls == ItemClass.MESSAGE), key=_order)[-CONTINUITY_MESSAGES:]
    return tuple(sorted(offers)) + tuple(it.id for it in msgs)


def _full(state: Sequence[StateItem], params: ImportanceParams, goal, now: int, seed: int) -> CompressedState:
    ids = [it.id for it in state]
    if len(set(ids)) != len(ids):
        raise ValueError("item ids must be unique")
    critical, rest = [], []
    for it in state:
        (critical if importance(it, goal, params, now) > params.tau else rest).append(it)
    groups: dict[ItemClass, list[StateItem]] = {}
    embeds = []
    for it in rest:
        if it.cls == ItemClass.EMBEDDING and it.embedding is not None:
            embeds.append(it)
        else:
            groups.setdefault(it.cls, []).append(it)
    summaries = tuple(summarize(k, groups[k]) for k in sorted(groups))
    centroids = tuple(cluster_embeddings(embeds, seed)) if embeds else ()
    return CompressedState(
        tuple(sorted(critical, key=_order)), summaries, centroids, None, (), _continuity_ids(state)
    )


def compress(
    state: Sequence[StateItem],
    params: ImportanceParams,
    goal,
    now: int,
    base: Optional[CompressedState] = None,
    store: Optional[Mapping[bytes, CompressedState]] = None,
    *,
    seed: int = 0,
) -> CompressedState:
    """Importance-threshold partition of ``state`` into criticals and summaries.

    With ``base``, only what changed since that checkpoint is encoded. If the
    base cannot be resolved a full encoding is returned with a warning.
    """
    full = _full(state, params, goal, now, seed)
    if base is None:
        return full
    store = dict(store or {})
    store.setdefault(base.checkpoint_id, base)
    try:
        ref = materialize(base, store)
    except DanglingBaseError as exc:
        warnings.warn(f"{exc}; falling back to a full encoding", RuntimeWarning, stacklevel=2)
        return full
    before = {it.id: it.encode() for it in ref.critical}
    now_ids = {it.id for it in full.critical}
    changed = tuple(it for it in full.critical if before.get(it.id) != it.encode())
    dropped = tuple(sorted(i for i in before if i not in now_ids))

    def same(a, b) -> bool:
        return a is not None and b is not None and [x.encode() for x in a] == [y.encode() for y in b]

    return CompressedState(
        changed,
        None if same(full.summaries, ref.summaries) else full.summaries,
        None if same(full.pruned_embedding_centroids, ref.pruned_embedding_centroids) else full.pruned_embedding_centroids,
        base.checkpoint_id,
        dropped,
        None if full.continuity_ids == ref.continuity_ids else full.continuity_ids,
    )


class RestoredState(NamedTuple):
    stm: list[StateItem]
    ltm: list[Union[SummaryItem, Centroid]]
    continuity: bool


def restore(c: CompressedState, base_store: Optional[Mapping[bytes, CompressedState]] = None) -> RestoredState:
    """Criticals go to short-term memory, summaries and centroids to long-term."""
    full = materialize(c, base_store)
    stm = list(full.critical)
    ltm: list[Union[SummaryItem, Centroid]] = list(full.summaries or ()) + list(full.pruned_embedding_centroids or ())
    have = {it.id for it in stm}
    continuity = all(i in have for i in (full.continuity_ids or ()))
    return RestoredState(stm, ltm, continuity)


def raw_size(state: Iterable[StateItem]) -> int:
    return sum(len(it.encode()) for it in state)


def compression_ratio(state: Sequence[StateItem], c: CompressedState) -> float:
    raw = raw_size(state)
    return 1.0 - c.size / raw if raw else 0.0


# synthetic sessions -------------------------------------------------------------


_WORDS = (
    "offer counter price premium deductible term delivery volume discount quote "
    "accept decline budget coverage clause renewal unit batch warranty rate schedule "
    "invoice margin penalty lead time freight insurer policy limit excess rider"
).split()


# (lo, hi, share) bands of importance for generated items; shares by count
DEFAULT_BANDS = ((0.66, 0.98, 0.245), (0.51, 0.64, 0.115), (0.36, 0.49, 0.115), (0.02, 0.34, 0.525))


def synthetic_state(
    target_bytes: int,
    seed: int = 0,
    *,
    now: int = 40,
    params: Optional[ImportanceParams] = None,
    bands: Sequence[tuple[float, float, float]] = DEFAULT_BANDS,
    text_share: float = 0.5,
    goal: Optional[np.ndarray] = None,
) -> tuple[list[StateItem], np.ndarray]:
    """A session state of roughly ``target_bytes`` with a controlled mix.

    Each item first draws a target importance from ``bands``; its age and
    goal similarity are then chosen to realise that score under ``params``.
    Message and plan payloads are ``text_share`` word text (deflates well)
    and the rest opaque bytes, so compressibility is controlled too. The
    last few messages are current-round turns aligned with the goal.
    """
    params = params or ImportanceParams()
    rng = np.random.default_rng(seed)
    words = np.array(_WORDS)
    if goal is None:
        goal = rng.standard_normal(EMBED_DIM)
    goal = np.asarray(goal, dtype=np.float64)
    g = goal / np.linalg.norm(goal)
    shares = np.array([b[2] for b in bands], dtype=np.float64)
    shares /= shares.sum()
    w_rec, w_rel, hl = params.recency_weight, params.relevance_weight, params.recency_half_life

    def embed_with(cos: float) -> np.ndarray:
        noise = rng.standard_normal(EMBED_DIM)
        noise -= (noise @ g) * g
        noise /= np.linalg.norm(noise)
        return cos * g + math.sqrt(max(0.0, 1 - cos * cos)) * noise

    def placement(with_embedding: bool) -> tuple[int, float]:
        """(age, cosine) whose importance lands in a sampled band."""
        lo, hi, _ = bands[int(rng.choice(len(bands), p=shares))]
        target = float(rng.uniform(lo, hi))
        ages = []
        for age in range(1, now + 1):  # the current round is reserved for the closing exchange
            rec = w_rec * 2.0 ** (-age / hl)
            need = target - rec
            if with_embedding and w_rel > 0 and 0 <= need <= w_rel:
                ages.append(age)
            elif not with_embedding and abs(need) < 0.02:
                ages.append(age)
        if not ages:
            return (1, 1.0) if target > 0.5 else (now, 0.0)
        age = int(rng.choice(ages))
        cos = (target - w_rec * 2.0 ** (-age / hl)) / w_rel if with_embedding and w_rel > 0 else 0.0
        return age, float(min(1.0, max(0.0, cos)))

    def text(n_bytes: int) -> bytes:
        n_text = int(n_bytes * text_share)
        toks = rng.choice(words, size=max(1, n_text // 6))
        body = " ".join(toks.tolist()).encode()[:n_text]
        return body + rng.bytes(n_bytes - len(body))

    items: list[StateItem] = []
    size = 0
    n = 0
    while size < target_bytes:
        roll = rng.random()
        if roll < 0.004:
            it = StateItem(f"o{n}", ItemClass.ACTIVE_OFFER, now, text(256), embed_with(1.0))
        elif roll < 0.10:
            age, _ = placement(False)
            it = StateItem(f"c{n}", ItemClass.COUNTERPARTY_STAT, now - age, rng.bytes(64), None)
        else:
            age, cos = placement(True)
            created, emb = now - age, embed_with(cos)
            if roll < 0.16:
                it = StateItem(f"p{n}", ItemClass.PLAN, created, text(int(rng.integers(1024, 4096))), emb)
            elif roll < 0.45:
                it = StateItem(f"e{n}", ItemClass.EMBEDDING, created, rng.bytes(32), emb)
            else:
                it = StateItem(f"m{n}", ItemClass.MESSAGE, created, text(int(rng.integers(2048, 12288))), emb)
        items.append(it)
        size += len(it.encode())
        n += 1
    # the session ends on the live exchange: the latest turns are about the current offer
    for _ in range(CONTINUITY_MESSAGES):
        items.append(StateItem(f"m{n}", ItemClass.MESSAGE, now, text(512), embed_with(1.0)))
        n += 1
    return items, goal
