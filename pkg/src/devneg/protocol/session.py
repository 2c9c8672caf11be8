"""Bilateral alternating-offer session engine.

Lifecycle: attestation exchange, optional feasibility pre-check, then up to
``max_rounds`` rounds of buyer offer / seller counter. Every offer and every
accept carries a range proof against the sender's published commitments
(when proofs are enabled). Offers never cross: a buyer never bids above the
seller's standing ask and a seller never asks below the standing bid.

Agents only talk through the transport queue. The engine owns the wire
transcript, the Merkle root over it, and aggregate operation counts that the
harness turns into simulated cost.
"""

from __future__ import annotations

import enum
import hashlib
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence

from .. import feasibility, paillier
from .._rng import derive_seed, py_random
from .._wire import DecodeError, u64
from ..audit import AuditLog, DecisionKind, MerkleTree, leaf_hash
from ..proofs import Commitment, PrivateConstraint, RangeProofError, Role, prove_in_range, verify_in_range
from .attestation import (
    DEFAULT_CODE_HASH,
    DEFAULT_REGISTRY,
    AttestationRecord,
    AttestStatus,
    ProtocolError,
    attest_session,
)
from .messages import (
    AbortReason,
    AttestPayload,
    MessageKind,
    NegotiationMessage,
    OfferPayload,
    SequenceTracker,
    decode_accept,
    encode_abort,
    encode_accept,
)
from .metrics import converged, fairness_score, leakage_account, settle
from .strategies import Strategy, StrategyContext

MAX_ROUNDS = 10


class Status(str, enum.Enum):
    AGREED = "Agreed"
    INFEASIBLE = "Infeasible"
    TIMEOUT = "Timeout"
    ATTEST_FAILED = "AttestFailed"
    PROOF_REJECTED = "ProofRejected"
    SAFETY_ABORTED = "SafetyAborted"


class Behavior(str, enum.Enum):
    HONEST = "honest"
    # matches any counterparty price, even outside its own range, and reneges
    # later; a range-proof requirement leaves it no way to send such offers
    BLUFF = "bluff"
    # attaches corrupted proofs to everything it sends
    FORGE = "forge"


# proof backends ---------------------------------------------------------


class ProofBackend(Protocol):
    def prove(self, price: int, c: PrivateConstraint, session_id: bytes, seed: int) -> bytes: ...

    def verify(self, price: int, cmin: Commitment, cmax: Commitment, proof: bytes, session_id: bytes) -> bool: ...


class SigmaProofs:
    """The real bit-decomposition range proofs."""

    name = "sigma"

    def prove(self, price: int, c: PrivateConstraint, session_id: bytes, seed: int) -> bytes:
        return prove_in_range(price, c, session_id, seed).encode()

    def verify(self, price: int, cmin: Commitment, cmax: Commitment, proof: bytes, session_id: bytes) -> bool:
        return verify_in_range(price, cmin, cmax, proof, session_id)


class ModeledProofs:
    """Cost-free stand-in for large simulation sweeps.

    Emits a keyed digest instead of a proof, and models soundness by looking
    up the prover's true range. Only for sessions that are simulated end to
    end; it is not a cryptographic object. One instance per session.
    """

    name = "modeled"

    def __init__(self) -> None:
        self._ranges: dict[tuple[bytes, bytes], tuple[int, int]] = {}

    @staticmethod
    def _tag(price: int, cmin: bytes, cmax: bytes, session_id: bytes) -> bytes:
        return hashlib.sha256(b"devneg/modeled-proof" + session_id + cmin + cmax + u64(price)).digest()

    def prove(self, price: int, c: PrivateConstraint, session_id: bytes, seed: int) -> bytes:
        if not c.contains(price):
            raise RangeProofError("offer outside the committed range; refusing to prove")
        key = (c.commitment_min.point, c.commitment_max.point)
        self._ranges[key] = (c.p_min, c.p_max)
        return self._tag(price, *key, session_id)

    def verify(self, price: int, cmin: Commitment, cmax: Commitment, proof: bytes, session_id: bytes) -> bool:
        rng = self._ranges.get((cmin.point, cmax.point))
        if rng is None or not rng[0] <= price <= rng[1]:
            return False
        return proof == self._tag(price, cmin.point, cmax.point, session_id)


# transport ----------------------------------------------------------------


class SimulatedTransport:
    """Lossy in-memory message queues with bounded per-message retries."""

    def __init__(self, loss: float = 0.0, retry_budget: int = 3, seed: Optional[int] = 0) -> None:
        if not 0.0 <= loss < 1.0:
            raise ValueError("loss must be in [0, 1)")
        self.loss = loss
        self.retry_budget = retry_budget
        self._rng = py_random(seed, "transport")
        self._queues: dict[str, deque[NegotiationMessage]] = {}
        self.attempts = 0

    def send(self, msg: NegotiationMessage, to: str) -> bool:
        for _ in range(1 + self.retry_budget):
            self.attempts += 1
            if self.loss == 0.0 or self._rng.random() >= self.loss:
                self._queues.setdefault(to, deque()).append(msg)
                return True
        return False

    def receive(self, agent_id: str) -> Optional[NegotiationMessage]:
        q = self._queues.get(agent_id)
        return q.popleft() if q else None


class SimClock:
    """Deterministic millisecond clock; one tick per wire event."""

    def __init__(self, start_ms: int = 1_700_000_000_000) -> None:
        self.now = start_ms

    def __call__(self) -> int:
        return self.now

    def tick(self, ms: int = 1) -> int:
        self.now += ms
        return self.now


# agents -------------------------------------------------------------------


@dataclass(frozen=True)
class Action:
    kind: str  # "offer" | "accept"
    price: int
    origin: str = "strategy"


Gate = Callable[[Action, StrategyContext], bool]
Planner = Callable[[StrategyContext], Optional[int]]


class NegotiationAgent:
    """One endpoint: a private constraint, a strategy and optional hooks.

    ``planner`` may suggest a price ahead of the strategy; ``gate`` vets each
    candidate action before it is sent (returning False rejects it).
    ``harmful_round`` plants a jump straight to the agent's own reservation
    price in that round (capped at the counterparty's standing price), used
    to exercise the gate. When the gate rejects a strategy move the agent
    falls back to half, then a quarter, of that concession, then to holding.
    """

    def __init__(
        self,
        agent_id: str,
        constraint: PrivateConstraint,
        strategy: Strategy,
        *,
        code_hash: bytes = DEFAULT_CODE_HASH,
        behavior: Behavior = Behavior.HONEST,
        harmful_round: Optional[int] = None,
        planner: Optional[Planner] = None,
        gate: Optional[Gate] = None,
    ) -> None:
        self.agent_id = agent_id
        self.constraint = constraint
        self.strategy = strategy
        self.code_hash = code_hash
        self.behavior = Behavior(behavior)
        self.harmful_round = harmful_round
        self.planner = planner
        self.gate = gate
        self.audit: Optional[AuditLog] = None
        self.reset()

    @property
    def is_buyer(self) -> bool:
        return self.constraint.role == Role.BUYER

    def reset(self) -> None:
        self.own_last: Optional[int] = None
        self.their_last: Optional[int] = None
        self.their_commitments: Optional[tuple[Commitment, Commitment]] = None
        self.rejections = 0
        self._seq = 0
        self._tracker = SequenceTracker()

    def next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def context(self, rnd: int, max_rounds: int) -> StrategyContext:
        c = self.constraint
        return StrategyContext(rnd, self.is_buyer, c.p_min, c.p_max, self.own_last, self.their_last, max_rounds)

    def _no_cross(self, price: int, ctx: StrategyContext) -> int:
        if self.their_last is None:
            return price
        if self.is_buyer:
            price = min(price, self.their_last)
        else:
            price = max(price, self.their_last)
        return ctx.clamp(price)

    def candidates(self, ctx: StrategyContext, epsilon: Optional[float], proofs: bool, close_only: bool) -> list[Action]:
        out: list[Action] = []
        if (
            epsilon is not None
            and self.own_last is not None
            and self.their_last is not None
            and converged(self.own_last, self.their_last, epsilon)
        ):
            s = settle(self.own_last, self.their_last)
            if self.constraint.contains(s) or self.behavior == Behavior.BLUFF:
                out.append(Action("accept", s, "converged"))
        if not close_only:
            if self.their_last is not None:
                if self.harmful_round == ctx.round:
                    out.append(Action("offer", self._no_cross(ctx.reservation, ctx), "planted"))
                if self.behavior == Behavior.BLUFF and not self.constraint.contains(self.their_last):
                    out.append(Action("offer", self.their_last, "bluff"))
            if self.planner is not None:
                suggestion = self.planner(ctx)
                if suggestion is not None:
                    out.append(Action("offer", self._no_cross(suggestion, ctx), "plan"))
            proposed = self._no_cross(self.strategy.propose(ctx), ctx)
            out.append(Action("offer", proposed, "strategy"))
            if self.own_last is not None:
                out.append(Action("offer", self._no_cross((self.own_last + proposed) // 2, ctx), "half"))
                out.append(Action("offer", self._no_cross((3 * self.own_last + proposed) // 4, ctx), "quarter"))
                out.append(Action("offer", self.own_last, "hold"))
        if proofs:
            # no proof exists for a price outside the committed range
            out = [a for a in out if self.constraint.contains(a.price)]
        seen: set[tuple[str, int]] = set()
        unique = []
        for a in out:
            if (a.kind, a.price) not in seen:
                seen.add((a.kind, a.price))
                unique.append(a)
        return unique

    def log(self, kind: DecisionKind, reasoning: str, outcome: str = "", inputs: bytes = b"") -> None:
        if self.audit is not None:
            self.audit.append(kind, reasoning, outcome, inputs)


# session ------------------------------------------------------------------


@dataclass
class SessionConfig:
    max_rounds: int = MAX_ROUNDS
    epsilon: Optional[float] = None  # None: relative to the first gap, with a floor
    epsilon_fraction: float = 0.01
    epsilon_floor: int = 100
    feasibility: bool = True
    proofs: bool = True
    memory: bool = True
    registry: frozenset[bytes] = DEFAULT_REGISTRY
    seed: int = 0
    key_bits: int = 512
    key_seed: Optional[int] = None  # None: derived from seed
    keypair: Optional[paillier.Keypair] = None
    loss: float = 0.0
    retry_budget: int = 3
    decisions_visible: bool = True
    proof_backend: Optional[ProofBackend] = None
    clock_start_ms: int = 1_700_000_000_000

    def __post_init__(self) -> None:
        if not 1 <= self.max_rounds <= MAX_ROUNDS:
            raise ValueError(f"max_rounds must be in [1, {MAX_ROUNDS}]")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass
class SessionOutcome:
    status: Status
    settle_price: Optional[int]
    rounds_used: int
    fairness: float
    leakage_bits: int
    transcript_root: bytes
    transcript: tuple[NegotiationMessage, ...] = field(repr=False, default=())
    op_counts: dict[str, int] = field(default_factory=dict)
    abort_reason: Optional[AbortReason] = None
    epsilon: Optional[float] = None
    offers: tuple[tuple[str, int, int], ...] = field(repr=False, default=())  # (sender, round, price)

    def transcript_bytes(self) -> bytes:
        return b"".join(m.encode() for m in self.transcript)


class _Lost(Exception):
    pass


class _End(Exception):
    def __init__(self, status: Status, price: Optional[int] = None, reason: Optional[AbortReason] = None):
        super().__init__(status.value)
        self.status, self.price, self.reason = status, price, reason


_SENT = {MessageKind.OFFER: DecisionKind.OFFER_SENT, MessageKind.ACCEPT: DecisionKind.ACCEPT, MessageKind.ABORT: DecisionKind.ABORT}
_RECV = {MessageKind.OFFER: DecisionKind.OFFER_RECV, MessageKind.ACCEPT: DecisionKind.ACCEPT, MessageKind.ABORT: DecisionKind.ABORT}


def session_id_for(buyer_attest: bytes, seller_attest: bytes, seed: int) -> bytes:
    return hashlib.sha256(b"devneg/session/v1" + buyer_attest + seller_attest + u64(seed)).digest()


def _corrupt(proof: bytes) -> bytes:
    if not proof:
        return b"\x00"
    return bytes([proof[0] ^ 0xFF]) + proof[1:]


class _Engine:
    def __init__(self, buyer: NegotiationAgent, seller: NegotiationAgent, cfg: SessionConfig) -> None:
        self.b, self.s, self.cfg = buyer, seller, cfg
        self.clock = SimClock(cfg.clock_start_ms)
        self.transport = SimulatedTransport(cfg.loss, cfg.retry_budget, derive_seed(cfg.seed, "transport"))
        self.backend: ProofBackend = cfg.proof_backend or SigmaProofs()
        self.transcript: list[NegotiationMessage] = []
        self.tree = MerkleTree()
        self.ops: Counter[str] = Counter()
        self.offers: list[tuple[str, int, int]] = []
        self.epsilon: Optional[float] = cfg.epsilon
        self.session_id = b""
        self.rounds = 0
        for agent in (buyer, seller):
            agent.reset()
            # a fresh log per session, on the session's clock
            agent.audit = AuditLog(self.clock) if cfg.memory else None

    def other(self, agent: NegotiationAgent) -> NegotiationAgent:
        return self.s if agent is self.b else self.b

    def send(self, sender: NegotiationAgent, kind: MessageKind, payload: bytes) -> NegotiationMessage:
        receiver = self.other(sender)
        msg = NegotiationMessage(kind, sender.agent_id, sender.next_seq(), payload)
        before = self.transport.attempts
        delivered = self.transport.send(msg, receiver.agent_id)
        self.ops["message"] += 1
        self.ops["retransmit"] += self.transport.attempts - before - 1 if delivered else self.transport.attempts - before
        if not delivered:
            raise _Lost()
        got = self.transport.receive(receiver.agent_id)
        assert got is msg
        if not receiver._tracker.check(got):
            raise ProtocolError("sequence number did not increase")
        self.clock.tick()
        raw = got.encode()
        self.transcript.append(got)
        self.tree.append_hash(leaf_hash(raw))
        sent_kind = _SENT.get(kind, DecisionKind.PLAN)
        recv_kind = _RECV.get(kind, DecisionKind.PLAN)
        sender.log(sent_kind, f"sent {kind.name.lower()} #{msg.sequence}", inputs=raw)
        receiver.log(recv_kind, f"received {kind.name.lower()} #{msg.sequence} from {sender.agent_id}", inputs=raw)
        return got

    def abort(self, sender: NegotiationAgent, reason: AbortReason, status: Status, detail: str = "") -> None:
        try:
            self.send(sender, MessageKind.ABORT, encode_abort(reason, detail))
        except _Lost:
            pass
        raise _End(status, reason=reason)

    # phases ------------------------------------------------------------------

    def attest(self) -> None:
        payloads = []
        for agent in (self.b, self.s):
            c = agent.constraint
            p = AttestPayload(agent.code_hash, c.commitment_min, c.commitment_max)
            try:
                body = p.encode()
                if len(agent.code_hash) != 32:
                    raise ProtocolError("code hash must be 32 bytes")
            except (ProtocolError, TypeError):
                self.abort(agent, AbortReason.PROTOCOL, Status.ATTEST_FAILED, "malformed code hash")
            self.send(agent, MessageKind.ATTEST, body)
            self.other(agent).their_commitments = (p.commitment_min, p.commitment_max)
            self.ops["attest"] += 1
            payloads.append(body)
        try:
            status, _ = attest_session(
                AttestationRecord(self.b.agent_id, self.b.code_hash),
                AttestationRecord(self.s.agent_id, self.s.code_hash),
                self.cfg.registry,
            )
        except ProtocolError:
            self.abort(self.b, AbortReason.PROTOCOL, Status.ATTEST_FAILED, "malformed code hash")
        if status != AttestStatus.ESTABLISHED:
            self.abort(self.b, AbortReason.ATTEST_FAILED, Status.ATTEST_FAILED, "code hash not in registry")
        self.session_id = session_id_for(payloads[0], payloads[1], self.cfg.seed)

    def feasibility(self) -> None:
        cfg = self.cfg
        keypair = cfg.keypair
        if keypair is None:
            key_seed = cfg.key_seed if cfg.key_seed is not None else derive_seed(cfg.seed, "paillier")
            keypair = paillier.cached_keypair(cfg.key_bits, key_seed)
        buyer_side = feasibility.BuyerSide(keypair, self.b.constraint.p_max, derive_seed(cfg.seed, "feas-buyer"))
        seller_side = feasibility.SellerSide(self.s.constraint.p_min, derive_seed(cfg.seed, "feas-seller"))
        m1 = self.send(self.b, MessageKind.FEAS_COMMIT, buyer_side.commit())
        m2 = self.send(self.s, MessageKind.FEAS_BLIND, seller_side.blind(m1.payload))
        m3 = self.send(self.b, MessageKind.FEAS_RESULT, buyer_side.resolve(m2.payload))
        self.ops["feasibility"] += 1
        if not feasibility.decode_result(m3.payload):
            for agent in (self.b, self.s):
                agent.log(DecisionKind.ABORT, "pre-check: ranges do not overlap")
            raise _End(Status.INFEASIBLE, reason=AbortReason.INFEASIBLE)

    def _prove(self, agent: NegotiationAgent, price: int) -> bytes:
        if not self.cfg.proofs:
            return b""
        seed = derive_seed(self.cfg.seed, agent.agent_id, "proof", agent._seq + 1)
        try:
            proof = self.backend.prove(price, agent.constraint, self.session_id, seed)
        except RangeProofError:
            # only reachable for misbehaving agents; they send garbage instead
            proof = b""
        self.ops["proof_gen"] += 1
        return _corrupt(proof) if agent.behavior == Behavior.FORGE or not proof else proof

    def _verify(self, receiver: NegotiationAgent, price: int, proof: bytes) -> bool:
        if not self.cfg.proofs:
            return True
        self.ops["proof_verify"] += 1
        cmin, cmax = receiver.their_commitments
        return self.backend.verify(price, cmin, cmax, proof, self.session_id)

    def turn(self, agent: NegotiationAgent, rnd: int, close_only: bool = False) -> bool:
        """Play one move; returns False when the agent has nothing to send."""
        ctx = agent.context(rnd, self.cfg.max_rounds)
        cands = agent.candidates(ctx, self.epsilon, self.cfg.proofs, close_only)
        chosen: Optional[Action] = None
        for action in cands:
            if agent.gate is None:
                chosen = action
                break
            self.ops["gate"] += 1
            if agent.gate(action, ctx):
                chosen = action
                break
            agent.rejections += 1
            agent.log(DecisionKind.GUARDRAIL, f"safety gate rejected {action.origin} {action.kind}", "rejected")
        if chosen is None:
            if close_only:
                return False
            self.abort(agent, AbortReason.SAFETY, Status.SAFETY_ABORTED, "no action passed the safety gate")
        receiver = self.other(agent)
        if chosen.kind == "accept":
            self.send(agent, MessageKind.ACCEPT, encode_accept(chosen.price, self._prove(agent, chosen.price)))
            self._on_accept(receiver)
        else:
            proof = self._prove(agent, chosen.price)
            msg = self.send(agent, MessageKind.OFFER, OfferPayload(chosen.price, rnd, proof).encode())
            self._on_offer(receiver, msg)
            agent.own_last = chosen.price
            self.offers.append((agent.agent_id, rnd, chosen.price))
        return True

    def _on_offer(self, receiver: NegotiationAgent, msg: NegotiationMessage) -> None:
        try:
            offer = OfferPayload.decode(msg.payload)
        except DecodeError:
            self.abort(receiver, AbortReason.PROTOCOL, Status.PROOF_REJECTED, "malformed offer")
        if not self._verify(receiver, offer.price, offer.proof):
            self.abort(receiver, AbortReason.PROOF_REJECTED, Status.PROOF_REJECTED, "offer proof failed")
        receiver.their_last = offer.price

    def _on_accept(self, receiver: NegotiationAgent) -> None:
        msg = self.transcript[-1]
        try:
            price, proof = decode_accept(msg.payload)
        except DecodeError:
            self.abort(receiver, AbortReason.PROTOCOL, Status.PROOF_REJECTED, "malformed accept")
        expected = (
            settle(receiver.own_last, receiver.their_last)
            if receiver.own_last is not None and receiver.their_last is not None
            else None
        )
        if price != expected or not self._verify(receiver, price, proof):
            self.abort(receiver, AbortReason.PROOF_REJECTED, Status.PROOF_REJECTED, "invalid accept")
        if not receiver.constraint.contains(price):
            # only possible when the gap closes across the receiver's bound
            self.abort(receiver, AbortReason.INFEASIBLE, Status.INFEASIBLE, "cannot honour settle price")
        raise _End(Status.AGREED, price)

    def negotiate(self) -> None:
        cfg = self.cfg
        for rnd in range(1, cfg.max_rounds + 1):
            if rnd > 1:
                # buyer may accept the previous counter before bidding again
                if self._try_close(self.b, rnd - 1):
                    return
            self.rounds = rnd
            self.turn(self.b, rnd)
            self.turn(self.s, rnd)
            if self.epsilon is None and rnd == 1:
                gap = abs(self.b.own_last - self.s.own_last)
                self.epsilon = max(cfg.epsilon_floor, cfg.epsilon_fraction * gap)
        if self._try_close(self.b, cfg.max_rounds):
            return
        self.abort(self.b, AbortReason.TIMEOUT, Status.TIMEOUT, f"no agreement after {cfg.max_rounds} rounds")

    def _try_close(self, agent: NegotiationAgent, rnd: int) -> bool:
        ctx = agent.context(rnd, self.cfg.max_rounds)
        if not any(a.kind == "accept" for a in agent.candidates(ctx, self.epsilon, self.cfg.proofs, True)):
            return False
        return self.turn(agent, rnd, close_only=True)

    def run(self) -> SessionOutcome:
        status, price, reason = Status.TIMEOUT, None, None
        try:
            for agent in (self.b, self.s):
                agent.log(DecisionKind.GOAL, f"negotiate as {agent.constraint.role.value}")
            self.attest()
            if self.cfg.feasibility:
                self.feasibility()
            self.negotiate()
        except _End as end:
            status, price, reason = end.status, end.price, end.reason
        except _Lost:
            status, reason = Status.TIMEOUT, AbortReason.TIMEOUT
        except ProtocolError:
            status, reason = Status.ATTEST_FAILED if not self.session_id else Status.PROOF_REJECTED, AbortReason.PROTOCOL
        return self.outcome(status, price, reason)

    def outcome(self, status: Status, price: Optional[int], reason: Optional[AbortReason]) -> SessionOutcome:
        b, s = self.b.constraint, self.s.constraint
        lo, hi = max(b.p_min, s.p_min), min(b.p_max, s.p_max)
        fairness = 0.0
        if status == Status.AGREED and lo <= price <= hi:
            fairness = fairness_score(price, lo, hi)
        leakage = leakage_account(self.transcript, decisions_visible=self.cfg.decisions_visible)
        for agent in (self.b, self.s):
            agent.log(DecisionKind.OUTCOME, f"session ended after {self.rounds} rounds", status.value)
        return SessionOutcome(
            status=status,
            settle_price=price if status == Status.AGREED else None,
            rounds_used=self.rounds,
            fairness=fairness,
            leakage_bits=leakage,
            transcript_root=self.tree.root,
            transcript=tuple(self.transcript),
            op_counts=dict(sorted(self.ops.items())),
            abort_reason=reason,
            epsilon=self.epsilon,
            offers=tuple(self.offers),
        )


def run_session(
    buyer: NegotiationAgent, seller: NegotiationAgent, config: Optional[SessionConfig] = None
) -> SessionOutcome:
    """Run one session to completion. Agents are reset first, so they can be reused."""
    if buyer.constraint.role != Role.BUYER or seller.constraint.role != Role.SELLER:
        raise ValueError("run_session takes (buyer, seller)")
    if buyer.agent_id == seller.agent_id:
        raise ValueError("agent ids must differ")
    return _Engine(buyer, seller, config or SessionConfig()).run()


def transcript_root(messages: Sequence[NegotiationMessage]) -> bytes:
    """Merkle root over the canonical encodings, for independent checking."""
    return MerkleTree(leaf_hash(m.encode()) for m in messages).root
