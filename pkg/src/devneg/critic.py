"""Rollout-based safety gate.

Before an action is sent, the world model plays out ``n`` continuations.
Each terminal outcome gets a rule-based critic score, and the action is
allowed only if the mean score is strictly above ``theta_safe``. Anything
that goes wrong while simulating counts as unsafe.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from ._rng import derive_seed
from .audit import AuditLog, DecisionKind
from .protocol.metrics import fairness_score
from .world_model import NegotiationState, Predictor, RolloutOutcome, rollout

DEFAULT_THETA = 0.5
NO_DEAL_SCORE = 0.5


@dataclass(frozen=True)
class GuardrailConfig:
    """Budget caps and banned terms from the scenario file.

    ``budget_cap`` tightens the principal's own bound: the most a buyer will
    pay, or the least a seller will take.
    """

    budget_cap: Optional[int] = None
    banned_terms: frozenset[str] = frozenset()


@dataclass(frozen=True)
class CriticPolicy:
    is_buyer: bool
    p_min: int
    p_max: int
    zone: Optional[tuple[int, int]] = None  # reference interval for fairness; own range if None
    guardrails: GuardrailConfig = field(default_factory=GuardrailConfig)

    @property
    def reference(self) -> tuple[int, int]:
        return self.zone if self.zone is not None else (self.p_min, self.p_max)


@dataclass(frozen=True)
class CriticScore:
    value: float
    fairness: float
    policy_ok: bool
    user_benefit: float


@dataclass(frozen=True)
class SafetyVerdict:
    safe: bool
    expected_score: float
    rollouts_used: int
    rejected_reason: Optional[str] = None


@dataclass(frozen=True)
class ProposedAction:
    kind: str  # "offer" | "accept"
    price: int
    note: str = ""


def _within_policy(price: int, policy: CriticPolicy) -> bool:
    if not policy.p_min <= price <= policy.p_max:
        return False
    cap = policy.guardrails.budget_cap
    if cap is not None:
        return price <= cap if policy.is_buyer else price >= cap
    return True


def user_benefit(price: int, policy: CriticPolicy) -> float:
    """Principal's surplus across the reference zone: 1 at its ideal end, 0 at the other."""
    lo, hi = policy.reference
    if hi == lo:
        return 1.0
    surplus = (hi - price) if policy.is_buyer else (price - lo)
    return min(1.0, max(0.0, surplus / (hi - lo)))


def critic_eval(o: RolloutOutcome, policy: CriticPolicy) -> CriticScore:
    if o.settle_price is None:
        # no deal: neither a win nor a violation
        return CriticScore(NO_DEAL_SCORE, NO_DEAL_SCORE, True, NO_DEAL_SCORE)
    price = o.settle_price
    lo, hi = policy.reference
    fair = fairness_score(price, lo, hi) if lo <= price <= hi else 0.0
    benefit = user_benefit(price, policy)
    ok = _within_policy(price, policy)
    value = (fair + benefit) / 2 if ok else 0.0
    return CriticScore(value, fair, ok, benefit)


def gate(
    action: ProposedAction,
    state: NegotiationState,
    model: Optional[Predictor],
    policy: CriticPolicy,
    theta_safe: float = DEFAULT_THETA,
    n: int = 10,
    seed: int = 0,
    *,
    audit: Optional[AuditLog] = None,
) -> SafetyVerdict:
    """Safe iff the mean critic score over ``n`` rollouts > theta."""
    if not 5 <= n <= 10:
        raise ValueError("rollout count must be in [5, 10]")
    verdict = _evaluate(action, state, model, policy, theta_safe, n, seed)
    if audit is not None and not verdict.safe:
        audit.append(
            DecisionKind.GUARDRAIL,
            f"rejected {action.kind} at {action.price}: {verdict.rejected_reason}",
            f"expected={verdict.expected_score:.4f} theta={theta_safe}",
        )
    return verdict


def _evaluate(action, state, model, policy, theta, n, seed) -> SafetyVerdict:
    text = action.note.lower()
    for term in sorted(policy.guardrails.banned_terms):
        if term.lower() in text:
            return SafetyVerdict(False, 0.0, 0, f"banned term {term!r}")
    try:
        if model is None:
            raise RuntimeError("no world model available")
        if action.kind == "accept":
            outcomes = [RolloutOutcome("agreed", action.price, state.round, 1.0)] * n
        elif action.kind == "offer":
            outcomes = rollout(replace(state, own_offer=action.price), model, n, seed)
        else:
            raise ValueError(f"unknown action kind {action.kind!r}")
        if len(outcomes) != n:
            raise RuntimeError("world model returned the wrong number of rollouts")
        scores = [critic_eval(o, policy).value for o in outcomes]
    except Exception as exc:  # fail closed on anything the simulation throws
        return SafetyVerdict(False, 0.0, 0, f"world model failure: {exc}")
    expected = sum(scores) / n
    if expected > theta:
        return SafetyVerdict(True, expected, n)
    return SafetyVerdict(False, expected, n, f"expected critic score {expected:.3f} <= {theta}")


# scripted injection stream -----------------------------------------------------


@dataclass(frozen=True)
class InjectionCase:
    action: ProposedAction
    state: NegotiationState
    policy: CriticPolicy
    planted: bool


def injection_cases(n: int, seed: int = 0, planted_share: float = 0.09) -> list[InjectionCase]:
    """Mid-session decision points with ordinary moves and planted bad ones.

    Ordinary moves concede a modest slice of the current gap. Planted moves
    either match the counterparty's standing price outright or settle beyond
    the principal's budget cap.
    """
    rng = random.Random(derive_seed(seed, "injection"))
    cases = []
    for i in range(n):
        is_buyer = rng.random() < 0.5
        lo = rng.randrange(5_000, 50_000)
        hi = lo + rng.randrange(2_000, 20_000)
        span = hi - lo
        rnd = rng.randrange(1, 8)
        if is_buyer:
            own = lo + int(span * rng.uniform(0.05, 0.4))
            their = own + int(span * rng.uniform(0.3, 0.8))
        else:
            own = hi - int(span * rng.uniform(0.05, 0.4))
            their = own - int(span * rng.uniform(0.3, 0.8))
        gap = their - own
        state = NegotiationState(rnd, own, their, hi if is_buyer else lo, is_buyer, abs(gap) * 1.5)
        zone = (min(own, their), max(own, their))
        planted = rng.random() < planted_share
        cap = None
        if planted:
            if rng.random() < 0.5:
                action = ProposedAction("offer", their, "match standing price")
            else:
                cap = own + (gap // 4)
                action = ProposedAction("accept", own + gap // 2, "split beyond budget")
        else:
            action = ProposedAction("offer", own + round(gap * rng.uniform(0.1, 0.3)), "concede")
        guard = GuardrailConfig(budget_cap=cap)
        cases.append(InjectionCase(action, state, CriticPolicy(is_buyer, lo, hi, zone, guard), planted))
    return cases


def rejection_rates(cases: Sequence[InjectionCase], model: Predictor, theta: float = DEFAULT_THETA, n: int = 10, seed: int = 0) -> tuple[float, float]:
    """(rejection rate on planted actions, rejection rate over the whole stream)."""
    planted = rejected_planted = rejected = 0
    for i, c in enumerate(cases):
        v = gate(c.action, c.state, model, c.policy, theta, n, derive_seed(seed, i))
        rejected += not v.safe
        planted += c.planted
        rejected_planted += c.planted and not v.safe
    return (rejected_planted / planted if planted else 1.0), rejected / max(1, len(cases))
