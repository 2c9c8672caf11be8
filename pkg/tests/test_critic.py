from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import devneg.critic as critic
from devneg.audit import AuditLog, DecisionKind
from devneg.critic import (
    CriticPolicy,
    CriticScore,
    GuardrailConfig,
    ProposedAction,
    critic_eval,
    gate,
    injection_cases,
    rejection_rates,
    user_benefit,
)
from devneg.world_model import NegotiationState, RolloutOutcome

BUYER = CriticPolicy(is_buyer=True, p_min=8000, p_max=12000, zone=(9000, 11000))
STATE = NegotiationState(round=3, own_offer=9000, their_offer=11000, own_limit=12000, is_buyer=True, scale=3000)


def settled(price):
    return RolloutOutcome("agreed", price, 4, 1.0)


class Fixed:
    def __init__(self, probs):
        self.p = np.array(probs, dtype=float)

    def predict_proba(self, X):
        return np.tile(self.p, (np.atleast_2d(X).shape[0], 1))


class Broken:
    def predict_proba(self, X):
        raise RuntimeError("model crashed")


class Short:
    def predict_proba(self, X):
        return np.full((1, 4), 0.25)


def test_over_budget_scores_zero():
    s = critic_eval(settled(12500), BUYER)
    assert s.value == 0.0 and not s.policy_ok


def test_midpoint_is_fair():
    s = critic_eval(settled(10000), BUYER)
    assert s.fairness == 1.0 and s.user_benefit == 0.5 and s.value == 0.75


def test_ideal_end_example():
    s = critic_eval(settled(9000), BUYER)
    assert (s.user_benefit, s.fairness, s.value) == (1.0, 0.0, 0.5)


def test_seller_benefit_is_mirrored():
    seller = CriticPolicy(False, 8000, 12000, zone=(9000, 11000))
    assert user_benefit(11000, seller) == 1.0 and user_benefit(9000, seller) == 0.0


def test_no_deal_is_neutral():
    s = critic_eval(RolloutOutcome("timeout", None, 10, 1.0), BUYER)
    assert s.policy_ok and s.value == critic.NO_DEAL_SCORE


def test_budget_cap_tightens_bound():
    capped = CriticPolicy(True, 8000, 12000, (9000, 11000), GuardrailConfig(budget_cap=9500))
    assert critic_eval(settled(9600), capped).value == 0.0
    assert critic_eval(settled(9400), capped).policy_ok


@given(st.integers(0, 20000))
def test_score_structure(price):
    s = critic_eval(settled(price), BUYER)
    assert 0.0 <= s.value <= 1.0
    assert s.value == (0.0 if not s.policy_ok else pytest.approx((s.fairness + s.user_benefit) / 2))


@pytest.mark.parametrize("score,safe", [(1.0, True), (0.4, False), (0.5, False), (0.5000001, True)])
def test_gate_threshold_is_strict(monkeypatch, score, safe):
    monkeypatch.setattr(critic, "critic_eval", lambda o, p: CriticScore(score, score, True, score))
    v = gate(ProposedAction("offer", 9500), STATE, Fixed([0.2] * 5), BUYER, theta_safe=0.5, n=5)
    assert v.safe is safe and v.rollouts_used == 5 and v.expected_score == pytest.approx(score)
    assert (v.rejected_reason is None) == safe


@pytest.mark.parametrize("model", [None, Broken(), Short()])
def test_gate_fails_closed(model):
    v = gate(ProposedAction("offer", 9500), STATE, model, BUYER)
    assert not v.safe and v.expected_score == 0.0 and "world model failure" in v.rejected_reason


def test_unknown_action_fails_closed(student):
    assert not gate(ProposedAction("teleport", 9500), STATE, student, BUYER).safe


def test_rollout_count_bounds(student):
    with pytest.raises(ValueError):
        gate(ProposedAction("offer", 9500), STATE, student, BUYER, n=4)


def test_accept_gated_on_its_price(student):
    assert gate(ProposedAction("accept", 10000), STATE, student, BUYER).safe
    assert not gate(ProposedAction("accept", 12500), STATE, student, BUYER).safe


def test_deterministic(student):
    a = gate(ProposedAction("offer", 9700), STATE, student, BUYER, seed=5)
    b = gate(ProposedAction("offer", 9700), STATE, student, BUYER, seed=5)
    assert a == b


def test_banned_terms(student):
    policy = CriticPolicy(True, 8000, 12000, (9000, 11000), GuardrailConfig(banned_terms=frozenset({"kickback"})))
    v = gate(ProposedAction("offer", 9500, "includes a KICKBACK clause"), STATE, student, policy)
    assert not v.safe and "kickback" in v.rejected_reason


def test_rejections_are_audited(student):
    log = AuditLog(clock=lambda: 0)
    gate(ProposedAction("accept", 10000), STATE, student, BUYER, audit=log)
    assert len(log) == 0
    gate(ProposedAction("accept", 12500), STATE, student, BUYER, audit=log)
    assert [r.kind for r in log.records] == [DecisionKind.GUARDRAIL]
    assert "12500" in log.records[0].reasoning


def test_injection_rates(student):
    cases = injection_cases(300, seed=0)
    assert sum(c.planted for c in cases) > 10
    planted, overall = rejection_rates(cases, student, theta=0.5, n=10, seed=0)
    assert planted >= 0.95
    assert 0.05 <= overall <= 0.15


def test_injection_cases_seeded():
    assert injection_cases(50, seed=3) == injection_cases(50, seed=3)
