"""Trial execution, cost model and aggregation.

A trial runs one real session through the protocol engine (with modeled
range proofs by default, see ``ModeledProofs``) and then prices the
operations the engine counted against the device tier's cost table. Where
each offloadable task runs is decided by the baseline policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from multiprocessing import get_context
from typing import Callable, Iterable, Optional, Sequence

from .._rng import derive_seed
from ..critic import CriticPolicy, GuardrailConfig, ProposedAction, gate as safety_gate
from ..proofs import PrivateConstraint
from ..protocol.metrics import PRIVATE_BITS_PER_PARTY, leakage_account
from ..protocol.session import (
    Action,
    Behavior,
    ModeledProofs,
    NegotiationAgent,
    SessionConfig,
    SigmaProofs,
    Status,
    run_session,
)
from ..protocol.strategies import StrategyContext, make_strategy
from ..scheduler import (
    CLOUD,
    LOCAL,
    Estimate,
    OffloadScheduler,
    Placement,
    PrivacyClass,
    SchedulerWeights,
    TaskKind,
    TaskProfile,
)
from ..state_codec import ImportanceParams, compress, raw_size, synthetic_state
from ..world_model import Move, NegotiationState, distill, state_features
from .config import COMPONENTS, AblationConfig, Baseline, DeviceTier, ScenarioSpec, load_calibration
from .scenarios import Scenario, generate_scenarios

BREAKDOWN_KEYS = ("attestation", "feasibility", "proofs", "network", "planning", "critic", "tools", "migration")
FIELD_BITS = PRIVATE_BITS_PER_PARTY // 2
# the only tasks a naive latency-threshold policy ever moves off-device
NAIVE_OFFLOADABLE = frozenset({TaskKind.PLAN_INFERENCE, TaskKind.MARKET_LOOKUP, TaskKind.SUMMARIZE, TaskKind.CRITIC_EVAL})


@lru_cache(maxsize=1)
def default_student():
    cal = load_calibration()
    return distill(epochs=cal["student_epochs"], seed=cal["student_seed"])


@lru_cache(maxsize=None)
def tier_transfer_fraction(tier: str) -> float:
    """Compressed size over raw size, measured once per tier by the real codec."""
    cal = load_calibration()
    params = ImportanceParams.for_tier(tier)
    state, goal = synthetic_state(int(cal["codec_sample_mb"] * 2**20), seed=0, params=params)
    c = compress(state, params, goal, now=40, seed=0)
    return c.size / raw_size(state)


# placement -----------------------------------------------------------------


def _nominal_fields(task: str, side: str) -> list[tuple[str, int]]:
    if task == TaskKind.MARKET_LOOKUP.value:
        return []
    if task == TaskKind.CRITIC_EVAL.value:
        # only the reservation price feeds the critic's benefit term
        return [(f"{side}.{'p_max' if side == 'buyer' else 'p_min'}", FIELD_BITS)]
    return [(f"{side}.p_min", FIELD_BITS), (f"{side}.p_max", FIELD_BITS)]


def task_profiles(tier: DeviceTier) -> list[TaskProfile]:
    cal = load_calibration()
    out = []
    for kind in TaskKind:
        ms, joules = tier.op_cost_table[kind.value]
        c_ms, c_j, c_cost = cal["cloud"][kind.value]
        private = kind != TaskKind.MARKET_LOOKUP
        out.append(
            TaskProfile(
                task_id=kind.value,
                kind=kind,
                privacy_class=PrivacyClass.USER_PRIVATE if private else PrivacyClass.PUBLIC,
                est_latency=Estimate(ms, c_ms + cal["cloud_rtt_ms"]),
                est_energy=Estimate(joules, c_j),
                est_cost=Estimate(0.0, c_cost),
                privacy_risk=Estimate(0.0, 2.0 * FIELD_BITS if private else 0.0),
            )
        )
    return out


def placements_for(tier: DeviceTier, baseline: Baseline, offloading: bool) -> dict[str, str]:
    """Location of every costed operation, offloadable or not."""
    cal = load_calibration()
    policy = {
        Baseline.PROPOSED: "optimal" if offloading else "local",
        Baseline.CLOUD_ONLY: "cloud",
        Baseline.DEVICE_ONLY: "local",
        Baseline.NAIVE_EDGE: "naive",
    }[baseline]
    w = cal["weights"]
    sched = OffloadScheduler(
        task_profiles(tier),
        SchedulerWeights(w["alpha"], w["beta"], w["gamma"], w["p_max"]),
        policy=policy,
        naive_threshold_ms=cal["naive_threshold_ms"],
    )
    loc = {}
    for kind in TaskKind:
        where = sched.place(kind.value)
        if policy == "naive" and kind not in NAIVE_OFFLOADABLE:
            where = LOCAL
        loc[kind.value] = where
    protocol_side = CLOUD if baseline == Baseline.CLOUD_ONLY else LOCAL
    for op in ("attest", "feasibility", "proof_verify"):
        loc[op] = protocol_side
    return loc


# one trial --------------------------------------------------------------------


@dataclass(frozen=True)
class TrialResult:
    index: int
    status: str
    success: bool
    feasible: bool
    rounds: int
    fairness: float
    leakage_bits: int
    latency_ms: float
    energy_j: float
    cloud_cost: float
    breakdown: dict[str, float] = field(default_factory=dict)

    @property
    def terminated(self) -> bool:
        return self.status != Status.TIMEOUT.value


@dataclass
class _Usage:
    plan: dict[str, int] = field(default_factory=lambda: {"buyer": 0, "seller": 0})
    critic: dict[str, int] = field(default_factory=lambda: {"buyer": 0, "seller": 0})


def _planner(side: str, sc: Scenario, student, usage: _Usage, closing: int) -> Callable[[StrategyContext], Optional[int]]:
    """Closing-round planner: meet in the middle unless the counterparty looks set to walk."""

    def plan(ctx: StrategyContext) -> Optional[int]:
        if ctx.round <= ctx.max_rounds - closing or ctx.own_last is None or ctx.their_last is None:
            return None
        usage.plan[side] += 1
        st = NegotiationState(
            ctx.round, ctx.own_last, ctx.their_last, ctx.reservation, ctx.is_buyer,
            max(1, ctx.p_max - ctx.p_min), ctx.max_rounds, domain=sc.domain, complexity=sc.complexity,
        )
        probs = student.predict_proba(state_features(st, ctx.round, ctx.own_last, ctx.their_last, 0.0))[0]
        if probs.argmax() == Move.REJECT:
            return None
        return (ctx.own_last + ctx.their_last) // 2

    return plan


def _gate(side: str, sc: Scenario, student, usage: _Usage, banned: frozenset[str], cal: dict) -> Callable[[Action, StrategyContext], bool]:
    def check(action: Action, ctx: StrategyContext) -> bool:
        if ctx.their_last is None or ctx.own_last is None or action.origin == "hold":
            # an opening at the ideal end, or a repeat of an already vetted offer
            return True
        usage.critic[side] += 1
        own = ctx.own_last if ctx.own_last is not None else ctx.opening
        # the counterparty still answers this move, so simulate from the round before
        st = NegotiationState(
            ctx.round - 1, own, ctx.their_last, ctx.reservation, ctx.is_buyer,
            max(1, ctx.p_max - ctx.p_min), ctx.max_rounds, domain=sc.domain, complexity=sc.complexity, own_step=cal["rollout_own_step"],
        )
        policy = CriticPolicy(
            ctx.is_buyer, ctx.p_min, ctx.p_max,
            zone=sc.market,
            guardrails=GuardrailConfig(banned_terms=banned),
        )
        verdict = safety_gate(
            ProposedAction(action.kind, action.price, action.origin), st, student, policy,
            cal["theta_safe"], cal["rollouts"], derive_seed(sc.seed, side, "gate", ctx.round, action.kind, action.price),
        )
        return verdict.safe

    return check


def run_trial(
    sc: Scenario,
    tier: DeviceTier,
    ablation: AblationConfig = AblationConfig(),
    baseline: Baseline = Baseline.PROPOSED,
    *,
    student=None,
    banned_terms: frozenset[str] = frozenset(),
    real_proofs: bool = False,
) -> TrialResult:
    cal = load_calibration()
    planning = ablation.on("world_model") and baseline != Baseline.DEVICE_ONLY
    gating = planning and ablation.on("safety_critic")
    if planning and student is None:
        student = default_student()
    usage = _Usage()
    agents = {}
    for side, (lo, hi), (sname, sparams) in (
        ("buyer", sc.buyer, sc.buyer_strategy),
        ("seller", sc.seller, sc.seller_strategy),
    ):
        bluff = sc.bluffer == side
        constraint = PrivateConstraint.create(lo, hi, side, rng_seed=derive_seed(sc.seed, side, "commit"))
        agents[side] = NegotiationAgent(
            side,
            constraint,
            make_strategy(sname, **dict(sparams)),
            behavior=Behavior.BLUFF if bluff else Behavior.HONEST,
            harmful_round=sc.harmful[1] if sc.harmful and sc.harmful[0] == side else None,
            # a bluffing principal runs without its own planner or guardrails
            planner=_planner(side, sc, student, usage, cal["closing_rounds"]) if planning and not bluff else None,
            gate=_gate(side, sc, student, usage, banned_terms, cal) if gating and not bluff else None,
        )
    cfg = SessionConfig(
        feasibility=ablation.on("feasibility"),
        proofs=ablation.on("negotiation_proofs"),
        memory=ablation.on("memory"),
        seed=sc.seed,
        key_bits=cal["key_bits"],
        key_seed=cal["key_seed"],
        loss=cal["loss"],
        retry_budget=cal["retry_budget"],
        decisions_visible=baseline != Baseline.DEVICE_ONLY,
        proof_backend=SigmaProofs() if real_proofs else ModeledProofs(),
    )
    out = run_session(agents["buyer"], agents["seller"], cfg)

    success = (
        out.status == Status.AGREED
        and sc.feasible
        and sc.buyer[0] <= out.settle_price <= sc.buyer[1]
        and sc.seller[0] <= out.settle_price <= sc.seller[1]
        and out.fairness >= cal["fairness_min"]
    ) or (out.status == Status.INFEASIBLE and not sc.feasible)

    loc = placements_for(tier, baseline, ablation.on("offloading"))
    ops = out.op_counts
    uses: list[tuple[str, str, int]] = [  # (task, side, count)
        ("market_lookup", "buyer", 1),
        ("market_lookup", "seller", 1),
    ]
    for side in ("buyer", "seller"):
        uses.append(("plan_inference", side, usage.plan[side]))
        uses.append(("critic_eval", side, usage.critic[side]))
        uses.append(("proof_gen", side, 1 if ops.get("proof_gen") else 0))
    if baseline == Baseline.CLOUD_ONLY:
        # every bound is shipped to the cloud agent
        uses.append(("feasibility", "buyer", 1))
        uses.append(("feasibility", "seller", 1))
    if sc.migration:
        uses.append(("summarize", "buyer", 1))

    placements = []
    for task, side, n in uses:
        if n and loc[task] == CLOUD:
            placements.append(Placement(task, task, CLOUD, tuple(_nominal_fields(task, side))))
    leakage = leakage_account(out.transcript, placements, decisions_visible=cfg.decisions_visible)

    table = tier.op_cost_table
    cloud = cal["cloud"]
    rtt = cal["cloud_rtt_ms"]

    def cost(op: str, n: float) -> tuple[float, float, float]:
        if loc[op] == CLOUD:
            ms, j, usd = cloud[op]
            return n * (ms + rtt), n * j, n * usd
        ms, j = table[op]
        return n * ms, n * j, 0.0

    parts = {k: (0.0, 0.0, 0.0) for k in BREAKDOWN_KEYS}

    def add(key: str, c: tuple[float, float, float]) -> None:
        parts[key] = tuple(a + b for a, b in zip(parts[key], c))

    add("attestation", cost("attest", ops.get("attest", 0)))
    add("feasibility", cost("feasibility", ops.get("feasibility", 0)))
    add("proofs", cost("proof_gen", ops.get("proof_gen", 0) * sc.terms))
    add("proofs", cost("proof_verify", ops.get("proof_verify", 0) * sc.terms))
    wire = ops.get("message", 0) + ops.get("retransmit", 0)
    hop = cal["link_ms"] + (rtt if baseline == Baseline.CLOUD_ONLY else 0.0)
    add("network", (wire * hop, wire * cal["link_j"], 0.0))
    add("planning", cost("plan_inference", sum(usage.plan.values())))
    add("critic", cost("critic_eval", sum(usage.critic.values())))
    add("tools", cost("market_lookup", 2))
    if sc.migration:
        mb = cal["state_mb"]
        if ablation.on("state_transfer"):
            mb *= tier_transfer_fraction(tier.tier)
            add("migration", cost("summarize", 1))
            add("migration", (tier.codec_ms_per_mb * cal["state_mb"], 0.0, 0.0))
        add("migration", (1000.0 * mb / cal["bandwidth_mb_s"], mb * cal["radio_j_per_mb"], 0.0))

    breakdown = {k: parts[k][0] for k in BREAKDOWN_KEYS}
    return TrialResult(
        index=sc.index,
        status=out.status.value,
        success=bool(success),
        feasible=sc.feasible,
        rounds=out.rounds_used,
        fairness=out.fairness,
        leakage_bits=leakage,
        latency_ms=math.fsum(breakdown.values()),
        energy_j=math.fsum(p[1] for p in parts.values()),
        cloud_cost=math.fsum(p[2] for p in parts.values()),
        breakdown=breakdown,
    )


# suites -----------------------------------------------------------------------


@dataclass(frozen=True)
class TrialReport:
    label: str
    trials: int
    success_rate: float
    success_sd: float
    success_ci95: tuple[float, float]
    mean_rounds: float
    mean_fairness: float
    mean_leakage_bits: float
    latency_ms: float
    latency_sd: float
    energy_j: float
    cloud_cost: float
    termination_share: float
    breakdown: dict[str, float]
    results: tuple[TrialResult, ...] = field(repr=False, default=())

    def record(self) -> dict:
        return {
            "label": self.label,
            "trials": self.trials,
            "success_rate": self.success_rate,
            "success_sd": self.success_sd,
            "success_ci95": list(self.success_ci95),
            "mean_rounds": self.mean_rounds,
            "mean_fairness": self.mean_fairness,
            "mean_leakage_bits": self.mean_leakage_bits,
            "latency_ms": self.latency_ms,
            "latency_sd": self.latency_sd,
            "energy_j": self.energy_j,
            "cloud_cost": self.cloud_cost,
            "termination_share": self.termination_share,
            "breakdown": dict(self.breakdown),
        }


def _mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs)


def _sd(xs: Sequence[float]) -> float:
    if len(xs) < 2:
        return 0.0
    m = _mean(xs)
    return math.sqrt(math.fsum((x - m) ** 2 for x in xs) / (len(xs) - 1))


def aggregate(label: str, results: Sequence[TrialResult]) -> TrialReport:
    """Summary statistics; summation runs in trial-index order for stable output."""
    results = tuple(sorted(results, key=lambda r: r.index))
    n = len(results)
    succ = [1.0 if r.success else 0.0 for r in results]
    rate, sd = _mean(succ), _sd(succ)
    half = 1.96 * sd / math.sqrt(n)
    lat = [r.latency_ms for r in results]
    return TrialReport(
        label=label,
        trials=n,
        success_rate=rate,
        success_sd=sd,
        success_ci95=(max(0.0, rate - half), min(1.0, rate + half)),
        mean_rounds=_mean([r.rounds for r in results]),
        mean_fairness=_mean([r.fairness for r in results]),
        mean_leakage_bits=_mean([r.leakage_bits for r in results]),
        latency_ms=_mean(lat),
        latency_sd=_sd(lat),
        energy_j=_mean([r.energy_j for r in results]),
        cloud_cost=_mean([r.cloud_cost for r in results]),
        termination_share=_mean([1.0 if r.terminated else 0.0 for r in results]),
        breakdown={k: _mean([r.breakdown[k] for r in results]) for k in BREAKDOWN_KEYS},
        results=results,
    )


def _work(args) -> list[TrialResult]:
    chunk, tier_name, disable, baseline, banned = args
    tier = DeviceTier.named(tier_name)
    ablation = AblationConfig(frozenset(disable))
    return [run_trial(sc, tier, ablation, baseline, banned_terms=banned) for sc in chunk]


def _run_many(
    scenarios: Sequence[Scenario], tier: str, ablation: AblationConfig, baseline: Baseline, banned: frozenset[str], jobs: int
) -> list[TrialResult]:
    if jobs <= 1 or len(scenarios) < 2:
        return _work((list(scenarios), tier, ablation.disable, baseline, banned))
    default_student()  # train once; forked workers inherit the cache
    chunks = [list(scenarios[i::jobs]) for i in range(jobs)]
    with get_context("fork").Pool(jobs) as pool:
        parts = pool.map(_work, [(c, tier, ablation.disable, baseline, banned) for c in chunks if c])
    return sorted((r for p in parts for r in p), key=lambda r: r.index)


def run_suite(
    spec: ScenarioSpec,
    tier: str = "mid",
    ablation: AblationConfig = AblationConfig(),
    baseline_policy: Baseline = Baseline.PROPOSED,
    *,
    jobs: int = 1,
    scenarios: Optional[Sequence[Scenario]] = None,
    label: Optional[str] = None,
) -> TrialReport:
    """``spec.trials`` trials. Passing ``scenarios`` reuses instances across configs."""
    scenarios = generate_scenarios(spec) if scenarios is None else scenarios
    results = _run_many(scenarios, tier, ablation, Baseline(baseline_policy), frozenset(spec.banned_terms), jobs)
    if label is None:
        label = Baseline(baseline_policy).value if not ablation.disable else ablation.label
    return aggregate(label, results)


@dataclass(frozen=True)
class Comparison:
    rows: dict[str, TrialReport]
    checks: dict[str, bool]

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


def compare_baselines(spec: ScenarioSpec, tier: str = "mid", *, jobs: int = 1) -> Comparison:
    scenarios = generate_scenarios(spec)
    rows = {
        b.value: run_suite(spec, tier, AblationConfig(), b, jobs=jobs, scenarios=scenarios)
        for b in (Baseline.CLOUD_ONLY, Baseline.DEVICE_ONLY, Baseline.NAIVE_EDGE, Baseline.PROPOSED)
    }
    cap = 2 * PRIVATE_BITS_PER_PARTY
    leak = {k: r.mean_leakage_bits for k, r in rows.items()}
    p = rows["proposed"]
    checks = {
        "leakage device_only == 0": leak["device_only"] == 0,
        "leakage device_only < proposed": leak["device_only"] < leak["proposed"],
        "leakage proposed < naive_edge": leak["proposed"] < leak["naive_edge"],
        "leakage naive_edge < cloud_only": leak["naive_edge"] < leak["cloud_only"],
        f"leakage cloud_only == {cap}": leak["cloud_only"] == cap,
        "latency proposed < cloud_only": p.latency_ms < rows["cloud_only"].latency_ms,
    }
    for k in ("cloud_only", "device_only", "naive_edge"):
        checks[f"success proposed >= {k}"] = p.success_rate >= rows[k].success_rate
    return Comparison(rows, checks)


@dataclass(frozen=True)
class AblationRow:
    component: str
    report: TrialReport
    success_delta: float
    latency_delta: float
    fairness_delta: float
    leakage_delta: float
    expected: str
    ok: bool

    def record(self) -> dict:
        return {
            "component": self.component,
            "success_delta": self.success_delta,
            "latency_delta": self.latency_delta,
            "fairness_delta": self.fairness_delta,
            "leakage_delta": self.leakage_delta,
            "expected": self.expected,
            "ok": self.ok,
            "report": self.report.record(),
        }


# expected sign of each ablation on the paired full run
EXPECTED_SIGN = {
    "feasibility": "success < 0",
    "negotiation_proofs": "success < 0",
    "world_model": "success < 0",
    "safety_critic": "success < 0",
    "memory": "success == 0 and latency == 0",
    "state_transfer": "latency > 0",
    "offloading": "latency > 0",
}


def _sign_ok(component: str, ds: float, dl: float) -> bool:
    rule = EXPECTED_SIGN[component]
    if rule == "success < 0":
        return ds < 0
    if rule == "latency > 0":
        return dl > 0
    return ds == 0 and dl == 0


def run_ablations(
    spec: ScenarioSpec, tier: str = "mid", components: Iterable[str] = COMPONENTS, *, jobs: int = 1
) -> tuple[TrialReport, list[AblationRow]]:
    scenarios = generate_scenarios(spec)
    full = run_suite(spec, tier, AblationConfig(), jobs=jobs, scenarios=scenarios, label="full")
    rows = []
    for comp in components:
        rep = run_suite(spec, tier, AblationConfig(frozenset({comp})), jobs=jobs, scenarios=scenarios)
        ds = rep.success_rate - full.success_rate
        dl = rep.latency_ms - full.latency_ms
        rows.append(
            AblationRow(
                comp, rep, ds, dl,
                rep.mean_fairness - full.mean_fairness,
                rep.mean_leakage_bits - full.mean_leakage_bits,
                EXPECTED_SIGN[comp], _sign_ok(comp, ds, dl),
            )
        )
    return full, rows
