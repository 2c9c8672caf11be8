from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from devneg.harness.config import (
    COMPONENTS,
    AblationConfig,
    Baseline,
    ConfigError,
    DeviceTier,
    RangeDist,
    ScenarioSpec,
    check_tier_order,
    load_calibration,
    load_config,
    parse_config,
)
from devneg.harness.report import records, table
from devneg.harness.runner import BREAKDOWN_KEYS, compare_baselines, run_ablations, run_suite
from devneg.harness.scenarios import generate_scenarios

SMALL = ScenarioSpec(trials=30, seed=3)


def test_scenarios_deterministic():
    assert generate_scenarios(SMALL) == generate_scenarios(SMALL)
    assert generate_scenarios(SMALL) != generate_scenarios(SMALL.with_(seed=4))


def test_trial_prefix_is_stable():
    # trial i depends only on (root seed, i), so variants pair by index
    assert generate_scenarios(SMALL.with_(trials=10)) == generate_scenarios(SMALL)[:10]


@pytest.mark.parametrize("domain,lo,hi", [("insurance", 112100, 6377000), ("b2b", 5000, 2500000)])
def test_prices_inside_domain_band(domain, lo, hi):
    for sc in generate_scenarios(ScenarioSpec(domain=domain, trials=300, seed=1)):
        for a, b in (sc.buyer, sc.seller, sc.market):
            assert lo <= a < b <= hi


def test_overlap_share_and_terms():
    scs = generate_scenarios(ScenarioSpec(trials=500, seed=2))
    share = sum(sc.feasible for sc in scs) / len(scs)
    assert 0.85 <= share <= 0.95
    assert {sc.terms for sc in generate_scenarios(ScenarioSpec(complexity="S", trials=20))} == {1}
    assert {sc.terms for sc in generate_scenarios(ScenarioSpec(complexity="C", trials=20))} == {3}


@settings(max_examples=20)
@given(st.floats(0, 1), st.integers(0, 2**32))
def test_overlap_probability_extremes(p, seed):
    scs = generate_scenarios(ScenarioSpec(trials=20, seed=seed, overlap_probability=round(p)))
    assert all(sc.feasible == bool(round(p)) for sc in scs)


def test_strategy_pair_fixed():
    scs = generate_scenarios(ScenarioSpec(trials=10, strategy_pair=("boulware", "linear")))
    assert {(sc.buyer_strategy[0], sc.seller_strategy[0]) for sc in scs} == {("boulware", "linear")}


def test_spec_validation():
    for kw in ({"domain": "retail"}, {"complexity": "X"}, {"trials": 0}, {"overlap_probability": 2.0}):
        with pytest.raises(ConfigError):
            ScenarioSpec(**kw)
    with pytest.raises(ConfigError):
        AblationConfig(frozenset({"teleport"}))
    with pytest.raises(ConfigError):
        DeviceTier.named("ultra")


def test_tier_order():
    assert check_tier_order()
    high, mid, low = (DeviceTier.named(t) for t in ("high", "mid", "low"))
    assert not check_tier_order([low, mid])


CONFIG = """
[scenario]
domain = b2b
complexity = C
trials = 12
seed = 9
tier = low
strategy_pair = linear, fraction

[buyer_range]
lo = 10000
hi = 900000

[ablation]
disable = memory, offloading

[guardrails]
banned_terms = kickback, bribe

[baseline]
policy = naive_edge
"""


def test_parse_config(tmp_path):
    cfg = parse_config(CONFIG)
    assert cfg.spec.domain == "b2b" and cfg.spec.trials == 12 and cfg.tier == "low"
    assert cfg.spec.buyer_range_dist == RangeDist(10000, 900000, 0.15, 0.4)
    assert cfg.ablation.disable == {"memory", "offloading"}
    assert cfg.spec.banned_terms == ("kickback", "bribe")
    assert cfg.baseline == Baseline.NAIVE_EDGE
    path = tmp_path / "run.ini"
    path.write_text(CONFIG)
    assert load_config(path) == cfg
    assert load_config(path).fingerprint() == cfg.fingerprint()


@pytest.mark.parametrize(
    "text",
    [
        "",
        "[scenario]\ndomain = retail\n",
        "[scenario]\ntrials = many\n",
        "[scenario]\ntier = ultra\n",
        "[scenario]\nstrategy_pair = linear\n",
        "[scenario]\n[buyer_range]\nlo = 10\nhi = 5\n",
        "[scenario]\n[ablation]\ndisable = teleport\n",
        "[scenario]\n[baseline]\npolicy = magic\n",
        "not an ini file",
    ],
)
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")


def test_calibration_shape():
    cal = load_calibration()
    assert cal["success_band"] == [0.85, 0.9] and cal["theta_safe"] == 0.5
    assert 5 <= cal["rollouts"] <= 10


@pytest.fixture(scope="module")
def suite():
    return run_suite(SMALL, "mid")


def test_breakdown_sums_to_total(suite):
    assert sum(suite.breakdown.values()) == pytest.approx(suite.latency_ms)
    assert tuple(suite.breakdown) == BREAKDOWN_KEYS
    for r in suite.results:
        assert sum(r.breakdown.values()) == pytest.approx(r.latency_ms)


def test_report_fields(suite):
    assert suite.trials == 30 and 0 <= suite.success_rate <= 1
    lo, hi = suite.success_ci95
    assert lo <= suite.success_rate <= hi
    assert all(r.rounds <= 10 for r in suite.results)
    for r in suite.results:
        # success is a fair in-range deal, or a correct infeasibility verdict
        if r.success:
            assert (r.status == "Agreed") == r.feasible
            assert r.status in ("Agreed", "Infeasible")


def test_suite_is_deterministic_and_parallel_safe(suite):
    again = run_suite(SMALL, "mid", jobs=2)
    assert records(again.record()) == records(suite.record())
    assert table([again]) == table([suite])


def test_memory_ablation_changes_nothing(suite):
    off = run_suite(SMALL, "mid", AblationConfig(frozenset({"memory"})))
    assert off.success_rate == suite.success_rate and off.latency_ms == suite.latency_ms


def test_slower_tier_costs_more(suite):
    assert run_suite(SMALL, "low").latency_ms > suite.latency_ms > run_suite(SMALL, "high").latency_ms


def test_device_only_leaks_nothing():
    rep = run_suite(SMALL, "mid", baseline_policy=Baseline.DEVICE_ONLY)
    assert rep.mean_leakage_bits == 0


def test_baseline_ordering():
    cmp = compare_baselines(ScenarioSpec(trials=60, seed=1), "mid")
    assert cmp.ok, {k: v for k, v in cmp.checks.items() if not v}


def test_ablation_signs():
    full, rows = run_ablations(ScenarioSpec(trials=60, seed=1), "mid", ("offloading", "state_transfer", "memory"))
    assert [r.component for r in rows] == ["offloading", "state_transfer", "memory"]
    assert all(r.ok for r in rows)
    json.dumps([r.record() for r in rows])  # records serialise
