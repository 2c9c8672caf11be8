"""Simulation harness: scenarios, device tiers, baselines and ablations."""

from .config import (
    COMPONENTS,
    AblationConfig,
    Baseline,
    ConfigError,
    DeviceTier,
    RangeDist,
    RunConfig,
    ScenarioSpec,
    check_tier_order,
    load_calibration,
    load_config,
    parse_config,
)
from .runner import (
    AblationRow,
    Comparison,
    TrialReport,
    TrialResult,
    aggregate,
    compare_baselines,
    run_ablations,
    run_suite,
    run_trial,
)
from .scenarios import Scenario, generate_scenarios

__all__ = [
    "COMPONENTS",
    "AblationConfig",
    "AblationRow",
    "Baseline",
    "Comparison",
    "ConfigError",
    "DeviceTier",
    "RangeDist",
    "RunConfig",
    "Scenario",
    "ScenarioSpec",
    "TrialReport",
    "TrialResult",
    "aggregate",
    "check_tier_order",
    "compare_baselines",
    "generate_scenarios",
    "load_calibration",
    "load_config",
    "parse_config",
    "run_ablations",
    "run_suite",
    "run_trial",
]
