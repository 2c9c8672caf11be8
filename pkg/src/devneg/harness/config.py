"""Scenario, tier and ablation configuration.

Scenario files are INI. Every section except ``[scenario]`` is optional::

    [scenario]
    domain = insurance        ; insurance | b2b
    complexity = M            ; S | M | C
    trials = 150
    seed = 7
    tier = mid                ; high | mid | low
    strategy_pair = linear, boulware   ; omit for the calibrated mix
    overlap_probability = 0.9          ; omit for the calibrated value

    [buyer_range]             ; and [seller_range]
    lo = 112100               ; price band, minor units
    hi = 6377000
    width_lo = 0.15           ; range width as a fraction of the reference price
    width_hi = 0.4

    [ablation]
    disable = memory, feasibility

    [baseline]
    policy = proposed         ; proposed | cloud_only | device_only | naive_edge

    [guardrails]
    banned_terms = exclusivity, auto-renew
"""

from __future__ import annotations

import configparser
import enum
import hashlib
import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Union

DOMAINS = ("insurance", "b2b")
COMPLEXITIES = ("S", "M", "C")
TIERS = ("high", "mid", "low")
COMPONENTS = (
    "state_transfer",
    "world_model",
    "negotiation_proofs",
    "feasibility",
    "memory",
    "offloading",
    "safety_critic",
)


class ConfigError(ValueError):
    pass


class Baseline(str, enum.Enum):
    PROPOSED = "proposed"
    CLOUD_ONLY = "cloud_only"
    DEVICE_ONLY = "device_only"
    NAIVE_EDGE = "naive_edge"


@lru_cache(maxsize=1)
def _calibration_text() -> str:
    return resources.files("devneg.harness").joinpath("calibration.json").read_text()


def load_calibration() -> dict[str, Any]:
    return json.loads(_calibration_text())


def calibration_fingerprint() -> str:
    return hashlib.sha256(_calibration_text().encode()).hexdigest()[:16]


@dataclass(frozen=True)
class RangeDist:
    lo: int
    hi: int
    width_lo: float
    width_hi: float

    def validate(self) -> None:
        if not 0 < self.lo < self.hi:
            raise ConfigError(f"degenerate price band [{self.lo}, {self.hi}]")
        if not 0 < self.width_lo <= self.width_hi < 1:
            raise ConfigError("range widths must satisfy 0 < width_lo <= width_hi < 1")


@dataclass(frozen=True)
class ScenarioSpec:
    domain: str = "insurance"
    complexity: str = "M"
    trials: int = 150
    seed: int = 0
    buyer_range_dist: Optional[RangeDist] = None
    seller_range_dist: Optional[RangeDist] = None
    strategy_pair: Optional[tuple[str, str]] = None
    overlap_probability: Optional[float] = None
    banned_terms: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.domain not in DOMAINS:
            raise ConfigError(f"domain must be one of {DOMAINS}")
        if self.complexity not in COMPLEXITIES:
            raise ConfigError(f"complexity must be one of {COMPLEXITIES}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.overlap_probability is not None and not 0 <= self.overlap_probability <= 1:
            raise ConfigError("overlap_probability must be in [0, 1]")

    def with_(self, **changes) -> "ScenarioSpec":
        d = asdict(self)
        d.update(changes)
        for key in ("buyer_range_dist", "seller_range_dist"):
            if isinstance(d[key], dict):
                d[key] = RangeDist(**d[key])
        return ScenarioSpec(**d)


@dataclass(frozen=True)
class DeviceTier:
    tier: str
    op_cost_table: dict[str, tuple[float, float]]
    tau_importance: float
    codec_ms_per_mb: float

    @classmethod
    def named(cls, tier: str) -> "DeviceTier":
        from ..state_codec import TIER_TAU

        if tier not in TIERS:
            raise ConfigError(f"tier must be one of {TIERS}")
        cal = load_calibration()
        table = {k: (float(v[0]), float(v[1])) for k, v in cal["tiers"][tier].items()}
        return cls(tier, table, TIER_TAU[tier], float(cal["codec_ms_per_mb"][tier]))


def check_tier_order(tiers: Optional[list[DeviceTier]] = None) -> bool:
    """high <= mid <= low for every per-op latency."""
    tiers = tiers or [DeviceTier.named(t) for t in TIERS]
    for a, b in zip(tiers, tiers[1:]):
        for op, (ms, _) in a.op_cost_table.items():
            if ms > b.op_cost_table[op][0]:
                return False
    return True


@dataclass(frozen=True)
class AblationConfig:
    disable: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        unknown = set(self.disable) - set(COMPONENTS)
        if unknown:
            raise ConfigError(f"unknown components {sorted(unknown)}; choose from {COMPONENTS}")
        object.__setattr__(self, "disable", frozenset(self.disable))

    def on(self, component: str) -> bool:
        return component not in self.disable

    @property
    def label(self) -> str:
        return "full" if not self.disable else "-" + ",-".join(sorted(self.disable))


@dataclass(frozen=True)
class RunConfig:
    spec: ScenarioSpec = field(default_factory=ScenarioSpec)
    tier: str = "mid"
    ablation: AblationConfig = field(default_factory=AblationConfig)
    baseline: Baseline = Baseline.PROPOSED

    def fingerprint(self) -> str:
        blob = json.dumps(
            {
                "spec": asdict(self.spec),
                "tier": self.tier,
                "disable": sorted(self.ablation.disable),
                "baseline": self.baseline.value,
                "calibration": calibration_fingerprint(),
            },
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _split(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _range(cp: configparser.ConfigParser, section: str) -> Optional[RangeDist]:
    if not cp.has_section(section):
        return None
    s = cp[section]
    try:
        d = RangeDist(int(s["lo"]), int(s["hi"]), float(s.get("width_lo", 0.15)), float(s.get("width_hi", 0.4)))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None
    d.validate()
    return d


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    if not cp.has_section("scenario"):
        raise ConfigError("missing [scenario] section")
    s = cp["scenario"]
    try:
        pair = tuple(_split(s["strategy_pair"])) if "strategy_pair" in s else None
        if pair is not None and len(pair) != 2:
            raise ConfigError("strategy_pair needs two names")
        spec = ScenarioSpec(
            domain=s.get("domain", "insurance"),
            complexity=s.get("complexity", "M"),
            trials=s.getint("trials", 150),
            seed=s.getint("seed", 0),
            buyer_range_dist=_range(cp, "buyer_range"),
            seller_range_dist=_range(cp, "seller_range"),
            strategy_pair=pair,
            overlap_probability=s.getfloat("overlap_probability") if "overlap_probability" in s else None,
            banned_terms=tuple(_split(cp.get("guardrails", "banned_terms", fallback=""))),
        )
        tier = s.get("tier", "mid")
        if tier not in TIERS:
            raise ConfigError(f"tier must be one of {TIERS}")
        ablation = AblationConfig(frozenset(_split(cp.get("ablation", "disable", fallback=""))))
        baseline = Baseline(cp.get("baseline", "policy", fallback="proposed"))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    return RunConfig(spec, tier, ablation, baseline)


def load_config(path: Union[str, Path]) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text)
