"""Synthetic negotiation instances.

Each trial draws a reference price log-uniformly inside the domain band,
then builds the two private ranges around it. With the calibrated overlap
probability the ranges share a zone of agreement; otherwise they are
separated by a small gap. Strategies, a bluffing party, a planted harmful
move and a mid-session device migration are drawn from the same per-trial
stream, so a scenario is fully fixed by ``(spec, index)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Optional

from .._rng import derive_seed, py_random
from .config import ConfigError, RangeDist, ScenarioSpec, load_calibration


@dataclass(frozen=True)
class Scenario:
    index: int
    seed: int
    domain: str
    complexity: str
    terms: int
    buyer: tuple[int, int]
    seller: tuple[int, int]
    buyer_strategy: tuple[str, tuple[tuple[str, Any], ...]]
    seller_strategy: tuple[str, tuple[tuple[str, Any], ...]]
    bluffer: Optional[str] = None  # "buyer" | "seller"
    harmful: Optional[tuple[str, int]] = None  # (side, round)
    migration: bool = False
    market: tuple[int, int] = (0, 0)  # a noisy market price band, what the lookup tool returns

    @property
    def feasible(self) -> bool:
        return self.buyer[1] >= self.seller[0]

    @property
    def zopa(self) -> Optional[tuple[int, int]]:
        return (self.seller[0], self.buyer[1]) if self.feasible else None


def _band(spec: ScenarioSpec, cal: dict) -> tuple[RangeDist, RangeDist]:
    dom = cal["domains"][spec.domain]
    lo_w, hi_w = cal["range_width"]
    default = RangeDist(int(dom["lo"]), int(dom["hi"]), lo_w, hi_w)
    b = spec.buyer_range_dist or spec.seller_range_dist or default
    s = spec.seller_range_dist or spec.buyer_range_dist or default
    for d in (b, s):
        d.validate()
    return b, s


def _strategy(name: str, params: dict, width: int) -> tuple[str, tuple[tuple[str, Any], ...]]:
    params = dict(params)
    if "step_frac" in params:
        params["step"] = max(1, round(params.pop("step_frac") * width))
    return name, tuple(sorted(params.items()))


def _pick_strategy(rng, spec: ScenarioSpec, cal: dict, slot: int, width: int):
    mix = cal["strategies"][spec.complexity]
    if spec.strategy_pair is None:
        name, params = mix[rng.randrange(len(mix))]
    else:
        name = spec.strategy_pair[slot]
        params = next((p for n, p in mix if n == name), {})
    return _strategy(name, params, width)


def generate_scenarios(spec: ScenarioSpec, seed: Optional[int] = None) -> list[Scenario]:
    """``spec.trials`` instances; ``seed`` overrides ``spec.seed``."""
    cal = load_calibration()
    root = spec.seed if seed is None else seed
    bdist, sdist = _band(spec, cal)
    lo = max(bdist.lo, sdist.lo)
    hi = min(bdist.hi, sdist.hi)
    if lo >= hi:
        raise ConfigError("buyer and seller price bands do not intersect")
    overlap = cal["overlap_probability"] if spec.overlap_probability is None else spec.overlap_probability
    terms = cal["terms"][spec.complexity]
    out = []
    for i in range(spec.trials):
        trial_seed = derive_seed(root, "trial", i)
        rng = py_random(trial_seed, "scenario")
        price = math.exp(rng.uniform(math.log(lo), math.log(hi)))
        wb = rng.uniform(bdist.width_lo, bdist.width_hi) * price
        ws = rng.uniform(sdist.width_lo, sdist.width_hi) * price
        z = min(rng.uniform(*cal["zopa_width"]) * price, 0.9 * min(wb, ws))
        if rng.random() < overlap:
            b_max, s_min = price + z / 2, price - z / 2
        else:
            g = rng.uniform(*cal["disjoint_gap"]) * price
            b_max, s_min = price - g / 2, price + g / 2
        jitter = cal["market_noise"]
        centre = price + rng.uniform(-jitter, jitter) * z
        half = z / 2 * rng.uniform(1 - jitter, 1 + jitter)
        market = _clip(centre - half, centre + half, lo, hi)
        buyer = _clip(b_max - wb, b_max, lo, hi)
        seller = _clip(s_min, s_min + ws, lo, hi)
        bs = _pick_strategy(rng, spec, cal, 0, buyer[1] - buyer[0])
        ss = _pick_strategy(rng, spec, cal, 1, seller[1] - seller[0])
        side = lambda: "buyer" if rng.random() < 0.5 else "seller"  # noqa: E731
        bluffer = side() if rng.random() < cal["bluff_probability"] else None
        harmful = (side(), rng.randrange(2, 7)) if rng.random() < cal["harm_probability"] else None
        migration = rng.random() < cal["migration_probability"]
        out.append(
            Scenario(
                i, trial_seed, spec.domain, spec.complexity, terms, buyer, seller, bs, ss, bluffer, harmful, migration, market
            )
        )
    return out


def _clip(a: float, b: float, lo: int, hi: int) -> tuple[int, int]:
    a_i = min(max(int(round(a)), lo), hi)
    b_i = min(max(int(round(b)), lo), hi)
    if a_i == b_i:
        # a fully clipped range still needs some width
        a_i, b_i = (a_i - 1, a_i) if a_i > lo else (a_i, a_i + 1)
    return a_i, b_i
