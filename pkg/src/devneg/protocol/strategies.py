"""Scripted concession strategies.

A strategy maps the agent's view of the bargaining state to its next
scheduled price. The engine then applies the no-crossing rule, so a
strategy never has to know the counterparty's last offer unless it wants to.
All prices are clamped into the agent's own range.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol


@dataclass(frozen=True)
class StrategyContext:
    round: int  # 1-based
    is_buyer: bool
    p_min: int
    p_max: int
    own_last: Optional[int]
    their_last: Optional[int]
    max_rounds: int = 10

    @property
    def opening(self) -> int:
        return self.p_min if self.is_buyer else self.p_max

    @property
    def reservation(self) -> int:
        return self.p_max if self.is_buyer else self.p_min

    def clamp(self, price: float) -> int:
        return int(min(self.p_max, max(self.p_min, round(price))))


class Strategy(Protocol):
    name: str

    def propose(self, ctx: StrategyContext) -> int: ...


def _toward(ctx: StrategyContext, opening: Optional[int], amount: float) -> int:
    start = ctx.opening if opening is None else ctx.clamp(opening)
    sign = 1 if ctx.is_buyer else -1
    return ctx.clamp(start + sign * amount)


@dataclass(frozen=True)
class LinearConcession:
    """Fixed step per round from the opening price toward the reservation."""

    step: int = 1000
    opening: Optional[int] = None
    name: str = "linear"

    def propose(self, ctx: StrategyContext) -> int:
        return _toward(ctx, self.opening, self.step * (ctx.round - 1))


@dataclass(frozen=True)
class FractionOfGap:
    """Closes a fixed fraction of the distance to the counterparty's last offer."""

    fraction: float = 0.25
    opening: Optional[int] = None
    name: str = "fraction"

    def propose(self, ctx: StrategyContext) -> int:
        if ctx.own_last is None:
            return _toward(ctx, self.opening, 0)
        target = ctx.their_last if ctx.their_last is not None else ctx.reservation
        return ctx.clamp(ctx.own_last + self.fraction * (target - ctx.own_last))


@dataclass(frozen=True)
class Boulware:
    """Time-dependent tactic that holds firm early and concedes late.

    Concession after round ``r`` is ``((r-1)/(max_rounds-1)) ** (1/exponent)``
    of the full range; exponents below 1 are boulware, above 1 conceder.
    """

    exponent: float = 0.5
    opening: Optional[int] = None
    name: str = "boulware"

    def propose(self, ctx: StrategyContext) -> int:
        span = max(1, ctx.max_rounds - 1)
        t = min(1.0, (ctx.round - 1) / span)
        start = ctx.opening if self.opening is None else ctx.clamp(self.opening)
        return ctx.clamp(start + (t ** (1.0 / self.exponent)) * (ctx.reservation - start))


STRATEGIES = {"linear": LinearConcession, "fraction": FractionOfGap, "boulware": Boulware}


def make_strategy(name: str, **params) -> Strategy:
    try:
        cls = STRATEGIES[name]
    except KeyError:
        raise ValueError(f"unknown strategy {name!r}; choose from {sorted(STRATEGIES)}") from None
    return cls(**params)
