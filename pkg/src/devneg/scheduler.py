"""Local vs cloud placement of agent tasks.

Each task is placed to minimise ``alpha*L + beta*E + gamma*C`` subject to a
hard privacy rule: tasks touching user-private data never leave the device,
and public tasks go to the cloud only if their declared exposure stays
within ``p_max`` bits. Ties stay local. Estimates adapt online with an
exponential moving average.

Units: latency in ms, energy in joules, cost in micro-currency, privacy in
bits of declared payload entropy.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, replace
from typing import Iterable, Literal, Mapping, Optional, Sequence

Location = Literal["local", "cloud"]
LOCAL: Location = "local"
CLOUD: Location = "cloud"
EMA_RATE = 0.2


class TaskKind(str, enum.Enum):
    PLAN_INFERENCE = "plan_inference"
    MARKET_LOOKUP = "market_lookup"
    PROOF_GEN = "proof_gen"
    SUMMARIZE = "summarize"
    CRITIC_EVAL = "critic_eval"


class PrivacyClass(str, enum.Enum):
    USER_PRIVATE = "user_private"
    PUBLIC = "public"


@dataclass(frozen=True)
class Estimate:
    local: float
    cloud: float

    def __getitem__(self, loc: str) -> float:
        if loc == LOCAL:
            return self.local
        if loc == CLOUD:
            return self.cloud
        raise KeyError(loc)

    def updated(self, loc: str, value: float) -> "Estimate":
        return replace(self, **{loc: value})


@dataclass(frozen=True)
class TaskProfile:
    task_id: str
    kind: TaskKind
    privacy_class: PrivacyClass
    est_latency: Estimate
    est_energy: Estimate
    est_cost: Estimate
    privacy_risk: Estimate

    def __post_init__(self) -> None:
        if self.privacy_risk.local != 0:
            raise ValueError("local execution exposes nothing; privacy_risk.local must be 0")
        for est in (self.est_latency, self.est_energy, self.est_cost, self.privacy_risk):
            if est.local < 0 or est.cloud < 0:
                raise ValueError("estimates must be non-negative")

    @property
    def is_private(self) -> bool:
        return self.privacy_class == PrivacyClass.USER_PRIVATE


@dataclass(frozen=True)
class SchedulerWeights:
    alpha: float = 1.0
    beta: float = 0.5
    gamma: float = 0.1
    p_max: float = 0.0

    def __post_init__(self) -> None:
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("weights must be non-negative")
        if max(self.alpha, self.beta, self.gamma) == 0:
            raise ValueError("at least one weight must be positive")


@dataclass(frozen=True)
class Placement:
    """A placement decision as seen by the leakage accountant.

    ``private_fields`` names each private value shipped with the task and its
    declared entropy in bits. The same field sent twice reveals nothing new,
    so the accountant counts each name once.
    """

    task_id: str
    kind: str
    location: Location
    private_fields: tuple[tuple[str, int], ...] = ()

    @property
    def private_bits(self) -> int:
        return sum(bits for _, bits in self.private_fields) if self.location == CLOUD else 0


def objective(t: TaskProfile, w: SchedulerWeights, loc: Location) -> float:
    return w.alpha * t.est_latency[loc] + w.beta * t.est_energy[loc] + w.gamma * t.est_cost[loc]


def cloud_allowed(t: TaskProfile, w: SchedulerWeights) -> bool:
    return not t.is_private and t.privacy_risk.cloud <= w.p_max


def place(t: TaskProfile, w: SchedulerWeights) -> Location:
    if cloud_allowed(t, w) and objective(t, w, CLOUD) < objective(t, w, LOCAL):
        return CLOUD
    return LOCAL


def place_batch(tasks: Sequence[TaskProfile], w: SchedulerWeights) -> dict[str, Location]:
    # the objective is additive over independent tasks, so per-task argmin is optimal
    return {t.task_id: place(t, w) for t in tasks}


def naive_place(t: TaskProfile, threshold_ms: float) -> Location:
    """Threshold offloading that ignores privacy class and the other objectives."""
    return CLOUD if t.est_latency.local > threshold_ms else LOCAL


def observe(
    t: TaskProfile, placement: Location, actual_latency: float, actual_energy: float, eta: float = EMA_RATE
) -> TaskProfile:
    if actual_latency < 0 or actual_energy < 0:
        raise ValueError("observed values must be non-negative")
    lat = (1 - eta) * t.est_latency[placement] + eta * actual_latency
    en = (1 - eta) * t.est_energy[placement] + eta * actual_energy
    return replace(
        t,
        est_latency=t.est_latency.updated(placement, lat),
        est_energy=t.est_energy.updated(placement, en),
    )


def to_placement(
    t: TaskProfile, loc: Location, fields: Optional[Sequence[tuple[str, int]]] = None
) -> Placement:
    """Placement record; without ``fields`` the task's declared risk is one field."""
    if fields is None:
        fields = [(t.task_id, int(t.privacy_risk.cloud))] if t.privacy_risk.cloud else []
    return Placement(t.task_id, t.kind.value, loc, tuple(fields))


class OffloadScheduler:
    """Holds adaptive per-kind task profiles. One writer, many readers."""

    def __init__(
        self,
        profiles: Iterable[TaskProfile],
        weights: Optional[SchedulerWeights] = None,
        *,
        policy: Literal["optimal", "naive", "local", "cloud"] = "optimal",
        naive_threshold_ms: float = 50.0,
        eta: float = EMA_RATE,
    ) -> None:
        self._profiles: dict[str, TaskProfile] = {p.task_id: p for p in profiles}
        self.weights = weights or SchedulerWeights()
        self.policy = policy
        self.naive_threshold_ms = naive_threshold_ms
        self.eta = eta
        self._lock = threading.Lock()

    @property
    def profiles(self) -> Mapping[str, TaskProfile]:
        return dict(self._profiles)

    def profile(self, task_id: str) -> TaskProfile:
        return self._profiles[task_id]

    def place(self, task_id: str) -> Location:
        t = self._profiles[task_id]
        if self.policy == "optimal":
            return place(t, self.weights)
        if self.policy == "naive":
            return naive_place(t, self.naive_threshold_ms)
        if self.policy == "local":
            return LOCAL
        return CLOUD

    def observe(self, task_id: str, placement: Location, actual_latency: float, actual_energy: float) -> TaskProfile:
        with self._lock:
            t = observe(self._profiles[task_id], placement, actual_latency, actual_energy, self.eta)
            self._profiles[task_id] = t
            return t
