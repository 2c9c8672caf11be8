"""Counterparty model: scripted teacher, distilled student, and rollouts.

The teacher is a fixed softmax over a hand-written linear scoring table. A
one-hidden-layer student is trained on the teacher's soft targets with the
usual distillation objective::

    alpha * CE(y, softmax(z)) + (1 - alpha) * T^2 * KL(q_T || softmax(z / T))

where ``q_T`` is the teacher distribution tempered at ``T`` (its
probabilities raised to ``1/T`` and renormalised). The ``T^2`` factor keeps
the soft-target gradient on the same scale as the hard-label one.
"""

from __future__ import annotations

import enum
import random
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from ._rng import derive_seed

N_ACTIONS = 5
N_FEATURES = 8
DOMAINS = ("insurance", "b2b")
COMPLEXITIES = ("S", "M", "C")
WEIGHTS_MAGIC = b"DNWM"
WEIGHTS_VERSION = 1


class Move(enum.IntEnum):
    ACCEPT = 0
    COUNTER_SMALL = 1
    COUNTER_MEDIUM = 2
    COUNTER_LARGE = 3
    REJECT = 4


# fraction of the remaining gap the counterparty gives up on each counter
COUNTER_SIZE = {Move.COUNTER_SMALL: 0.05, Move.COUNTER_MEDIUM: 0.15, Move.COUNTER_LARGE: 0.30}


class DistillationError(RuntimeError):
    pass


@dataclass(frozen=True)
class NegotiationFeature:
    round_frac: float
    last_offer_gap: float
    concession_rate: float
    domain: str = "insurance"
    complexity: str = "M"

    def __post_init__(self) -> None:
        for name in ("round_frac", "last_offer_gap", "concession_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.domain not in DOMAINS or self.complexity not in COMPLEXITIES:
            raise ValueError("unknown domain or complexity")

    def vector(self) -> np.ndarray:
        x = np.zeros(N_FEATURES)
        x[0], x[1], x[2] = self.round_frac, self.last_offer_gap, self.concession_rate
        x[3 + DOMAINS.index(self.domain)] = 1.0
        x[5 + COMPLEXITIES.index(self.complexity)] = 1.0
        return x


@dataclass(frozen=True)
class KDParams:
    alpha: float = 0.5
    kd_temperature: float = 2.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if not self.kd_temperature > 0:
            raise ValueError("kd_temperature must be positive")


def softmax(z: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def temper(p: np.ndarray, temperature: float) -> np.ndarray:
    """Distribution with logits ``log p / T``; zero-probability entries stay zero."""
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logp = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), -np.inf)
    return softmax(logp, temperature)


# scripted teacher --------------------------------------------------------------

# rows: accept, small, medium, large, reject
# cols: bias, round_frac, gap, concession, insurance, b2b, S, M, C
_TABLE = np.array(
    [
        [5.0, 1.0, -12.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.5, -1.0, 1.0, 0.0, 0.2, 0.0, 0.0, 0.0, 0.5],
        [0.5, -1.5, 2.0, 0.0, 0.0, 0.3, 0.0, 0.3, 0.0],
        [0.0, -2.0, 2.5, 1.0, 0.0, 0.0, 0.5, 0.0, 0.0],
        [-2.0, 3.0, 2.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    ]
)


class ScriptedTeacher:
    """Deterministic stand-in for a large counterparty model."""

    def scores(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return _TABLE[:, 0] + X @ _TABLE[:, 1:].T

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return softmax(self.scores(X))


def teacher_predict(f: NegotiationFeature, seed: Optional[int] = None) -> np.ndarray:
    """Teacher distribution for one feature vector. ``seed`` has no effect."""
    return ScriptedTeacher().predict_proba(f.vector())[0]


def sample_features(n: int, rng: np.random.Generator) -> np.ndarray:
    X = np.zeros((n, N_FEATURES))
    X[:, 0] = rng.random(n)
    # bias toward small gaps, where most of the decision structure lives
    X[:, 1] = rng.random(n) ** 2
    X[:, 2] = rng.random(n) * 0.5
    X[np.arange(n), 3 + rng.integers(0, 2, n)] = 1.0
    X[np.arange(n), 5 + rng.integers(0, 3, n)] = 1.0
    return X


# distillation loss ---------------------------------------------------------------


def _check_probs(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != N_ACTIONS:
        raise ValueError("expected a 5-way distribution")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-9):
        raise ValueError("teacher_probs must be a probability distribution")
    return p


def kd_loss_and_grad(
    logits: np.ndarray, teacher_probs: np.ndarray, hard_label, p: KDParams
) -> tuple[float, np.ndarray]:
    """Mean loss over a batch and its gradient w.r.t. the logits.

    Accepts a single example (1-D arrays, int label) or a batch.
    """
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    q = np.atleast_2d(_check_probs(teacher_probs))
    y = np.atleast_1d(np.asarray(hard_label, dtype=np.int64))
    n = z.shape[0]
    T, a = p.kd_temperature, p.alpha
    s = softmax(z)
    s_t = softmax(z, T)
    q_t = temper(q, T)
    idx = np.arange(n)
    ce = -np.log(np.maximum(s[idx, y], 1e-300))
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(q_t > 0, q_t * (np.log(np.where(q_t > 0, q_t, 1.0)) - np.log(np.maximum(s_t, 1e-300))), 0.0)
    kl = terms.sum(axis=1)
    loss = a * ce + (1 - a) * T * T * kl
    onehot = np.zeros_like(s)
    onehot[idx, y] = 1.0
    grad = (a * (s - onehot) + (1 - a) * T * (s_t - q_t)) / n
    return float(loss.mean()), grad


def kd_loss(logits, teacher_probs, hard_label, p: KDParams) -> float:
    return kd_loss_and_grad(logits, teacher_probs, hard_label, p)[0]


def kd_grad(logits, teacher_probs, hard_label, p: KDParams) -> np.ndarray:
    """Gradient of the (single-example) loss w.r.t. the logits."""
    g = kd_loss_and_grad(logits, teacher_probs, hard_label, p)[1]
    return g[0] if np.ndim(logits) == 1 else g * np.atleast_2d(logits).shape[0]


# student ---------------------------------------------------------------------------


class DistilledStudent(BaseEstimator, ClassifierMixin):
    """Single tanh hidden layer trained by plain mini-batch gradient descent."""

    def __init__(
        self,
        hidden: int = 32,
        alpha: float = 0.5,
        kd_temperature: float = 2.0,
        learning_rate: float = 0.05,
        epochs: int = 50,
        batch_size: int = 32,
        random_state: int = 0,
    ):
        self.hidden = hidden
        self.alpha = alpha
        self.kd_temperature = kd_temperature
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def _init(self, rng: np.random.Generator) -> None:
        h = self.hidden
        self.W1_ = rng.standard_normal((N_FEATURES, h)) / np.sqrt(N_FEATURES)
        self.b1_ = np.zeros(h)
        self.W2_ = rng.standard_normal((h, N_ACTIONS)) / np.sqrt(h)
        self.b2_ = np.zeros(N_ACTIONS)
        self.classes_ = np.arange(N_ACTIONS)

    def fit(self, X, y, teacher_probs=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if teacher_probs is None:
            teacher_probs = np.eye(N_ACTIONS)[y]
        Q = _check_probs(teacher_probs)
        params = KDParams(self.alpha, self.kd_temperature)
        rng = np.random.default_rng(self.random_state)
        self._init(rng)
        self.loss_curve_: list[float] = []
        n = len(X)
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, self.batch_size):
                idx = order[start : start + self.batch_size]
                hact = np.tanh(X[idx] @ self.W1_ + self.b1_)
                z = hact @ self.W2_ + self.b2_
                loss, gz = kd_loss_and_grad(z, Q[idx], y[idx], params)
                if not np.isfinite(loss):
                    raise DistillationError(
                        f"loss diverged at epoch {epoch}, batch {start // self.batch_size}: "
                        f"loss={loss}, max|logit|={np.nanmax(np.abs(z)):.3g}, lr={self.learning_rate}"
                    )
                total += loss * len(idx)
                gW2 = hact.T @ gz
                gh = (gz @ self.W2_.T) * (1 - hact * hact)
                self.W1_ -= self.learning_rate * (X[idx].T @ gh)
                self.b1_ -= self.learning_rate * gh.sum(axis=0)
                self.W2_ -= self.learning_rate * gW2
                self.b2_ -= self.learning_rate * gz.sum(axis=0)
            self.loss_curve_.append(total / n)
        return self

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.tanh(X @ self.W1_ + self.b1_) @ self.W2_ + self.b2_

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return self.decision_function(X).argmax(axis=1)

    # weights: magic | version u8 | count u8 | per array: ndim u8, dims u32..., float64 BE
    def to_bytes(self) -> bytes:
        arrays = (self.W1_, self.b1_, self.W2_, self.b2_)
        out = [WEIGHTS_MAGIC, bytes([WEIGHTS_VERSION, len(arrays)])]
        for a in arrays:
            out.append(bytes([a.ndim]) + b"".join(struct.pack(">I", d) for d in a.shape))
            out.append(np.ascontiguousarray(a, dtype=">f8").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes, **params) -> "DistilledStudent":
        if data[:4] != WEIGHTS_MAGIC or data[4] != WEIGHTS_VERSION:
            raise ValueError("not a student weight file")
        count, pos = data[5], 6
        arrays = []
        for _ in range(count):
            ndim = data[pos]
            pos += 1
            shape = struct.unpack(f">{ndim}I", data[pos : pos + 4 * ndim])
            pos += 4 * ndim
            size = int(np.prod(shape)) * 8
            arrays.append(np.frombuffer(data[pos : pos + size], dtype=">f8").astype(np.float64).reshape(shape))
            pos += size
        if pos != len(data) or count != 4:
            raise ValueError("malformed student weight file")
        model = cls(hidden=arrays[0].shape[1], **params)
        model.W1_, model.b1_, model.W2_, model.b2_ = arrays
        model.classes_ = np.arange(N_ACTIONS)
        return model


def make_dataset(teacher: ScriptedTeacher, n: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Features, teacher distributions and hard labels sampled from them."""
    rng = np.random.default_rng(derive_seed(seed, "kd-data"))
    X = sample_features(n, rng)
    Q = teacher.predict_proba(X)
    u = rng.random(n)[:, None]
    y = np.minimum((u > np.cumsum(Q, axis=1)).sum(axis=1), N_ACTIONS - 1)
    return X, Q, y


def distill(
    teacher: Optional[ScriptedTeacher] = None,
    dataset_size: int = 5000,
    p: KDParams = KDParams(),
    epochs: int = 50,
    seed: int = 0,
    **student_params,
) -> DistilledStudent:
    if dataset_size < 1000:
        raise ValueError("dataset_size must be at least 1000")
    teacher = teacher or ScriptedTeacher()
    X, Q, y = make_dataset(teacher, dataset_size, seed)
    student = DistilledStudent(
        alpha=p.alpha,
        kd_temperature=p.kd_temperature,
        epochs=epochs,
        random_state=derive_seed(seed, "kd-init"),
        **student_params,
    )
    return student.fit(X, y, teacher_probs=Q)


def agreement(student: DistilledStudent, teacher: Optional[ScriptedTeacher] = None, n: int = 2000, seed: int = 1) -> float:
    """Top-1 agreement on fresh features (held out from any training seed's data)."""
    teacher = teacher or ScriptedTeacher()
    X = sample_features(n, np.random.default_rng(derive_seed(seed, "kd-holdout")))
    return float(np.mean(student.predict(X) == teacher.predict_proba(X).argmax(axis=1)))


# rollouts -------------------------------------------------------------------------


@dataclass(frozen=True)
class NegotiationState:
    """What one party knows mid-session, from its own point of view."""

    round: int
    own_offer: int
    their_offer: int
    own_limit: int  # reservation price: p_max for a buyer, p_min for a seller
    is_buyer: bool
    scale: float  # normaliser for gaps, e.g. the opening gap
    max_rounds: int = 10
    concession_rate: float = 0.0
    domain: str = "insurance"
    complexity: str = "M"
    feasible: bool = True
    own_step: float = 0.15  # fraction of the gap the principal concedes per round


@dataclass(frozen=True)
class RolloutOutcome:
    status: str  # "agreed" | "timeout" | "rejected"
    settle_price: Optional[int]
    rounds: int
    weight: float


class Predictor:
    """Anything with ``predict_proba`` over the five moves."""

    def predict_proba(self, X) -> np.ndarray: ...


def state_features(st: NegotiationState, rnd: int, own: int, their: int, rate: float) -> np.ndarray:
    gap = min(1.0, abs(their - own) / st.scale) if st.scale > 0 else 0.0
    f = NegotiationFeature(min(1.0, rnd / st.max_rounds), gap, min(1.0, max(0.0, rate)), st.domain, st.complexity)
    return f.vector()


def _one(st: NegotiationState, model: Predictor, rng: random.Random) -> RolloutOutcome:
    own, their, rate = st.own_offer, st.their_offer, st.concession_rate
    weight = 1.0
    sign = 1 if st.is_buyer else -1

    def split(a: int, b: int) -> int:
        # settle at the midpoint, but never past the principal's reservation
        mid = (a + b) // 2
        return min(mid, st.own_limit) if sign > 0 else max(mid, st.own_limit)

    for rnd in range(st.round + 1, st.max_rounds + 1):
        probs = np.asarray(model.predict_proba(state_features(st, rnd, own, their, rate)), dtype=np.float64)
        if probs.shape != (1, N_ACTIONS) or not np.all(np.isfinite(probs)):
            raise ValueError(f"model returned a malformed distribution of shape {probs.shape}")
        probs = _check_probs(probs[0])
        u = rng.random()
        move = Move(min(int(np.searchsorted(np.cumsum(probs), u, side="right")), N_ACTIONS - 1))
        weight *= float(probs[move])
        if move == Move.ACCEPT:
            return RolloutOutcome("agreed", split(own, their), rnd, weight)
        if move == Move.REJECT:
            return RolloutOutcome("rejected", None, rnd, weight)
        gap = their - own
        step = round(COUNTER_SIZE[move] * gap)
        their -= step
        rate = abs(step) / abs(gap) if gap else 0.0
        mine = own + round(st.own_step * (their - own))
        own = min(mine, st.own_limit) if sign > 0 else max(mine, st.own_limit)
        if abs(their - own) <= 1:
            return RolloutOutcome("agreed", split(own, their), rnd, weight)
    return RolloutOutcome("timeout", None, st.max_rounds, weight)


def rollout(state: NegotiationState, student: Predictor, n: int = 10, seed: int = 0) -> list[RolloutOutcome]:
    """``n`` sampled continuations, drawn sequentially from one seeded stream."""
    if not 5 <= n <= 10:
        raise ValueError("rollout count must be in [5, 10]")
    if not state.feasible:
        return [RolloutOutcome("timeout", None, state.max_rounds, 1.0) for _ in range(n)]
    rng = random.Random(derive_seed(seed, "rollout"))
    return [_one(state, student, rng) for _ in range(n)]
