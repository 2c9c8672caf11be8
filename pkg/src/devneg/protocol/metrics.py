"""Settlement, fairness and leakage accounting for finished sessions."""

from __future__ import annotations

from typing import Iterable, Sequence, Union

from ..scheduler import Placement
from .messages import MessageKind, NegotiationMessage

Number = Union[int, float]

# 64-bit p_min and p_max for each of the two parties
PRIVATE_BITS_PER_PARTY = 128
DEFAULT_ENTROPY_CAP = 2 * PRIVATE_BITS_PER_PARTY


class LeakageError(ValueError):
    pass


# bits revealed to an off-device observer by each message kind;
# ciphertexts, commitments and range proofs are hiding and count zero
MESSAGE_LEAKAGE_BITS: dict[MessageKind, int] = {
    MessageKind.ATTEST: 0,
    MessageKind.FEAS_COMMIT: 0,
    MessageKind.FEAS_BLIND: 0,
    MessageKind.FEAS_RESULT: 1,
    MessageKind.OFFER: 0,
    MessageKind.ACCEPT: 1,
    MessageKind.ABORT: 1,
}


def settle(offer_a: int, offer_b: int) -> int:
    """Floor of the mean of two converged offers, in integer minor units."""
    return (offer_a + offer_b) // 2


def converged(offer_a: int, offer_b: int, epsilon: Number) -> bool:
    return abs(offer_a - offer_b) < epsilon


def fairness_score(settle_price: Number, zopa_lo: Number, zopa_hi: Number) -> float:
    """Nash product of both sides' normalised surplus, scaled to 1 at the midpoint.

    Disagreement utilities are zero, so the score is
    ``4 * (hi - s) * (s - lo) / (hi - lo)^2``. A degenerate zone scores 1.
    """
    if zopa_lo > zopa_hi:
        raise ValueError("zopa_lo must not exceed zopa_hi")
    if zopa_lo == zopa_hi:
        return 1.0
    if not zopa_lo <= settle_price <= zopa_hi:
        raise ValueError("settle price outside the zone of agreement")
    width = zopa_hi - zopa_lo
    score = 4 * (zopa_hi - settle_price) * (settle_price - zopa_lo) / (width * width)
    return float(min(1.0, max(0.0, score)))


def classify(kind: object) -> int:
    try:
        return MESSAGE_LEAKAGE_BITS[MessageKind(kind)]
    except (KeyError, ValueError):
        raise LeakageError(f"message kind {kind!r} has no leakage classification") from None


def leakage_account(
    transcript: Sequence[NegotiationMessage],
    placements: Iterable[Placement] = (),
    *,
    decisions_visible: bool = True,
    entropy_cap: int = DEFAULT_ENTROPY_CAP,
) -> int:
    """Bits of private-constraint information exposed off-device.

    Decision messages (feasibility bit, accept, abort) count one bit each when
    an off-device observer can see them. Every private field shipped to a
    cloud placement counts its declared entropy. The total never exceeds the
    entropy of the secrets themselves.

    A repeated field name counts once (at its largest declared entropy).
    """
    bits = 0
    for msg in transcript:
        cost = classify(msg.kind)
        if decisions_visible:
            bits += cost
    exposed: dict[str, int] = {}
    for p in placements:
        if p.location == "cloud":
            for name, field_bits in p.private_fields:
                exposed[name] = max(exposed.get(name, 0), field_bits)
    return min(bits + sum(exposed.values()), entropy_cap)
