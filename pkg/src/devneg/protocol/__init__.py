"""Negotiation protocol: messages, attestation, strategies and the session engine."""

from .attestation import (
    DEFAULT_CODE_HASH,
    DEFAULT_REGISTRY,
    AttestationRecord,
    AttestStatus,
    ProtocolError,
    attest_session,
    code_hash_of,
)
from .messages import AbortReason, MessageKind, NegotiationMessage
from .metrics import LeakageError, converged, fairness_score, leakage_account, settle
from .session import (
    Action,
    Behavior,
    ModeledProofs,
    NegotiationAgent,
    SessionConfig,
    SessionOutcome,
    SigmaProofs,
    SimulatedTransport,
    Status,
    run_session,
    transcript_root,
)
from .strategies import Boulware, FractionOfGap, LinearConcession, StrategyContext, make_strategy

__all__ = [
    "AbortReason",
    "Action",
    "AttestStatus",
    "AttestationRecord",
    "Behavior",
    "Boulware",
    "DEFAULT_CODE_HASH",
    "DEFAULT_REGISTRY",
    "FractionOfGap",
    "LeakageError",
    "LinearConcession",
    "MessageKind",
    "ModeledProofs",
    "NegotiationAgent",
    "NegotiationMessage",
    "ProtocolError",
    "SessionConfig",
    "SessionOutcome",
    "SigmaProofs",
    "SimulatedTransport",
    "Status",
    "StrategyContext",
    "attest_session",
    "code_hash_of",
    "converged",
    "fairness_score",
    "leakage_account",
    "make_strategy",
    "run_session",
    "settle",
    "transcript_root",
]
