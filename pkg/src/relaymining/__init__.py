"""Relay mining: verifiable multi-tenant rate limiting through probabilistic
relay commitment, sum-trie claims and EMA difficulty control."""

__version__ = "0.1.0"

from .primitives import Difficulty, KeyPair, Keyring, check_collision, digest, sign
from .smst import MembershipProof, Root, SumTrie, verify_proof
from .session import (
    Admission,
    ServicerState,
    SessionHeader,
    SessionParams,
    compute_budget,
    handle_relay,
    make_request,
    new_session,
)
from .claimproof import ClaimRegistry, build_reveal, derive_challenge
from .difficulty import DifficultyState
from .estimator import estimate_volume, run_bias_experiment
from .config import Config
from .tracesim import compute_metrics, load_trace, run_simulation, save_trace, synth_trace

__all__ = [
    "Admission",
    "ClaimRegistry",
    "Config",
    "Difficulty",
    "DifficultyState",
    "KeyPair",
    "Keyring",
    "MembershipProof",
    "Root",
    "ServicerState",
    "SessionHeader",
    "SessionParams",
    "SumTrie",
    "build_reveal",
    "check_collision",
    "compute_budget",
    "compute_metrics",
    "derive_challenge",
    "digest",
    "estimate_volume",
    "handle_relay",
    "load_trace",
    "make_request",
    "new_session",
    "run_bias_experiment",
    "run_simulation",
    "save_trace",
    "sign",
    "synth_trace",
    "verify_proof",
]
