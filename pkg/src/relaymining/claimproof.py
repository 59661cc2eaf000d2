"""Commit-and-reveal settlement for one (servicer, session).

Lifecycle of a claim::

    claimed -> challenged -> settled | expired-unproven | invalid-proof

A servicer commits to its trie root after the session ends. A block hash
produced after the claim picks a target path; the servicer must then
reveal the closest-leaf proof for that path within the proof window.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

from .primitives import Difficulty, Keyring, check_collision, sha256
from .session import Relay, ServicerState
from .smst import MembershipProof, Root, follows_closest_rule, key_bytes, verify_proof


class ClaimError(Exception):
    pass


class WindowViolationError(ClaimError):
    pass


class DuplicateClaimError(ClaimError):
    pass


class OrderingViolationError(ClaimError):
    pass


class ClaimStateError(ClaimError):
    pass


class ClaimStatus(str, Enum):
    CLAIMED = "claimed"
    CHALLENGED = "challenged"
    SETTLED = "settled"
    EXPIRED = "expired-unproven"
    INVALID = "invalid-proof"


TERMINAL = (ClaimStatus.SETTLED, ClaimStatus.EXPIRED, ClaimStatus.INVALID)


@dataclass(frozen=True)
class Claim:
    servicer_id: str
    session_id: str
    app_id: str
    service_id: str
    session_end: int
    root: Root
    claim_height: int
    key_width: int
    probability: float

    @property
    def ref(self) -> bytes:
        body = json.dumps(
            [
                self.servicer_id,
                self.session_id,
                self.root.hash.hex(),
                self.root.sum,
                self.claim_height,
                self.key_width,
                repr(self.probability),
            ],
            separators=(",", ":"),
        )
        return sha256(b"claim", body.encode())


def derive_challenge(claim: Claim, block_hash: bytes, challenge_height: int) -> int:
    """Target path: leading ``key_width`` bits of ``H(block_hash || claim.ref)``."""
    if challenge_height <= claim.claim_height:
        raise OrderingViolationError(
            f"challenge block {challenge_height} is not after claim height {claim.claim_height}"
        )
    h = sha256(b"challenge", block_hash, claim.ref)
    return int.from_bytes(h, "big") >> (256 - claim.key_width)


@dataclass(frozen=True)
class ProofReveal:
    claim_ref: bytes
    target: int
    proof: MembershipProof
    value: bytes


def build_reveal(state: ServicerState, claim: Claim, target: int) -> ProofReveal:
    """Servicer side: pick the closest leaf to ``target`` and reveal it."""
    proof = state.trie.closest_proof(target)
    value = state.trie.get(proof.key)
    return ProofReveal(claim.ref, target, proof, value if value is not None else b"")


@dataclass(frozen=True)
class Verification:
    accepted: bool
    status: ClaimStatus
    reason: str | None = None


@dataclass(frozen=True)
class Settlement:
    claim_ref: bytes
    outcome: ClaimStatus
    minted: float
    burned: float


def check_reveal(claim: Claim, reveal: ProofReveal, keyring: Keyring, target: int) -> str | None:
    """Return the name of the first failing check, or ``None`` if all pass."""
    proof = reveal.proof
    if reveal.claim_ref != claim.ref or reveal.target != target:
        return "wrong-challenge"
    if proof.key_width != claim.key_width or not verify_proof(claim.root, proof):
        return "root-mismatch"
    if proof.weight != 1:
        return "bad-weight"
    if not follows_closest_rule(proof, target):
        return "wrong-leaf"
    if sha256(reveal.value) != proof.value_hash:
        return "value-mismatch"
    try:
        relay = Relay.deserialize(reveal.value)
    except (ValueError, KeyError, UnicodeDecodeError):
        return "value-malformed"
    d = relay.digest
    if int.from_bytes(d, "big") >> (256 - claim.key_width) != proof.key:
        return "key-mismatch"
    if not relay.signatures_valid(keyring):
        return "bad-signature"
    req = relay.request
    if (
        req.session_id != claim.session_id
        or req.app_id != claim.app_id
        or req.service_id != claim.service_id
        or relay.servicer_id != claim.servicer_id
        or req.servicer_id != claim.servicer_id
    ):
        return "wrong-session"
    if not check_collision(d, Difficulty(claim.probability)):
        return "no-collision"
    return None


class EventLog:
    """Append-only list of events, written as newline-delimited JSON."""

    def __init__(self):
        self.events: list[dict] = []

    def append(self, kind: str, **fields) -> dict:
        ev = {"event": kind, **fields}
        self.events.append(ev)
        return ev

    def lines(self) -> list[str]:
        return [json.dumps(ev, separators=(",", ":")) for ev in self.events]

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line + "\n")


@dataclass
class Ledger:
    balances: dict[str, float] = field(default_factory=dict)
    minted: float = 0.0
    burned: float = 0.0

    def credit(self, account: str, amount: float) -> None:
        self.balances[account] = self.balances.get(account, 0.0) + amount


@dataclass
class _Record:
    claim: Claim
    status: ClaimStatus
    target: int | None = None
    challenge_height: int | None = None
    verification: Verification | None = None


class ClaimRegistry:
    """On-chain side of settlement: claim book, challenges, proofs, ledger.

    Calls are expected in block order, as a single serialized stream.
    """

    def __init__(
        self,
        keyring: Keyring,
        *,
        claim_window: int = 4,
        proof_window: int = 4,
        reward_rate: float = 1.0,
        ledger: Ledger | None = None,
        log: EventLog | None = None,
    ):
        if claim_window < 1 or proof_window < 1:
            raise ValueError("claim and proof windows must be at least one block")
        self.keyring = keyring
        self.claim_window = claim_window
        self.proof_window = proof_window
        self.reward_rate = reward_rate
        self.ledger = Ledger() if ledger is None else ledger
        self.log = EventLog() if log is None else log
        self._records: dict[bytes, _Record] = {}
        self._by_servicer_session: dict[tuple[str, str], bytes] = {}

    def status(self, claim: Claim) -> ClaimStatus:
        return self._records[claim.ref].status

    def submit_claim(self, state: ServicerState, height: int, probability: float) -> Claim:
        s = state.session
        if not s.end_height <= height < s.end_height + self.claim_window:
            raise WindowViolationError(
                f"claim at {height} outside window [{s.end_height}, {s.end_height + self.claim_window})"
            )
        slot = (state.servicer_id, s.session_id)
        if slot in self._by_servicer_session:
            raise DuplicateClaimError(f"{state.servicer_id} already claimed session {s.session_id[:12]}")
        state.trie.freeze()
        claim = Claim(
            servicer_id=state.servicer_id,
            session_id=s.session_id,
            app_id=s.app_id,
            service_id=s.service_id,
            session_end=s.end_height,
            root=state.trie.root,
            claim_height=height,
            key_width=state.trie.key_width,
            probability=float(probability),
        )
        self._records[claim.ref] = _Record(claim, ClaimStatus.CLAIMED)
        self._by_servicer_session[slot] = claim.ref
        self.log.append(
            "claim",
            claim=claim.ref.hex(),
            servicer=claim.servicer_id,
            session=claim.session_id,
            app=claim.app_id,
            service=claim.service_id,
            height=height,
            root=claim.root.hash.hex(),
            sum=claim.root.sum,
            probability=claim.probability,
        )
        return claim

    def challenge(self, claim: Claim, block_hash: bytes, height: int) -> int:
        rec = self._records[claim.ref]
        if rec.status is not ClaimStatus.CLAIMED:
            raise ClaimStateError(f"cannot challenge a claim in state {rec.status.value}")
        target = derive_challenge(claim, block_hash, height)
        rec.status = ClaimStatus.CHALLENGED
        rec.target = target
        rec.challenge_height = height
        if claim.root.sum == 0:
            # Nothing was committed, so there is no leaf to reveal; pays 0.
            rec.verification = Verification(True, ClaimStatus.SETTLED, "empty-claim")
        self.log.append(
            "challenge",
            claim=claim.ref.hex(),
            height=height,
            block_hash=block_hash.hex(),
            target=key_bytes(target, claim.key_width).hex(),
        )
        return target

    def submit_proof(self, claim: Claim, reveal: ProofReveal, height: int) -> Verification:
        rec = self._records[claim.ref]
        if rec.status is not ClaimStatus.CHALLENGED:
            raise ClaimStateError(f"cannot prove a claim in state {rec.status.value}")
        if height < rec.challenge_height:
            raise OrderingViolationError("proof submitted before its challenge block")
        if height >= rec.challenge_height + self.proof_window:
            result = Verification(False, ClaimStatus.EXPIRED, "proof-window-elapsed")
        else:
            reason = check_reveal(claim, reveal, self.keyring, rec.target)
            if reason is None:
                result = Verification(True, ClaimStatus.SETTLED)
            else:
                result = Verification(False, ClaimStatus.INVALID, reason)
        rec.verification = result
        self.log.append(
            "reveal",
            claim=claim.ref.hex(),
            height=height,
            leaf=key_bytes(reveal.proof.key, reveal.proof.key_width).hex(),
            accepted=result.accepted,
            reason=result.reason,
        )
        return result

    def expire(self, height: int) -> list[Claim]:
        """Mark challenged claims whose proof window closed without a reveal."""
        out = []
        for rec in self._records.values():
            if (
                rec.status is ClaimStatus.CHALLENGED
                and rec.verification is None
                and height >= rec.challenge_height + self.proof_window
            ):
                rec.verification = Verification(False, ClaimStatus.EXPIRED, "no-reveal")
                out.append(rec.claim)
        return out

    def settle(self, claim: Claim, result: Verification | None = None, reward_rate: float | None = None) -> Settlement:
        """Mint to the servicer and burn from the application.

        Amount is ``sum * reward_rate / p``: the claimed count scaled back up
        to the estimated relay volume. Anything but an accepted proof pays 0.
        """
        rec = self._records[claim.ref]
        if rec.status in TERMINAL:
            raise ClaimStateError("claim already settled")
        result = rec.verification if result is None else result
        if result is None:
            raise ClaimStateError("claim has no verification result yet")
        rate = self.reward_rate if reward_rate is None else reward_rate
        amount = claim.root.sum * rate / claim.probability if result.accepted else 0.0
        rec.status = result.status
        self.ledger.credit(claim.servicer_id, amount)
        self.ledger.credit(claim.app_id, -amount)
        self.ledger.minted += amount
        self.ledger.burned += amount
        settlement = Settlement(claim.ref, result.status, amount, amount)
        self.log.append(
            "settlement",
            claim=claim.ref.hex(),
            outcome=result.status.value,
            minted=amount,
            burned=amount,
        )
        return settlement
