"""Sessions, token budgets and payable relay accumulation.

A session binds one application and one service to a pseudo-randomly
drawn set of servicers for a fixed window of blocks. Each servicer gets a
token bucket of size ``b`` for the session; a token is spent only when a
served relay's digest collides with the current difficulty, at which
point the relay is inserted into the servicer's sum trie.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .primitives import Difficulty, Keyring, KeyPair, check_collision, digest, sha256, sign
from .smst import DuplicateKeyError, SumTrie


class SessionError(Exception):
    pass


class InsufficientServicersError(SessionError):
    pass


class ZeroBudgetError(SessionError):
    pass


@dataclass(frozen=True)
class SessionParams:
    servicers_per_session: int = 12
    window: int = 4
    ttrm: int = 1000
    relay_accuracy: float = 0.2


@dataclass(frozen=True)
class SessionHeader:
    app_id: str
    service_id: str
    start_height: int
    end_height: int
    servicers: tuple[str, ...]
    seed: bytes

    @property
    def session_id(self) -> str:
        body = json.dumps(
            [self.app_id, self.service_id, self.start_height, self.end_height, list(self.servicers), self.seed.hex()],
            separators=(",", ":"),
        )
        return sha256(b"session", body.encode()).hex()

    def contains(self, height: int) -> bool:
        return self.start_height <= height < self.end_height


def session_start(height: int, window: int) -> int:
    return height - height % window


def session_seed(block_hash: bytes, app_id: str, service_id: str) -> bytes:
    return sha256(b"session-seed", block_hash, app_id.encode(), b"\x00", service_id.encode())


def new_session(
    block_hash: bytes,
    app_id: str,
    service_id: str,
    eligible_servicers: Sequence[str],
    params: SessionParams = SessionParams(),
    start_height: int = 0,
) -> SessionHeader:
    """Draw the session's servicer set from on-chain entropy.

    The draw is without replacement from the sorted eligible pool, using a
    generator seeded by ``H(block_hash || app_id || service_id)``, so the
    result depends only on those inputs and the pool as a set.
    """
    pool = sorted(set(eligible_servicers))
    k = params.servicers_per_session
    if len(pool) < k:
        raise InsufficientServicersError(f"need {k} eligible servicers, have {len(pool)}")
    seed = session_seed(block_hash, app_id, service_id)
    rng = np.random.default_rng(int.from_bytes(seed, "big"))
    picked = rng.choice(len(pool), size=k, replace=False)
    servicers = tuple(sorted(pool[i] for i in picked))
    return SessionHeader(app_id, service_id, start_height, start_height + params.window, servicers, seed)


@dataclass(frozen=True)
class TokenBudget:
    tokens: int
    app_stake: int
    ttrm: int
    servicers_per_session: int
    relay_accuracy: float


def compute_budget(app_stake, ttrm, servicers_per_session, relay_accuracy) -> TokenBudget:
    """Per-servicer bucket ``floor(stake * ttrm / sps * (1 + accuracy))``.

    Evaluated in exact rational arithmetic (decimal reading of the accuracy)
    so that the default constants give exactly 10**8.
    """
    if app_stake <= 0:
        raise ZeroBudgetError("application stake must be positive")
    if ttrm <= 0 or servicers_per_session <= 0:
        raise ValueError("ttrm and servicers_per_session must be positive")
    if relay_accuracy < 0:
        raise ValueError("relay accuracy must be non-negative")
    exact = Fraction(str(app_stake)) * Fraction(str(ttrm)) / servicers_per_session
    exact *= 1 + Fraction(str(relay_accuracy))
    tokens = math.floor(exact)
    if tokens <= 0:
        raise ZeroBudgetError("budget rounds down to zero tokens")
    return TokenBudget(tokens, app_stake, ttrm, servicers_per_session, relay_accuracy)


# -- relays ------------------------------------------------------------------


def _framed(data: bytes) -> bytes:
    return len(data).to_bytes(4, "big") + data


def _unframe(data: bytes, pos: int) -> tuple[bytes, int]:
    n = int.from_bytes(data[pos : pos + 4], "big")
    end = pos + 4 + n
    if len(data) < end:
        raise ValueError("truncated frame")
    return data[pos + 4 : end], end


@dataclass(frozen=True)
class RelayRequest:
    """An application-signed request addressed to one servicer."""

    session_id: str
    app_id: str
    service_id: str
    servicer_id: str
    height: int
    payload: bytes
    signature: bytes = b""

    def body(self) -> bytes:
        return json.dumps(
            {
                "app": self.app_id,
                "height": self.height,
                "payload": self.payload.hex(),
                "service": self.service_id,
                "servicer": self.servicer_id,
                "session": self.session_id,
            },
            separators=(",", ":"),
            sort_keys=True,
        ).encode()

    def signed_bytes(self) -> bytes:
        return _framed(self.body()) + _framed(self.signature)

    @classmethod
    def from_signed_bytes(cls, data: bytes) -> "RelayRequest":
        body, pos = _unframe(data, 0)
        sig, pos = _unframe(data, pos)
        if pos != len(data):
            raise ValueError("trailing bytes in signed request")
        obj = json.loads(body)
        return cls(obj["session"], obj["app"], obj["service"], obj["servicer"], int(obj["height"]), bytes.fromhex(obj["payload"]), sig)


def make_request(app_key: KeyPair, session: SessionHeader, servicer_id: str, height: int, payload: bytes) -> RelayRequest:
    req = RelayRequest(session.session_id, app_key.signer_id, session.service_id, servicer_id, height, payload)
    return RelayRequest(**{**req.__dict__, "signature": sign(app_key, req.body())})


@dataclass(frozen=True)
class Relay:
    request: RelayRequest
    response: bytes
    servicer_id: str
    response_signature: bytes

    def signed_request(self) -> bytes:
        return self.request.signed_bytes()

    def signed_response(self) -> bytes:
        return _framed(self.servicer_id.encode()) + _framed(self.response) + _framed(self.response_signature)

    @property
    def digest(self) -> bytes:
        return digest(self.signed_request(), self.signed_response())

    def serialize(self) -> bytes:
        return _framed(self.signed_request()) + _framed(self.signed_response())

    @classmethod
    def deserialize(cls, data: bytes) -> "Relay":
        sreq, pos = _unframe(data, 0)
        sresp, pos = _unframe(data, pos)
        if pos != len(data):
            raise ValueError("trailing bytes in relay")
        servicer, p = _unframe(sresp, 0)
        response, p = _unframe(sresp, p)
        sig, p = _unframe(sresp, p)
        if p != len(sresp):
            raise ValueError("trailing bytes in signed response")
        return cls(RelayRequest.from_signed_bytes(sreq), response, servicer.decode(), sig)

    def signatures_valid(self, keyring: Keyring) -> bool:
        return keyring.verify(self.request.app_id, self.request.body(), self.request.signature) and keyring.verify(
            self.servicer_id, _response_message(self.request, self.response), self.response_signature
        )


def _response_message(request: RelayRequest, response: bytes) -> bytes:
    # The servicer signs the response bound to the exact request it answers.
    return sha256(b"response", request.signed_bytes(), response)


def echo_service(request_body: bytes) -> bytes:
    """Stand-in RPC backend: a deterministic function of the request."""
    return sha256(b"svc", request_body)


class Admission(str, Enum):
    REJECTED_INVALID = "rejected-invalid"
    REJECTED_UNPAYABLE = "rejected-unpayable"
    REJECTED_EXHAUSTED = "rejected-exhausted"
    REJECTED_REPLAY = "rejected-replay"
    SERVED_NO_COLLISION = "served-no-collision"
    SERVED_AND_INSERTED = "served-and-inserted"


@dataclass
class ServicerState:
    """One servicer's view of one session: token counter plus sum trie."""

    session: SessionHeader
    key: KeyPair
    budget: TokenBudget
    keyring: Keyring
    trie: SumTrie = field(default_factory=SumTrie)
    service: Callable[[bytes], bytes] = echo_service
    token_count: int = field(init=False)
    served: int = field(default=0, init=False)

    def __post_init__(self):
        self.token_count = self.budget.tokens

    @property
    def servicer_id(self) -> str:
        return self.key.signer_id


def serve(state: ServicerState, request: RelayRequest) -> Relay:
    """Run the backend and sign the response; no admission checks."""
    response = state.service(request.body())
    sig = sign(state.key, _response_message(request, response))
    return Relay(request, response, state.servicer_id, sig)


def is_payable(state: ServicerState, request: RelayRequest) -> bool:
    s = state.session
    return (
        request.session_id == s.session_id
        and request.app_id == s.app_id
        and request.service_id == s.service_id
        and request.servicer_id == state.servicer_id
        and state.servicer_id in s.servicers
        and s.contains(request.height)
    )


def handle_relay(state: ServicerState, request: RelayRequest, difficulty: Difficulty) -> Admission:
    """Payable relay accumulation for a single incoming request.

    Guards run in order: request signature, payability, remaining tokens.
    A served relay spends a token and is inserted into the trie only if
    its digest collides with ``difficulty``.
    """
    if not state.keyring.verify(request.app_id, request.body(), request.signature):
        return Admission.REJECTED_INVALID
    if not is_payable(state, request):
        return Admission.REJECTED_UNPAYABLE
    if state.token_count <= 0:
        return Admission.REJECTED_EXHAUSTED
    relay = serve(state, request)
    state.served += 1
    d = relay.digest
    if not check_collision(d, difficulty):
        return Admission.SERVED_NO_COLLISION
    if d in state.trie:
        return Admission.REJECTED_REPLAY
    state.token_count -= 1
    try:
        state.trie.insert(d, relay.serialize())
    except DuplicateKeyError:  # pragma: no cover - guarded above
        state.token_count += 1
        return Admission.REJECTED_REPLAY
    return Admission.SERVED_AND_INSERTED
