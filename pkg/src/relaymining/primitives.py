"""Hashing, the digest-vs-difficulty collision test and relay signing.

Digests are raw 32-byte SHA-256 outputs and are compared as big-endian
unsigned integers. Signing is abstracted behind :class:`Keyring`; the
default scheme is a keyed hash (HMAC-SHA256), which is deterministic and
enough for settlement logic, which only needs ``verify`` semantics.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field
from fractions import Fraction

DIGEST_SIZE = 32
KEY_SPACE = 1 << (8 * DIGEST_SIZE)
MIN_PROBABILITY = 2.0**-64

Digest = bytes


def sha256(*parts: bytes) -> Digest:
    h = hashlib.sha256()
    for part in parts:
        h.update(part)
    return h.digest()


def _framed(data: bytes) -> bytes:
    return len(data).to_bytes(8, "big") + data


def digest(request: bytes, response: bytes) -> Digest:
    """Digest of a signed (request, response) pair.

    Both halves are length-prefixed before hashing so that moving bytes
    across the boundary changes the digest.
    """
    if not request or not response:
        raise ValueError("digest inputs must be non-empty")
    return sha256(b"relay", _framed(request), _framed(response))


def as_int(d: Digest) -> int:
    return int.from_bytes(d, "big")


@dataclass(frozen=True)
class Difficulty:
    """Collision probability and the matching 256-bit threshold.

    ``threshold == floor(probability * 2**256)`` (never below 1), and a
    digest collides iff its integer value is strictly below it.
    """

    probability: float
    threshold: int = field(init=False, compare=False)

    def __post_init__(self):
        p = float(self.probability)
        if not (p > 0.0 and p <= 1.0):
            raise ValueError(f"collision probability must be in (0, 1], got {p!r}")
        p = max(p, MIN_PROBABILITY)
        object.__setattr__(self, "probability", p)
        threshold = int(Fraction(p) * KEY_SPACE)
        object.__setattr__(self, "threshold", max(threshold, 1))

    @property
    def relays_per_claim(self) -> float:
        return 1.0 / self.probability


def check_collision(d: Digest, diff: Difficulty) -> bool:
    return as_int(d) < diff.threshold


# -- signing ---------------------------------------------------------------

SIGNATURE_SIZE = 32


@dataclass(frozen=True)
class KeyPair:
    signer_id: str
    secret: bytes = field(repr=False)

    @classmethod
    def derive(cls, signer_id: str, seed: bytes = b"") -> "KeyPair":
        """Deterministic key for tests and simulations."""
        return cls(signer_id, sha256(b"keygen", seed, signer_id.encode()))


def sign(key: KeyPair, message: bytes) -> bytes:
    return hmac.new(key.secret, message, hashlib.sha256).digest()


class Keyring:
    """Registry of verification material, keyed by signer id.

    With the keyed-hash scheme the verifier needs the signer's secret; a
    real deployment would swap this for a directory of public keys.
    """

    def __init__(self, keys=()):
        self._keys: dict[str, KeyPair] = {}
        for k in keys:
            self.add(k)

    def add(self, key: KeyPair) -> KeyPair:
        self._keys[key.signer_id] = key
        return key

    def __contains__(self, signer_id: str) -> bool:
        return signer_id in self._keys

    def verify(self, signer_id: str, message: bytes, signature) -> bool:
        key = self._keys.get(signer_id)
        if key is None:
            return False
        if not isinstance(signature, (bytes, bytearray)) or len(signature) != SIGNATURE_SIZE:
            return False
        return hmac.compare_digest(sign(key, message), bytes(signature))
