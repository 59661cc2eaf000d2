import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import FIXTURES
from relaymining.primitives import (
    KEY_SPACE,
    MIN_PROBABILITY,
    Difficulty,
    KeyPair,
    Keyring,
    check_collision,
    digest,
    sign,
)


def test_digest_is_deterministic():
    assert digest(b"req", b"resp") == digest(b"req", b"resp")
    assert len(digest(b"req", b"resp")) == 32


def test_digest_changes_with_one_byte():
    assert digest(b"req", b"response") != digest(b"req", b"responsf")


def test_digest_frames_the_pair():
    assert digest(b"ab", b"c") != digest(b"a", b"bc")


@pytest.mark.parametrize("req,resp", [(b"", b"x"), (b"x", b""), (b"", b"")])
def test_digest_rejects_empty(req, resp):
    with pytest.raises(ValueError):
        digest(req, resp)


def test_digest_golden_vectors():
    lines = (FIXTURES / "digest_vectors.txt").read_text().splitlines()
    vectors = [ln.split() for ln in lines if ln and not ln.startswith("#")]
    assert vectors
    for req, resp, expected in vectors:
        assert digest(bytes.fromhex(req), bytes.fromhex(resp)).hex() == expected


def test_difficulty_threshold():
    assert Difficulty(1.0).threshold == KEY_SPACE
    assert Difficulty(0.5).threshold == KEY_SPACE // 2
    # exact rational value of the float 0.1, scaled and floored
    assert Difficulty(0.1).threshold == (0x1999999999999A << 256) // (1 << 56)


def test_difficulty_floor_keeps_threshold_positive():
    d = Difficulty(1e-300)
    assert d.probability == MIN_PROBABILITY
    assert d.threshold == 2**192


@pytest.mark.parametrize("p", [0.0, -0.1, 1.5, float("nan")])
def test_difficulty_rejects_bad_probability(p):
    with pytest.raises(ValueError):
        Difficulty(p)


def test_probability_one_always_collides():
    assert check_collision(b"\xff" * 32, Difficulty(1.0))
    assert check_collision(bytes(32), Difficulty(1.0))


def test_all_ones_digest_misses_half():
    assert not check_collision(b"\xff" * 32, Difficulty(0.5))


def test_tie_does_not_collide():
    d = Difficulty(0.5)
    assert not check_collision(d.threshold.to_bytes(32, "big"), d)
    assert check_collision((d.threshold - 1).to_bytes(32, "big"), d)


def test_collision_rate_matches_probability():
    rng = np.random.default_rng(2024)
    n, p = 100_000, 0.1
    diff = Difficulty(p)
    hits = sum(check_collision(rng.bytes(32), diff) for _ in range(n))
    bound = 3 * math.sqrt(p * (1 - p) / n)
    assert abs(hits / n - p) < bound
    assert 0.094 <= hits / n <= 0.106


@given(st.binary(min_size=32, max_size=32), st.floats(1e-6, 1.0), st.floats(1e-6, 1.0))
def test_collision_is_monotone_in_probability(d, p1, p2):
    lo, hi = sorted((p1, p2))
    if check_collision(d, Difficulty(lo)):
        assert check_collision(d, Difficulty(hi))


def test_sign_verify_roundtrip():
    key = KeyPair.derive("servicer-1")
    ring = Keyring([key])
    sig = sign(key, b"hello")
    assert ring.verify("servicer-1", b"hello", sig)


def test_verify_wrong_signer():
    a, b = KeyPair.derive("a"), KeyPair.derive("b")
    ring = Keyring([a, b])
    assert not ring.verify("b", b"msg", sign(a, b"msg"))
    assert not ring.verify("unknown", b"msg", sign(a, b"msg"))


def test_verify_rejects_every_flipped_byte():
    key = KeyPair.derive("app")
    ring = Keyring([key])
    msg = b"short message"
    sig = sign(key, msg)
    for i in range(len(msg)):
        tampered = bytearray(msg)
        tampered[i] ^= 0x01
        assert not ring.verify("app", bytes(tampered), sig)


@pytest.mark.parametrize("bad", [b"", b"\x00" * 31, "not-bytes", None, b"\x00" * 33])
def test_malformed_signature_is_false(bad):
    key = KeyPair.derive("app")
    assert Keyring([key]).verify("app", b"m", bad) is False
