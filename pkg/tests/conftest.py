from pathlib import Path

import pytest

from relaymining.primitives import Difficulty, KeyPair, Keyring
from relaymining.session import ServicerState, SessionParams, compute_budget, make_request, new_session
from relaymining.smst import SumTrie

FIXTURES = Path(__file__).parent / "fixtures"
NIBBLE_KEYS = (0b0010, 0b0011, 0b0110, 0b1101)

_acceptance_lines: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion."""

    def _report(name: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        _acceptance_lines.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


@pytest.fixture
def nibble_trie():
    return SumTrie.import_text((FIXTURES / "nibble_trie.txt").read_text())


def brute_force_closest(occupied: set[int], target: int, width: int) -> int:
    """Closest-leaf descent over an explicit 2**width slot array."""
    slots = [i in occupied for i in range(1 << width)]
    lo, hi = 0, len(slots)
    for depth in range(width):
        mid = (lo + hi) // 2
        want_right = (target >> (width - 1 - depth)) & 1
        halves = [(lo, mid), (mid, hi)]
        a, b = halves[want_right]
        if not any(slots[a:b]):
            a, b = halves[1 - want_right]
        lo, hi = a, b
    assert slots[lo]
    return lo


class World:
    """One app, one service, a servicer pool and a session over it."""

    def __init__(self, *, pool=12, sps=12, stake=1_000_000, ttrm=1000, accuracy=0.2, key_width=256, start=0):
        self.keyring = Keyring()
        self.app = self.keyring.add(KeyPair.derive("app-0"))
        self.pool = [f"servicer-{i:03d}" for i in range(pool)]
        self.keys = {s: self.keyring.add(KeyPair.derive(s)) for s in self.pool}
        self.params = SessionParams(servicers_per_session=sps, window=4, ttrm=ttrm, relay_accuracy=accuracy)
        self.budget = compute_budget(stake, ttrm, sps, accuracy)
        self.session = new_session(b"\x07" * 32, "app-0", "svc-0", self.pool, self.params, start_height=start)
        self.key_width = key_width

    def state(self, servicer=None) -> ServicerState:
        servicer = servicer or self.session.servicers[0]
        key = self.keys.get(servicer) or self.keyring.add(KeyPair.derive(servicer))
        return ServicerState(self.session, key, self.budget, self.keyring, trie=SumTrie(self.key_width))

    def request(self, servicer, i, height=None):
        h = self.session.start_height if height is None else height
        return make_request(self.app, self.session, servicer, h, f"req-{i}".encode())


@pytest.fixture
def world():
    return World()


@pytest.fixture
def p_one():
    return Difficulty(1.0)
