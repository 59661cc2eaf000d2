"""
Sessions, token buckets and relay admission
===========================================
"""

# %%
from relaymining.primitives import Difficulty, KeyPair, Keyring
from relaymining.session import (
    ServicerState,
    SessionParams,
    compute_budget,
    handle_relay,
    make_request,
    new_session,
)

keyring = Keyring()
app = keyring.add(KeyPair.derive("app-0"))
pool = [f"servicer-{i:02d}" for i in range(30)]
for name in pool:
    keyring.add(KeyPair.derive(name))

params = SessionParams(servicers_per_session=12, window=4)
session = new_session(b"\x11" * 32, "app-0", "svc-0", pool, params)
print("session servicers:", ", ".join(session.servicers))

# %%
# The default constants give each servicer 10**8 tokens per session.
print(compute_budget(1_000_000, 1000, 12, 0.2).tokens)

# A tiny bucket makes the cap visible.
budget = compute_budget(12, 10, 12, 0)
servicer = session.servicers[0]
state = ServicerState(session, KeyPair.derive(servicer), budget, keyring)

# %%
outcomes = {}
for i in range(2 * budget.tokens):
    req = make_request(app, session, servicer, 0, f"eth_blockNumber #{i}".encode())
    out = handle_relay(state, req, Difficulty(1.0))
    outcomes[out.value] = outcomes.get(out.value, 0) + 1
print(outcomes)
print("trie sum", state.trie.root.sum, "tokens left", state.token_count)
