"""
Claim, challenge, reveal, settle
================================

One servicer serves a session at p = 0.25, commits to its trie root,
answers a challenge drawn from a later block hash and gets paid.
"""

# %%
from relaymining.claimproof import ClaimRegistry, build_reveal
from relaymining.primitives import Difficulty, KeyPair, Keyring, sha256
from relaymining.session import ServicerState, compute_budget, handle_relay, make_request, new_session

keyring = Keyring()
app = keyring.add(KeyPair.derive("app-0"))
pool = [f"servicer-{i:02d}" for i in range(12)]
keys = {n: keyring.add(KeyPair.derive(n)) for n in pool}
session = new_session(sha256(b"block 0"), "app-0", "svc-0", pool)
servicer = session.servicers[3]
state = ServicerState(session, keys[servicer], compute_budget(1_000_000, 1000, 12, 0.2), keyring)

p = 0.25
for i in range(400):
    handle_relay(state, make_request(app, session, servicer, i % 4, f"call {i}".encode()), Difficulty(p))
print("served", state.served, "claimed", state.trie.root.sum)

# %%
registry = ClaimRegistry(keyring)
claim = registry.submit_claim(state, session.end_height, p)
target = registry.challenge(claim, sha256(b"block 5"), session.end_height + 1)
result = registry.submit_proof(claim, build_reveal(state, claim, target), session.end_height + 2)
print(result)

# %%
settlement = registry.settle(claim)
print("minted", settlement.minted, "burned", settlement.burned)
print(registry.ledger.balances)

# %%
for line in registry.log.lines():
    print(line[:110])
