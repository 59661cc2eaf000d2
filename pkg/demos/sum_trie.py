"""
Sparse Merkle sum trie
======================

Commit to a set of keys, then prove one of them against the root.
"""

# %%
from relaymining.smst import SumTrie, verify_proof, follows_closest_rule

trie = SumTrie(key_width=4)
for key in (0b0010, 0b0011, 0b0110, 0b1101):
    trie.insert(key, f"leaf-{key:04b}".encode())

print("root", trie.root.hash.hex()[:16], "sum", trie.root.sum)

# %%
# Walk towards target 0001. The left half at depth 3 is empty, so the
# descent steps over to 0011.
proof = trie.closest_proof(0b0001)
print("closest leaf", format(proof.key, "04b"))
print("valid", verify_proof(trie.root, proof), "closest", follows_closest_rule(proof, 0b0001))

# %%
# Every target, with the leaf it lands on.
for target in range(16):
    print(format(target, "04b"), "->", format(trie.closest_proof(target).key, "04b"))

# %%
# Tamper with one sibling sum and the proof no longer reaches the root.
from relaymining.smst import MembershipProof, Root

s = list(proof.siblings)
s[0] = Root(s[0].hash, s[0].sum + 1)
forged = MembershipProof(proof.key, proof.key_width, proof.value_hash, proof.weight, tuple(s))
print("forged valid", verify_proof(trie.root, forged))
