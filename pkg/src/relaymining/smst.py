"""Sparse Merkle sum trie.

Leaves sit on the path spelled by the bits of their key (most significant
bit first). A subtree holding exactly one leaf is represented by the leaf
itself and an empty subtree by a fixed placeholder, so a trie of ``n``
leaves has ``O(n)`` stored nodes and ``O(log n)`` proof length for any key
width. Every node commits to a ``(hash, sum)`` pair; the root sum is the
total weight of all leaves.

Node encodings (all integers big-endian, 8 bytes)::

    leaf     = H(0x00 "leaf" || key || value_hash || weight)
    internal = H(0x01 "node" || left.hash || left.sum || right.hash || right.sum)
"""

from __future__ import annotations

import dbm.dumb
import os
from dataclasses import dataclass
from typing import Iterator, MutableMapping, NamedTuple

from .primitives import DIGEST_SIZE, sha256

EMPTY_HASH = bytes(DIGEST_SIZE)
LEAF_TAG = b"\x00leaf"
NODE_TAG = b"\x01node"
MAX_SUM = (1 << 64) - 1


class TrieError(Exception):
    pass


class DuplicateKeyError(TrieError):
    """Replay rejected: a leaf with this key already exists."""


class KeyNotFoundError(TrieError, KeyError):
    pass


class EmptyTrieError(TrieError):
    pass


class FrozenTrieError(TrieError):
    pass


class Root(NamedTuple):
    hash: bytes
    sum: int

    def hex(self) -> str:
        return f"{self.hash.hex()}:{self.sum}"


EMPTY_ROOT = Root(EMPTY_HASH, 0)


def _u64(n: int) -> bytes:
    if not 0 <= n <= MAX_SUM:
        raise ValueError(f"sum out of range: {n}")
    return n.to_bytes(8, "big")


def key_bytes(key: int, key_width: int) -> bytes:
    return key.to_bytes((key_width + 7) // 8, "big")


def leaf_hash(key: int, key_width: int, value_hash: bytes, weight: int) -> bytes:
    return sha256(LEAF_TAG, key_bytes(key, key_width), value_hash, _u64(weight))


def node_hash(left: Root, right: Root) -> bytes:
    return sha256(NODE_TAG, left.hash, _u64(left.sum), right.hash, _u64(right.sum))


def bit_at(key: int, depth: int, key_width: int) -> int:
    return (key >> (key_width - 1 - depth)) & 1


@dataclass(frozen=True)
class _Leaf:
    key: int
    value_hash: bytes
    weight: int


@dataclass(frozen=True)
class _Node:
    left: Root
    right: Root


@dataclass(frozen=True)
class MembershipProof:
    """Leaf data plus sibling ``(hash, sum)`` pairs ordered leaf to root."""

    key: int
    key_width: int
    value_hash: bytes
    weight: int
    siblings: tuple[Root, ...]

    @property
    def depth(self) -> int:
        return len(self.siblings)

    def to_bytes(self) -> bytes:
        out = bytearray(b"SMP1")
        out += self.key_width.to_bytes(2, "big")
        out += key_bytes(self.key, self.key_width)
        out += self.value_hash
        out += _u64(self.weight)
        out += len(self.siblings).to_bytes(2, "big")
        for s in self.siblings:
            out += s.hash + _u64(s.sum)
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "MembershipProof":
        if data[:4] != b"SMP1" or len(data) < 6:
            raise ValueError("not a serialized proof")
        width = int.from_bytes(data[4:6], "big")
        if not 1 <= width <= 8 * DIGEST_SIZE:
            raise ValueError("bad key width")
        nkey = (width + 7) // 8
        pos = 6
        key = int.from_bytes(data[pos : pos + nkey], "big")
        pos += nkey
        value_hash = data[pos : pos + DIGEST_SIZE]
        pos += DIGEST_SIZE
        weight = int.from_bytes(data[pos : pos + 8], "big")
        pos += 8
        count = int.from_bytes(data[pos : pos + 2], "big")
        pos += 2
        if len(data) != pos + count * (DIGEST_SIZE + 8):
            raise ValueError("proof length mismatch")
        siblings = []
        for _ in range(count):
            h = data[pos : pos + DIGEST_SIZE]
            s = int.from_bytes(data[pos + DIGEST_SIZE : pos + DIGEST_SIZE + 8], "big")
            siblings.append(Root(h, s))
            pos += DIGEST_SIZE + 8
        return cls(key, width, value_hash, weight, tuple(siblings))

    def to_json(self) -> dict:
        return {
            "key": key_bytes(self.key, self.key_width).hex(),
            "key_width": self.key_width,
            "value_hash": self.value_hash.hex(),
            "weight": self.weight,
            "siblings": [[s.hash.hex(), s.sum] for s in self.siblings],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MembershipProof":
        return cls(
            key=int(obj["key"], 16),
            key_width=int(obj["key_width"]),
            value_hash=bytes.fromhex(obj["value_hash"]),
            weight=int(obj["weight"]),
            siblings=tuple(Root(bytes.fromhex(h), int(s)) for h, s in obj["siblings"]),
        )


def compute_root(proof: MembershipProof) -> Root:
    """Fold a proof back up to the root it implies. Raises on malformed input."""
    width = proof.key_width
    if not 1 <= width <= 8 * DIGEST_SIZE:
        raise ValueError("bad key width")
    if not 0 <= proof.key < (1 << width):
        raise ValueError("key out of range")
    if len(proof.value_hash) != DIGEST_SIZE or len(proof.siblings) > width:
        raise ValueError("malformed proof")
    cur = Root(leaf_hash(proof.key, width, proof.value_hash, proof.weight), proof.weight)
    depth = len(proof.siblings)
    for sib in proof.siblings:
        depth -= 1
        if len(sib.hash) != DIGEST_SIZE:
            raise ValueError("malformed sibling")
        if bit_at(proof.key, depth, width):
            left, right = sib, cur
        else:
            left, right = cur, sib
        cur = Root(node_hash(left, right), left.sum + right.sum)
    return cur


def verify_proof(root: Root, proof: MembershipProof) -> bool:
    try:
        return compute_root(proof) == Root(*root)
    except (ValueError, TypeError, OverflowError):
        return False


def follows_closest_rule(proof: MembershipProof, target: int) -> bool:
    """Check, from the proof alone, that its leaf is the one the closest-leaf
    descent reaches for ``target``.

    Wherever the leaf's key leaves the target path, the subtree the target
    asked for must be empty. The descent also agrees with minimising
    ``key ^ target``, because a higher bit outweighs all lower ones.
    """
    width = proof.key_width
    n = len(proof.siblings)
    for depth in range(n):
        if bit_at(proof.key, depth, width) != bit_at(target, depth, width):
            sib = proof.siblings[n - 1 - depth]
            if sib != EMPTY_ROOT:
                return False
    return True


class SumTrie:
    """Sparse Merkle sum trie over a key-value store.

    Nodes are content addressed in ``store`` so earlier roots stay readable.
    Keys are integers below ``2**key_width``; 32-byte digests may be passed
    directly when ``key_width`` is 256.
    """

    def __init__(self, key_width: int = 256, store: MutableMapping[bytes, bytes] | None = None):
        if not 1 <= key_width <= 8 * DIGEST_SIZE:
            raise ValueError(f"key width must be in [1, 256], got {key_width}")
        self.key_width = key_width
        self.store = {} if store is None else store
        raw = self.store.get(b"meta:root")
        self._root = EMPTY_ROOT if raw is None else Root(raw[:DIGEST_SIZE], int.from_bytes(raw[DIGEST_SIZE:], "big"))
        self._count = int.from_bytes(self.store.get(b"meta:count", b"\x00"), "big")
        self.frozen = False

    # -- keys and nodes -------------------------------------------------

    def normalize_key(self, key) -> int:
        if isinstance(key, (bytes, bytearray)):
            if len(key) * 8 < self.key_width:
                raise ValueError("key shorter than key width")
            # Wider byte keys (digests in a narrow test trie) contribute their leading bits.
            key = int.from_bytes(key, "big") >> (len(key) * 8 - self.key_width)
        if not isinstance(key, int) or not 0 <= key < (1 << self.key_width):
            raise ValueError(f"key out of range for width {self.key_width}: {key!r}")
        return key

    def _bit(self, key: int, depth: int) -> int:
        return bit_at(key, depth, self.key_width)

    def _load(self, h: bytes) -> _Leaf | _Node:
        raw = self.store[b"n:" + h]
        if raw[:1] == b"L":
            nk = (self.key_width + 7) // 8
            key = int.from_bytes(raw[1 : 1 + nk], "big")
            vh = raw[1 + nk : 1 + nk + DIGEST_SIZE]
            w = int.from_bytes(raw[1 + nk + DIGEST_SIZE :], "big")
            return _Leaf(key, vh, w)
        lh, ls = raw[1:33], int.from_bytes(raw[33:41], "big")
        rh, rs = raw[41:73], int.from_bytes(raw[73:81], "big")
        return _Node(Root(lh, ls), Root(rh, rs))

    def _put_leaf(self, leaf: _Leaf) -> Root:
        h = leaf_hash(leaf.key, self.key_width, leaf.value_hash, leaf.weight)
        self.store[b"n:" + h] = (
            b"L" + key_bytes(leaf.key, self.key_width) + leaf.value_hash + _u64(leaf.weight)
        )
        return Root(h, leaf.weight)

    def _put_node(self, left: Root, right: Root) -> Root:
        h = node_hash(left, right)
        self.store[b"n:" + h] = b"N" + left.hash + _u64(left.sum) + right.hash + _u64(right.sum)
        return Root(h, left.sum + right.sum)

    # -- public surface ------------------------------------------------

    @property
    def root(self) -> Root:
        return self._root

    def __len__(self) -> int:
        return self._count

    def __contains__(self, key) -> bool:
        try:
            self._find(self.normalize_key(key))
        except KeyNotFoundError:
            return False
        return True

    def freeze(self) -> None:
        self.frozen = True

    def insert(self, key, value: bytes | None = None, *, value_hash: bytes | None = None, weight: int = 1) -> Root:
        """Insert a new leaf and return the new root.

        Either ``value`` (stored, and hashed for the leaf) or a bare
        ``value_hash`` must be given. Re-inserting a key raises
        :class:`DuplicateKeyError` and leaves the trie untouched.
        """
        if self.frozen:
            raise FrozenTrieError("trie is frozen after claim submission")
        k = self.normalize_key(key)
        if value is not None:
            value_hash = sha256(value)
        if value_hash is None or len(value_hash) != DIGEST_SIZE:
            raise ValueError("a value or a 32-byte value hash is required")
        if weight < 0:
            raise ValueError("leaf weight must be non-negative")
        new_root = self._insert(self._root, 0, _Leaf(k, value_hash, weight))
        if value is not None:
            self.store[b"v:" + key_bytes(k, self.key_width)] = value
        self._root = new_root
        self._count += 1
        self.store[b"meta:root"] = new_root.hash + _u64(new_root.sum)
        self.store[b"meta:count"] = self._count.to_bytes(8, "big")
        return new_root

    def _insert(self, at: Root, depth: int, leaf: _Leaf) -> Root:
        if at.hash == EMPTY_HASH:
            return self._put_leaf(leaf)
        node = self._load(at.hash)
        if isinstance(node, _Leaf):
            if node.key == leaf.key:
                raise DuplicateKeyError(f"key {leaf.key:#x} already present")
            return self._split(at, node, leaf, depth)
        if self._bit(leaf.key, depth):
            return self._put_node(node.left, self._insert(node.right, depth + 1, leaf))
        return self._put_node(self._insert(node.left, depth + 1, leaf), node.right)

    def _split(self, old_ref: Root, old: _Leaf, new: _Leaf, depth: int) -> Root:
        fork = depth
        while self._bit(old.key, fork) == self._bit(new.key, fork):
            fork += 1
        new_ref = self._put_leaf(new)
        if self._bit(new.key, fork):
            cur = self._put_node(old_ref, new_ref)
        else:
            cur = self._put_node(new_ref, old_ref)
        for d in range(fork - 1, depth - 1, -1):
            if self._bit(new.key, d):
                cur = self._put_node(EMPTY_ROOT, cur)
            else:
                cur = self._put_node(cur, EMPTY_ROOT)
        return cur

    def _find(self, key: int, root: Root | None = None) -> tuple[_Leaf, list[Root]]:
        at = self._root if root is None else root
        path: list[Root] = []
        depth = 0
        while True:
            if at.hash == EMPTY_HASH:
                raise KeyNotFoundError(key)
            node = self._load(at.hash)
            if isinstance(node, _Leaf):
                if node.key != key:
                    raise KeyNotFoundError(key)
                return node, path
            if self._bit(key, depth):
                path.append(node.left)
                at = node.right
            else:
                path.append(node.right)
                at = node.left
            depth += 1

    def get(self, key) -> bytes | None:
        k = self.normalize_key(key)
        self._find(k)
        return self.store.get(b"v:" + key_bytes(k, self.key_width))

    def prove_membership(self, key) -> MembershipProof:
        k = self.normalize_key(key)
        leaf, path = self._find(k)
        return MembershipProof(k, self.key_width, leaf.value_hash, leaf.weight, tuple(reversed(path)))

    def closest_leaf(self, target: int) -> int:
        return self.closest_proof(target).key

    def closest_proof(self, target) -> MembershipProof:
        """Proof for the leaf reached by descending along ``target``'s bits,
        crossing to the sibling wherever the indicated subtree is empty."""
        t = self.normalize_key(target)
        at = self._root
        if at.hash == EMPTY_HASH:
            raise EmptyTrieError("closest proof requested on an empty trie")
        path: list[Root] = []
        depth = 0
        while True:
            node = self._load(at.hash)
            if isinstance(node, _Leaf):
                return MembershipProof(node.key, self.key_width, node.value_hash, node.weight, tuple(reversed(path)))
            want, other = (node.right, node.left) if self._bit(t, depth) else (node.left, node.right)
            if want.hash == EMPTY_HASH:
                want, other = other, want
            path.append(other)
            at = want
            depth += 1

    def leaves(self) -> Iterator[tuple[int, bytes, int]]:
        """Yield ``(key, value_hash, weight)`` in key order."""
        stack = [self._root]
        while stack:
            at = stack.pop()
            if at.hash == EMPTY_HASH:
                continue
            node = self._load(at.hash)
            if isinstance(node, _Leaf):
                yield node.key, node.value_hash, node.weight
            else:
                stack.append(node.right)
                stack.append(node.left)

    # -- flat-file export ------------------------------------------------

    def export_text(self) -> str:
        nhex = 2 * ((self.key_width + 7) // 8)
        lines = ["smst-export v1", f"key_width {self.key_width}", f"root {self._root.hash.hex()} {self._root.sum}"]
        for k, vh, w in self.leaves():
            lines.append(f"{k:0{nhex}x} {vh.hex()} {w}")
        return "\n".join(lines) + "\n"

    @classmethod
    def import_text(cls, text: str, store=None) -> "SumTrie":
        """Rebuild a trie from :meth:`export_text` output, checking the root."""
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if len(lines) < 3 or lines[0] != "smst-export v1":
            raise ValueError("not an smst export")
        try:
            tag, width = lines[1].split()
            if tag != "key_width":
                raise ValueError
            trie = cls(int(width), store)
            tag, rhash, rsum = lines[2].split()
            if tag != "root":
                raise ValueError
            expected = Root(bytes.fromhex(rhash), int(rsum))
            for lineno, ln in enumerate(lines[3:], start=4):
                k, vh, w = ln.split()
                trie.insert(int(k, 16), value_hash=bytes.fromhex(vh), weight=int(w))
        except (ValueError, TrieError) as exc:
            raise ValueError(f"malformed smst export: {exc}") from exc
        if trie.root != expected:
            raise ValueError("smst export root line does not match its records")
        return trie


def open_file_store(path: str | os.PathLike) -> MutableMapping[bytes, bytes]:
    """File-backed node store (``dbm.dumb``; portable, no crash recovery)."""
    return dbm.dumb.open(os.fspath(path), "c")
