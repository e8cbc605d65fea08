"""Arity-16 account trie whose inner nodes are KZG vector commitments.

Keys are 32 bytes and are walked four bits at a time, high nibble first.
Paths are compressed: a leaf sits at the shallowest level where its key
prefix is unique, so a tree of n random keys is about log16(n) levels deep.

Digests:

    leaf   hash_to_scalar("verkle-leaf", key, account_bytes)
    inner  hash_to_scalar("verkle-inner", commitment_bytes)
    empty  0

A path proof carries one (commitment, nibble, value, witness) entry per
level and the terminal leaf it reached.  For an absent key the terminal is
either an empty slot (value 0) or a different leaf that shares the walked
prefix, which proves nothing else can live on that path.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from . import kzg
from .encoding import frame, u64
from .kzg import KzgParams
from .pairing import G1Element, hash_to_scalar

ARITY = 16
KEY_BYTES = 32
MAX_DEPTH = 2 * KEY_BYTES


class VerkleError(ValueError):
    pass


@lru_cache(maxsize=1)
def default_params() -> KzgParams:
    return kzg.seeded_setup(ARITY, b"sendnet-verkle-v1")


@dataclass(frozen=True)
class Account:
    balance: int = 0
    nonce: int = 0

    def to_bytes(self) -> bytes:
        return frame(b"acct", u64(self.balance), u64(self.nonce))


def nibble(key: bytes, depth: int) -> int:
    b = key[depth // 2]
    return b >> 4 if depth % 2 == 0 else b & 0x0F


def leaf_digest(key: bytes, account: Account) -> int:
    return hash_to_scalar(b"verkle-leaf", key, account.to_bytes())


def inner_digest(commitment: G1Element) -> int:
    return hash_to_scalar(b"verkle-inner", commitment.to_bytes())


def _check_key(key: bytes) -> None:
    if not isinstance(key, bytes) or len(key) != KEY_BYTES:
        raise VerkleError("keys must be 32 bytes")


class _Leaf:
    __slots__ = ("key", "account")

    def __init__(self, key: bytes, account: Account):
        self.key = key
        self.account = account

    def digest(self) -> int:
        return leaf_digest(self.key, self.account)


class _Inner:
    __slots__ = ("children", "values", "commitment")

    def __init__(self):
        self.children: dict[int, _Leaf | _Inner] = {}
        self.values = [0] * ARITY
        self.commitment = G1Element.identity()

    def digest(self) -> int:
        return inner_digest(self.commitment)

    def set_value(self, params: KzgParams, slot: int, value: int) -> None:
        self.commitment = kzg.update_commitment(params, self.commitment, slot, value - self.values[slot])
        self.values[slot] = value


def _copy_node(node):
    if isinstance(node, _Leaf):
        return _Leaf(node.key, node.account)
    out = _Inner()
    out.values = list(node.values)
    out.commitment = node.commitment
    out.children = {k: _copy_node(c) for k, c in node.children.items()}
    return out


@dataclass(frozen=True)
class PathLevel:
    commitment: G1Element
    nibble: int
    value: int
    witness: G1Element


@dataclass(frozen=True)
class PathProof:
    levels: tuple[PathLevel, ...]
    terminal_key: bytes | None = None
    terminal_account: Account | None = None


class VerkleTree:
    def __init__(self, params: KzgParams | None = None):
        self.params = params or default_params()
        if self.params.n != ARITY:
            raise VerkleError(f"verkle params must have n={ARITY}")
        self.root = _Inner()
        self.size = 0

    def root_digest(self) -> int:
        return self.root.digest()

    def copy(self) -> "VerkleTree":
        out = VerkleTree(self.params)
        out.root = _copy_node(self.root)
        out.size = self.size
        return out

    def get(self, key: bytes) -> Account | None:
        _check_key(key)
        node, depth = self.root, 0
        while isinstance(node, _Inner):
            node = node.children.get(nibble(key, depth))
            depth += 1
        return node.account if node is not None and node.key == key else None

    def update(self, key: bytes, account: Account) -> "VerkleTree":
        _check_key(key)
        path: list[tuple[_Inner, int]] = []
        node, depth = self.root, 0
        while True:
            slot = nibble(key, depth)
            path.append((node, slot))
            child = node.children.get(slot)
            if child is None:
                node.children[slot] = _Leaf(key, account)
                self.size += 1
                break
            if isinstance(child, _Leaf):
                if child.key == key:
                    child.account = account
                    break
                # split: push the resident leaf one level down and keep walking
                inner = _Inner()
                inner.children[nibble(child.key, depth + 1)] = child
                inner.set_value(self.params, nibble(child.key, depth + 1), child.digest())
                node.children[slot] = inner
                child = inner
            node, depth = child, depth + 1
        for parent, slot in reversed(path):
            parent.set_value(self.params, slot, parent.children[slot].digest())
        return self

    def prove(self, key: bytes) -> PathProof:
        _check_key(key)
        levels = []
        node, depth = self.root, 0
        while True:
            slot = nibble(key, depth)
            poly = kzg.interpolate_vector(node.values)
            w = kzg.create_witness(self.params, poly, slot).witness
            levels.append(PathLevel(node.commitment, slot, node.values[slot], w))
            child = node.children.get(slot)
            if isinstance(child, _Inner):
                node, depth = child, depth + 1
                continue
            if child is None:
                return PathProof(tuple(levels))
            return PathProof(tuple(levels), child.key, child.account)


def verkle_update(tree: VerkleTree, key: bytes, account: Account) -> VerkleTree:
    return tree.update(key, account)


def verkle_prove(tree: VerkleTree, key: bytes) -> PathProof:
    return tree.prove(key)


def verkle_verify(root: int, key: bytes, account: Account | None, proof: PathProof,
                  params: KzgParams | None = None) -> bool:
    """Membership when ``account`` is given, non-membership when it is None."""
    params = params or default_params()
    try:
        _check_key(key)
        levels = proof.levels
        if not levels or len(levels) > MAX_DEPTH or inner_digest(levels[0].commitment) != root:
            return False
        for d, lvl in enumerate(levels):
            if lvl.nibble != nibble(key, d):
                return False
            if d + 1 < len(levels) and lvl.value != inner_digest(levels[d + 1].commitment):
                return False
            if not kzg.verify_eval(params, lvl.commitment, lvl.nibble, lvl.value, lvl.witness):
                return False
        last = levels[-1].value
        tk, ta = proof.terminal_key, proof.terminal_account
        if account is not None:
            return tk == key and ta == account and last == leaf_digest(key, account)
        if tk is None:
            return last == 0 and ta is None
        depth = len(levels)
        return (tk != key and ta is not None and last == leaf_digest(tk, ta)
                and all(nibble(tk, d) == nibble(key, d) for d in range(depth)))
    except Exception:
        return False
