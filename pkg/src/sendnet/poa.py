"""Proof-of-Availability: stake registry, RANDAO seeds, PoR assessment and blocks.

Validator weight is ``stake * accepted_count`` where accepted_count is the
number of the last W epochs with an accepted PoR submission, i.e. stake
times availability score scaled by W so the draw stays in integers.

Block body::

    frame("blk-v1", height_be64, parent, epoch_be64, validator, randao_reveal,
          frame(*reveal encodings), frame(*submission digests), state_root)

``state_root`` is the 32-byte big-endian Verkle root digest.  The block
signature covers ``H(body)`` and the block digest is ``H(body || signature)``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from .encoding import H, frame, text, u64
from .identity import KeyPair, sign, verify
from .kzg import KzgParams
from .pairing import G1Element, scalar_to_bytes
from .por import RelayBill, WorkloadProof, bill_roots_consistent, verify_bill, verify_workload
from .verkle import Account, VerkleTree

WINDOW = 32
GENESIS = b"\x00" * 32


class PoaError(ValueError):
    pass


class NoEligibleValidator(PoaError):
    pass


class BlockRejected(PoaError):
    pass


def node_key(node_id: str) -> bytes:
    """32-byte Verkle key for a node's account."""
    return H(b"account", text(node_id))


class StakeRegistry:
    def __init__(self, window: int = WINDOW):
        self.window = window
        self.stakes: dict[str, int] = {}
        self.history: dict[str, deque[bool]] = {}

    def add(self, node_id: str, stake: int, history: Iterable[bool] = ()) -> None:
        if stake < 0:
            raise PoaError("stake must be nonnegative")
        self.stakes[node_id] = stake
        self.history[node_id] = deque((bool(h) for h in history), maxlen=self.window)

    def record(self, node_id: str, accepted: bool) -> None:
        self.history[node_id].append(bool(accepted))

    def end_epoch(self, accepted_nodes: Iterable[str]) -> None:
        ok = set(accepted_nodes)
        for n in self.stakes:
            self.record(n, n in ok)

    def accepted_count(self, node_id: str) -> int:
        return sum(self.history.get(node_id, ()))

    def weight(self, node_id: str) -> int:
        return self.stakes[node_id] * self.accepted_count(node_id)

    def copy(self) -> "StakeRegistry":
        out = StakeRegistry(self.window)
        out.stakes = dict(self.stakes)
        out.history = {k: deque(v, maxlen=self.window) for k, v in self.history.items()}
        return out


def availability_score(registry: StakeRegistry, node_id: str) -> float:
    # missing epochs count as unavailable, so a fresh node starts at 0
    return registry.accepted_count(node_id) / registry.window


@dataclass(frozen=True)
class RandaoState:
    epoch: int = 0
    seed: bytes = GENESIS


def randao_reveal(keys: KeyPair, epoch: int) -> bytes:
    return sign(keys.secret, H(b"randao", u64(epoch)))


def mix_reveals(state: RandaoState, reveals: Mapping[str, bytes]) -> RandaoState:
    seed = state.seed
    for node in sorted(reveals):
        seed = H(b"randao-mix", seed, text(node), H(reveals[node]))
    return RandaoState(state.epoch + 1, seed)


def select_validator(registry: StakeRegistry, randao: RandaoState) -> str:
    nodes = sorted(registry.stakes)
    weights = [registry.weight(n) for n in nodes]
    total = sum(weights)
    if total <= 0:
        raise NoEligibleValidator("all validator weights are zero")
    draw = int.from_bytes(randao.seed, "big") % total
    for n, w in zip(nodes, weights):
        if draw < w:
            return n
        draw -= w
    raise AssertionError("unreachable")


# --- assessment ---

@dataclass(frozen=True)
class PorSubmission:
    relay_id: str
    workload: WorkloadProof
    bills: tuple[RelayBill, ...]

    def digest(self) -> bytes:
        w = self.workload
        return H(b"por-sub", text(self.relay_id), u64(w.epoch), u64(w.fill), w.commitment.to_bytes(),
                 w.proof.to_bytes(), *(b.to_bytes() for b in self.bills))


@dataclass(frozen=True)
class Assessment:
    accepted: bool
    reason: str = "ok"
    amount_millis: int = 0
    segments: tuple[tuple[str, str, bytes], ...] = ()


def assess_por(sub: PorSubmission, params: KzgParams, directory: Mapping[str, G1Element],
               credited: set, sample_seed: bytes) -> Assessment:
    """Pure check; the caller applies the credit and extends ``credited`` on accept."""
    if not sub.bills or any(b.relay_id != sub.relay_id for b in sub.bills):
        return Assessment(False, "signature")
    if not verify_workload(params, sub.workload, sample_seed):
        return Assessment(False, "proof")
    if not all(verify_bill(b, directory) for b in sub.bills):
        return Assessment(False, "signature")
    if not all(bill_roots_consistent(b) for b in sub.bills):
        return Assessment(False, "merkle")
    segments = [s for b in sub.bills for s in b.segments()]
    billed = {(inb, eid) for _, inb, eid in segments}
    if any((o.inbound_id, o.event_id) not in billed for o in sub.workload.openings):
        return Assessment(False, "proof")
    if len(set(segments)) != len(segments) or any(s in credited for s in segments):
        return Assessment(False, "double-credit")
    return Assessment(True, "ok", sum(b.total_millis for b in sub.bills), tuple(segments))


# --- blocks ---

@dataclass(frozen=True)
class Block:
    height: int
    parent: bytes
    epoch: int
    validator: str
    randao_reveal: bytes
    reveals: tuple[tuple[str, bytes], ...]
    submissions: tuple[PorSubmission, ...]
    state_root: bytes
    signature: bytes = b""

    def body(self) -> bytes:
        return frame(b"blk-v1", u64(self.height), self.parent, u64(self.epoch), text(self.validator),
                     self.randao_reveal, frame(*(frame(text(n), r) for n, r in self.reveals)),
                     frame(*(s.digest() for s in self.submissions)), self.state_root)

    def digest(self) -> bytes:
        return H(self.body(), self.signature)


@dataclass
class ChainState:
    registry: StakeRegistry
    randao: RandaoState
    tree: VerkleTree
    credited: set = field(default_factory=set)
    head: bytes = GENESIS
    height: int = 0


class Chain:
    """A replica of the ledger; the proposer and every follower run the same code."""

    def __init__(self, registry: StakeRegistry, directory: Mapping[str, G1Element], workload_params: KzgParams,
                 tree: VerkleTree | None = None):
        self.directory = directory
        self.workload_params = workload_params
        self.state = ChainState(registry.copy(), RandaoState(), tree or VerkleTree())
        self.blocks: list[Block] = []

    @property
    def state_root(self) -> bytes:
        return scalar_to_bytes(self.state.tree.root_digest())

    def balance(self, node_id: str) -> int:
        acct = self.state.tree.get(node_key(node_id))
        return acct.balance if acct else 0

    def selected(self) -> str:
        return select_validator(self.state.registry, self.state.randao)

    def _transition(self, submissions: Iterable[PorSubmission]):
        """Assess in order against a working copy of the credited set."""
        credited = set(self.state.credited)
        accepted, results = [], []
        credits: dict[str, int] = {}
        for sub in submissions:
            a = assess_por(sub, self.workload_params, self.directory, credited, self.state.randao.seed)
            results.append(a)
            if a.accepted:
                credited.update(a.segments)
                credits[sub.relay_id] = credits.get(sub.relay_id, 0) + a.amount_millis
                accepted.append(sub)
        return accepted, results, credits, credited

    def _apply_credits(self, tree: VerkleTree, credits: Mapping[str, int]) -> None:
        for node in sorted(credits):
            key = node_key(node)
            old = tree.get(key) or Account()
            tree.update(key, Account(old.balance + credits[node], old.nonce + 1))

    def produce_block(self, keys: KeyPair, validator_id: str, pending: Iterable[PorSubmission],
                      reveals: Mapping[str, bytes]) -> tuple[Block, list[Assessment]]:
        if self.selected() != validator_id:
            raise BlockRejected(f"{validator_id} is not the selected validator")
        accepted, results, credits, _ = self._transition(list(pending))
        # compute the post-state root on a scratch copy so a failed proposal leaves state untouched
        scratch = self.state.tree.copy()
        self._apply_credits(scratch, credits)
        epoch = self.state.randao.epoch
        block = Block(self.state.height + 1, self.state.head, epoch, validator_id, randao_reveal(keys, epoch),
                      tuple(sorted(reveals.items())), tuple(accepted), scalar_to_bytes(scratch.root_digest()))
        block = replace(block, signature=sign(keys.secret, H(block.body())))
        self.apply_block(block)
        return block, results

    def apply_block(self, block: Block) -> None:
        """Re-verify ``block`` from scratch and commit it, or raise BlockRejected."""
        st = self.state
        if block.height != st.height + 1 or block.parent != st.head or block.epoch != st.randao.epoch:
            raise BlockRejected("block does not extend the head")
        if block.validator != self.selected():
            raise BlockRejected(f"{block.validator} was not selected for epoch {block.epoch}")
        vkey = self.directory.get(block.validator)
        if vkey is None or not verify(vkey, H(block.body()), block.signature):
            raise BlockRejected("bad block signature")
        if not verify(vkey, H(b"randao", u64(block.epoch)), block.randao_reveal):
            raise BlockRejected("bad randao reveal")
        for node, reveal in block.reveals:
            k = self.directory.get(node)
            if k is None or not verify(k, H(b"randao", u64(block.epoch)), reveal):
                raise BlockRejected(f"bad reveal from {node}")
        accepted, results, credits, credited = self._transition(block.submissions)
        if len(accepted) != len(block.submissions):
            bad = next(r for r in results if not r.accepted)
            raise BlockRejected(f"block carries a rejected submission ({bad.reason})")
        scratch = st.tree.copy()
        self._apply_credits(scratch, credits)
        if scalar_to_bytes(scratch.root_digest()) != block.state_root:
            raise BlockRejected("state root mismatch")
        st.tree = scratch
        st.credited = credited
        st.registry.end_epoch(credits)
        st.randao = mix_reveals(st.randao, {**dict(block.reveals), block.validator: block.randao_reveal})
        st.head = block.digest()
        st.height = block.height
        self.blocks.append(block)

    def dump(self) -> str:
        lines = []
        for b in self.blocks:
            lines.append(f"block {b.height} epoch={b.epoch} validator={b.validator} "
                         f"submissions={len(b.submissions)} parent={b.parent.hex()[:16]} "
                         f"root={b.state_root.hex()} digest={b.digest().hex()[:16]}")
        reg = self.state.registry
        for node in sorted(self.directory):
            avail = f"{availability_score(reg, node):.4f}" if node in reg.stakes else "-"
            lines.append(f"account {node} balance_millis={self.balance(node)} availability={avail}")
        return "\n".join(lines) + "\n"


