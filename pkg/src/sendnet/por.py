"""Proof-of-Relay settlement for one relay segment (outbound -> relay -> inbound).

Wire encodings (all via ``encoding.frame``):

outbound body   frame("por-out", event_id, size_be64, outbound_id, room_id)
relay body      frame("por-relay", outbound_body, sig_out, relay_id, next_hop)
chain link k    sign(H(event_id || prev_sig || pubkey(next)))   prev_sig = sig_out for k = 0
receipt body    frame("por-receipt", outbound, relay, inbound, frame(*event_ids), coeff_be64, root)
bill body       frame("por-bill", outbound, relay, frame(*section encodings))

Merkle leaves are ``H(event_id || size_be64)`` sorted by event_id; parents are
``H(left || right)`` and an odd node is promoted unhashed.

Cost coefficients are fixed-point with three decimals (1.000 == 1000), and
every amount is kept in milli-credits so totals stay exact.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from . import kzg
from .encoding import H, frame, text, u64
from .identity import KeyPair, sign, verify
from .kzg import KzgParams, SubvectorProof
from .pairing import G1Element, hash_to_scalar

COEFF_SCALE = 1000
DEFAULT_COEFFICIENT = 1000
RECEIPT_THRESHOLD = 64
TICKS_PER_SECOND = 1000
RECEIPT_TIMEOUT_TICKS = 30 * TICKS_PER_SECOND
MAX_SAMPLES = 16

Directory = Mapping[str, G1Element]


class PorError(Exception):
    stage = "por"


class NotAMember(PorError):
    stage = "relay_endorse"


class SizeMismatch(PorError):
    stage = "relay_endorse"


class BadOutboundSignature(PorError):
    stage = "relay_endorse"


class BadRelaySignature(PorError):
    stage = "inbound_accept"


class BadChainSignature(PorError):
    stage = "inbound_chain"


class ReplayError(PorError):
    stage = "inbound_accept"


class BadInboundSignature(PorError):
    stage = "compile_bill"


class MissingEvents(PorError):
    stage = "compile_bill"


class RootMismatch(PorError):
    stage = "outbound_endorse"


class EpochFull(PorError):
    stage = "record_relay"


class EmptyEpoch(PorError):
    stage = "prove_workload"


def _key(directory: Directory, node: str) -> G1Element | None:
    return directory.get(node)


# --- envelopes ---

@dataclass(frozen=True)
class ChainedSignature:
    hop_index: int
    signer: str
    signature: bytes


@dataclass(frozen=True)
class RelayEnvelope:
    event_id: bytes
    message_size: int
    outbound_id: str
    room_id: str
    payload: bytes
    sig_out: bytes
    relay_id: str | None = None
    sig_relay: bytes | None = None
    next_hop: str | None = None
    chain: tuple[ChainedSignature, ...] = ()

    def outbound_body(self) -> bytes:
        return frame(b"por-out", self.event_id, u64(self.message_size), text(self.outbound_id), text(self.room_id))

    def relay_body(self) -> bytes:
        return frame(b"por-relay", self.outbound_body(), self.sig_out, text(self.relay_id or ""),
                     text(self.next_hop or ""))

    def to_bytes(self) -> bytes:
        links = frame(*(frame(u64(c.hop_index), text(c.signer), c.signature) for c in self.chain))
        return frame(self.relay_body(), self.sig_relay or b"", links, self.payload)


def assemble_outbound(event_id: bytes, payload: bytes, sk_out: KeyPair, *, outbound_id: str,
                      room_id: str = "") -> RelayEnvelope:
    if not payload:
        raise ValueError("payload must be nonempty")
    env = RelayEnvelope(event_id, len(payload), outbound_id, room_id, payload, b"")
    return replace(env, sig_out=sign(sk_out.secret, H(env.outbound_body())))


def chain_digest(event_id: bytes, prev_sig: bytes, next_public: G1Element) -> bytes:
    return H(b"por-chain", event_id, prev_sig, next_public.to_bytes())


def relay_endorse(env: RelayEnvelope, membership: Iterable[str], sk_relay: KeyPair, *, relay_id: str,
                  next_hop: str, directory: Directory) -> RelayEnvelope:
    members = set(membership)
    if env.outbound_id not in members:
        raise NotAMember(f"sender {env.outbound_id} not in room member list")
    if next_hop not in members:
        raise NotAMember(f"next hop {next_hop} not in room member list")
    out_key = _key(directory, env.outbound_id)
    if out_key is None or not verify(out_key, H(env.outbound_body()), env.sig_out):
        raise BadOutboundSignature("sig_out does not verify")
    if len(env.payload) != env.message_size:
        raise SizeMismatch(f"payload is {len(env.payload)} bytes, envelope claims {env.message_size}")
    if env.chain:
        verify_chain(env, directory)
    next_key = _key(directory, next_hop)
    if next_key is None:
        raise NotAMember(f"no key for next hop {next_hop}")
    prev = env.chain[-1].signature if env.chain else env.sig_out
    link = ChainedSignature(len(env.chain), relay_id, sign(sk_relay.secret, chain_digest(env.event_id, prev, next_key)))
    out = replace(env, relay_id=relay_id, next_hop=next_hop, chain=env.chain + (link,))
    return replace(out, sig_relay=sign(sk_relay.secret, H(out.relay_body())))


def verify_chain(env: RelayEnvelope, directory: Directory) -> None:
    """Raise BadChainSignature unless every hop signed over its predecessor and successor."""
    if not env.chain:
        raise BadChainSignature("empty chain")
    for k, link in enumerate(env.chain):
        if link.hop_index != k:
            raise BadChainSignature(f"hop {k} carries index {link.hop_index}")
        prev = env.sig_out if k == 0 else env.chain[k - 1].signature
        nxt = env.chain[k + 1].signer if k + 1 < len(env.chain) else env.next_hop
        signer_key, next_key = _key(directory, link.signer), _key(directory, nxt or "")
        if signer_key is None or next_key is None:
            raise BadChainSignature(f"unknown key at hop {k}")
        if not verify(signer_key, chain_digest(env.event_id, prev, next_key), link.signature):
            raise BadChainSignature(f"hop {k} signature invalid")
    if env.chain[-1].signer != env.relay_id:
        raise BadChainSignature("last hop is not the endorsing relay")


# --- inbound side ---

Leaf = tuple[bytes, int]


def leaf_hash(event_id: bytes, size: int) -> bytes:
    return H(event_id, u64(size))


def merkle_root(leaves: Iterable[Leaf]) -> bytes:
    level = [leaf_hash(e, s) for e, s in sorted(leaves)]
    if not level:
        raise ValueError("merkle root of an empty set")
    while len(level) > 1:
        nxt = [H(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


@dataclass
class InboundBatch:
    """Accepted leaves from one (outbound, relay) pair, waiting for a receipt."""
    outbound_id: str
    relay_id: str
    opened_at: int
    leaves: dict[bytes, int] = field(default_factory=dict)


class InboundLedger:
    def __init__(self, node_id: str, keys: KeyPair):
        self.node_id = node_id
        self.keys = keys
        self.batches: dict[tuple[str, str], InboundBatch] = {}
        self.seen: set[tuple[str, bytes]] = set()


def inbound_accept(env: RelayEnvelope, membership: Iterable[str], ledger: InboundLedger, directory: Directory,
                   now: int = 0) -> Leaf:
    members = set(membership)
    if env.next_hop != ledger.node_id or ledger.node_id not in members:
        raise NotAMember(f"envelope for {env.next_hop} delivered to {ledger.node_id}")
    if env.outbound_id not in members:
        raise NotAMember(f"sender {env.outbound_id} not in room member list")
    # inbound checks reuse the relay_endorse error types but report their own stage
    out_key = _key(directory, env.outbound_id)
    if out_key is None or not verify(out_key, H(env.outbound_body()), env.sig_out):
        raise _at_inbound(BadOutboundSignature("sig_out does not verify"))
    if env.sig_relay is None or env.relay_id is None:
        raise BadRelaySignature("sig_relay missing")
    relay_key = _key(directory, env.relay_id)
    if relay_key is None or not verify(relay_key, H(env.relay_body()), env.sig_relay):
        raise BadRelaySignature("sig_relay does not verify")
    if len(env.payload) != env.message_size:
        raise _at_inbound(SizeMismatch("payload length differs from message_size"))
    verify_chain(env, directory)
    tag = (env.relay_id, env.event_id)
    if tag in ledger.seen:
        raise ReplayError(f"event {env.event_id.hex()[:12]} already accepted")
    ledger.seen.add(tag)
    key = (env.outbound_id, env.relay_id)
    batch = ledger.batches.get(key)
    if batch is None:
        batch = ledger.batches[key] = InboundBatch(env.outbound_id, env.relay_id, now)
    batch.leaves[env.event_id] = env.message_size
    return env.event_id, env.message_size


def _at_inbound(err: PorError) -> PorError:
    err.stage = "inbound_accept"
    return err


@dataclass(frozen=True)
class RelayReceipt:
    outbound_id: str
    relay_id: str
    inbound_id: str
    event_ids: tuple[bytes, ...]
    cost_coefficient: int
    merkle_root: bytes
    sig_in: bytes = b""

    def body(self) -> bytes:
        return frame(b"por-receipt", text(self.outbound_id), text(self.relay_id), text(self.inbound_id),
                     frame(*self.event_ids), u64(self.cost_coefficient), self.merkle_root)

    def to_bytes(self) -> bytes:
        return frame(self.body(), self.sig_in)


def build_receipt(batch: InboundBatch, ledger: InboundLedger, *, threshold: int = RECEIPT_THRESHOLD,
                  now: int = 0, timeout: int = RECEIPT_TIMEOUT_TICKS,
                  cost_coefficient: int = DEFAULT_COEFFICIENT, force: bool = False) -> RelayReceipt | None:
    """Seal ``batch`` into a signed receipt, or return None while it is still pending."""
    if not batch.leaves:
        raise ValueError("batch is empty")
    if not force and len(batch.leaves) < threshold and now - batch.opened_at < timeout:
        return None
    event_ids = tuple(sorted(batch.leaves))
    receipt = RelayReceipt(batch.outbound_id, batch.relay_id, ledger.node_id, event_ids, cost_coefficient,
                           merkle_root(batch.leaves.items()))
    receipt = replace(receipt, sig_in=sign(ledger.keys.secret, H(receipt.body())))
    ledger.batches.pop((batch.outbound_id, batch.relay_id), None)
    return receipt


def flush_receipts(ledger: InboundLedger, *, now: int, threshold: int = RECEIPT_THRESHOLD,
                   timeout: int = RECEIPT_TIMEOUT_TICKS, cost_coefficient: int = DEFAULT_COEFFICIENT,
                   force: bool = False) -> list[RelayReceipt]:
    out = []
    for key in sorted(ledger.batches):
        r = build_receipt(ledger.batches[key], ledger, threshold=threshold, now=now, timeout=timeout,
                          cost_coefficient=cost_coefficient, force=force)
        if r is not None:
            out.append(r)
    return out


def verify_receipt(receipt: RelayReceipt, directory: Directory) -> bool:
    key = _key(directory, receipt.inbound_id)
    return key is not None and verify(key, H(receipt.body()), receipt.sig_in)


# --- relay side ---

class RelayLedger:
    """What a relay endorsed, per outbound node: event/inbound -> (size, sig_relay)."""

    def __init__(self, node_id: str, keys: KeyPair):
        self.node_id = node_id
        self.keys = keys
        self.endorsed: dict[str, dict[tuple[str, bytes], tuple[int, bytes]]] = {}

    def record(self, env: RelayEnvelope) -> None:
        self.endorsed.setdefault(env.outbound_id, {})[(env.next_hop, env.event_id)] = (env.message_size, env.sig_relay)


@dataclass(frozen=True)
class BillSection:
    receipt: RelayReceipt
    lines: tuple[tuple[bytes, int], ...]  # (event_id, message_size), sorted

    @property
    def total_millis(self) -> int:
        return sum(size for _, size in self.lines) * self.receipt.cost_coefficient

    def to_bytes(self) -> bytes:
        return frame(self.receipt.to_bytes(), frame(*(frame(e, u64(s)) for e, s in self.lines)))


@dataclass(frozen=True)
class RelayBill:
    outbound_id: str
    relay_id: str
    sections: tuple[BillSection, ...]
    sig_relay: bytes = b""
    sig_outbound: bytes = b""

    def body(self) -> bytes:
        return frame(b"por-bill", text(self.outbound_id), text(self.relay_id),
                     frame(*(s.to_bytes() for s in self.sections)))

    def to_bytes(self) -> bytes:
        return frame(self.body(), self.sig_relay, self.sig_outbound)

    @property
    def total_millis(self) -> int:
        return sum(s.total_millis for s in self.sections)

    @property
    def merkle_roots(self) -> tuple[bytes, ...]:
        return tuple(s.receipt.merkle_root for s in self.sections)

    def segments(self) -> list[tuple[str, str, bytes]]:
        """(relay, inbound, event_id) for every billed line."""
        return [(self.relay_id, s.receipt.inbound_id, e) for s in self.sections for e, _ in s.lines]


def compile_bill(receipts: Sequence[RelayReceipt], ledger: RelayLedger, directory: Directory) -> RelayBill:
    if not receipts:
        raise MissingEvents("no receipts")
    outbound = receipts[0].outbound_id
    records = ledger.endorsed.get(outbound, {})
    covered: set[tuple[str, bytes]] = set()
    sections = []
    for r in receipts:
        if r.outbound_id != outbound or r.relay_id != ledger.node_id:
            raise MissingEvents("receipt belongs to a different segment")
        if not verify_receipt(r, directory):
            raise BadInboundSignature(f"receipt from {r.inbound_id} has a bad sig_in")
        lines = []
        for eid in r.event_ids:
            rec = records.get((r.inbound_id, eid))
            if rec is None:
                raise MissingEvents(f"receipt lists {eid.hex()[:12]} which this relay never endorsed")
            lines.append((eid, rec[0]))
        lines.sort()
        if merkle_root(lines) != r.merkle_root:
            raise BadInboundSignature("receipt root disagrees with relayed sizes")
        covered.update((r.inbound_id, eid) for eid in r.event_ids)
        sections.append(BillSection(r, tuple(lines)))
    missing = set(records) - covered
    if missing:
        raise MissingEvents(f"{len(missing)} endorsed event(s) have no receipt")
    bill = RelayBill(outbound, ledger.node_id, tuple(sections))
    return replace(bill, sig_relay=sign(ledger.keys.secret, H(bill.body())))


class OutboundLedger:
    def __init__(self, node_id: str, keys: KeyPair):
        self.node_id = node_id
        self.keys = keys
        self.sent: dict[bytes, int] = {}

    def record(self, env: RelayEnvelope) -> None:
        self.sent[env.event_id] = env.message_size


def outbound_endorse(bill: RelayBill, ledger: OutboundLedger, directory: Directory) -> RelayBill:
    relay_key = _key(directory, bill.relay_id)
    if relay_key is None or not verify(relay_key, H(bill.body()), bill.sig_relay):
        raise _at_outbound(BadRelaySignature("bill sig_relay does not verify"))
    if bill.outbound_id != ledger.node_id:
        raise RootMismatch("bill addressed to another outbound node")
    for s in bill.sections:
        if not verify_receipt(s.receipt, directory):
            raise _at_outbound(BadInboundSignature("receipt inside bill has a bad sig_in"))
        own = []
        for eid in s.receipt.event_ids:
            if eid not in ledger.sent:
                raise RootMismatch(f"bill lists {eid.hex()[:12]} which was never sent")
            own.append((eid, ledger.sent[eid]))
        if merkle_root(own) != s.receipt.merkle_root or merkle_root(s.lines) != s.receipt.merkle_root:
            raise RootMismatch(f"merkle root mismatch for receipt from {s.receipt.inbound_id}")
    return replace(bill, sig_outbound=sign(ledger.keys.secret, H(bill.body(), bill.sig_relay)))


def _at_outbound(err: PorError) -> PorError:
    err.stage = "outbound_endorse"
    return err


def verify_bill(bill: RelayBill, directory: Directory) -> bool:
    """Signature-level check used by validators."""
    rk, ok = _key(directory, bill.relay_id), _key(directory, bill.outbound_id)
    if rk is None or ok is None:
        return False
    return (verify(rk, H(bill.body()), bill.sig_relay)
            and verify(ok, H(bill.body(), bill.sig_relay), bill.sig_outbound)
            and all(verify_receipt(s.receipt, directory) for s in bill.sections))


def bill_roots_consistent(bill: RelayBill) -> bool:
    try:
        return all(merkle_root(s.lines) == s.receipt.merkle_root
                   and tuple(e for e, _ in s.lines) == s.receipt.event_ids for s in bill.sections)
    except ValueError:
        return False


# --- workload epochs ---

def slot_digest(event_id: bytes, sig_relay: bytes) -> int:
    return hash_to_scalar(b"por-slot", event_id, sig_relay)


@dataclass(frozen=True)
class SlotOpening:
    index: int
    event_id: bytes
    inbound_id: str
    sig_relay: bytes


class WorkloadEpoch:
    def __init__(self, number: int, params: KzgParams):
        self.number = number
        self.params = params
        self.vector = [0] * params.n
        self.commitment = G1Element.identity()
        self.fill = 0
        self.sealed = False
        self.slots: list[SlotOpening] = []

    @property
    def full(self) -> bool:
        return self.fill >= self.params.n


def record_relay(epoch: WorkloadEpoch, env: RelayEnvelope) -> WorkloadEpoch:
    if epoch.sealed or epoch.full:
        raise EpochFull(f"epoch {epoch.number} holds {epoch.fill} relays")
    if env.sig_relay is None:
        raise ValueError("only endorsed envelopes count as relayed work")
    slot = epoch.fill
    digest = slot_digest(env.event_id, env.sig_relay)
    epoch.commitment = kzg.update_commitment(epoch.params, epoch.commitment, slot, digest - epoch.vector[slot])
    epoch.vector[slot] = digest
    epoch.slots.append(SlotOpening(slot, env.event_id, env.next_hop, env.sig_relay))
    epoch.fill += 1
    return epoch


def sample_indices(sample_seed: bytes, epoch_number: int, fill: int) -> list[int]:
    if fill <= 0:
        return []
    rng = random.Random(H(b"por-sample", sample_seed, u64(epoch_number)))
    return sorted(rng.sample(range(fill), min(MAX_SAMPLES, fill)))


@dataclass(frozen=True)
class WorkloadProof:
    epoch: int
    fill: int
    commitment: G1Element
    proof: SubvectorProof
    openings: tuple[SlotOpening, ...]


def prove_workload(epoch: WorkloadEpoch, sample_seed: bytes) -> WorkloadProof:
    if epoch.fill == 0:
        raise EmptyEpoch(f"epoch {epoch.number} has no relays")
    epoch.sealed = True
    idx = sample_indices(sample_seed, epoch.number, epoch.fill)
    proof = kzg.prove_subvector(epoch.params, epoch.vector, idx)
    return WorkloadProof(epoch.number, epoch.fill, epoch.commitment, proof, tuple(epoch.slots[i] for i in idx))


def verify_workload(params: KzgParams, wp: WorkloadProof, sample_seed: bytes) -> bool:
    idx = sample_indices(sample_seed, wp.epoch, wp.fill)
    if list(wp.proof.indices) != idx or [o.index for o in wp.openings] != idx:
        return False
    for o, v in zip(wp.openings, wp.proof.values):
        if slot_digest(o.event_id, o.sig_relay) != v:
            return False
    return kzg.verify_subvector(params, wp.commitment, wp.proof.indices, wp.proof.values, wp.proof.witness)
