"""End-to-end relay settlement run: envelopes through to a credited block.

Used by ``sendnet por demo`` and the acceptance suite.  A single tamper
point can be injected; the run then stops at the first stage that rejects,
which must be the stage the fault was aimed at.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from functools import lru_cache

from . import por
from .encoding import H, u64
from .identity import KeyPair, sign
from .kzg import KzgParams, SubvectorProof, seeded_setup
from .poa import Chain, PorSubmission, StakeRegistry, WINDOW, randao_reveal

EPOCH_CAPACITY = 256
MAX_MESSAGES = EPOCH_CAPACITY

# tamper point -> stage expected to reject it
TAMPER_STAGES = {
    "envelope": "relay_endorse",
    "relay": "inbound_accept",
    "chain": "inbound_chain",
    "receipt": "compile_bill",
    "bill": "outbound_endorse",
    "proof": "assess_por",
}

STAGES = ["assemble", "relay_endorse", "inbound_accept", "inbound_chain", "build_receipt", "compile_bill",
          "outbound_endorse", "record_relay", "prove_workload", "assess_por", "produce_block"]


@lru_cache(maxsize=1)
def workload_params() -> KzgParams:
    return seeded_setup(EPOCH_CAPACITY, b"sendnet-workload-v1")


def _flip(data: bytes, pos: int = -1) -> bytes:
    b = bytearray(data)
    b[pos] ^= 0x01
    return bytes(b)


@dataclass
class SettlementResult:
    trace: list[str] = field(default_factory=list)
    rejected_stage: str | None = None
    rejection: str | None = None
    outbound_total: int = 0
    relay_total: int = 0
    inbound_total: int = 0
    credited: int = 0
    proof_verified: bool = False

    @property
    def ok(self) -> bool:
        return self.rejected_stage is None

    def log(self, stage: str, msg: str) -> None:
        self.trace.append(f"{stage:<17} {msg}")

    def reject(self, stage: str, msg: str) -> "SettlementResult":
        self.rejected_stage, self.rejection = stage, msg
        self.log(stage, f"REJECTED {msg}")
        return self


def _demo_keys(seed: int) -> dict[str, KeyPair]:
    return {name: KeyPair.from_seed(f"por-demo/{seed}/{name}") for name in ("outbound", "relay", "inbound", "validator")}


def _demo_chain(keys: dict[str, KeyPair]) -> Chain:
    registry = StakeRegistry()
    registry.add("validator", 100, [True] * WINDOW)
    # the relay stakes too, so the chain stays live once the validator's own availability decays
    registry.add("relay", 50, [True] * WINDOW)
    return Chain(registry, {k: v.public for k, v in keys.items()}, workload_params())


def run_settlement(n: int, seed: int = 0, tamper: str | None = None,
                   cost_coefficient: int = por.DEFAULT_COEFFICIENT) -> SettlementResult:
    if not 1 <= n <= MAX_MESSAGES:
        raise ValueError(f"message count must be in 1..{MAX_MESSAGES}")
    if tamper is not None and tamper not in TAMPER_STAGES:
        raise ValueError(f"unknown tamper point {tamper!r}")
    keys = _demo_keys(seed)
    return _round(_demo_chain(keys), keys, n, random.Random(seed), seed, 0, tamper, cost_coefficient)


def build_chain(blocks: int, n: int, seed: int = 0) -> Chain:
    """Run ``blocks`` honest settlement rounds of ``n`` messages on one chain."""
    if blocks < 1 or not 1 <= n <= MAX_MESSAGES:
        raise ValueError("need at least one block and 1..256 messages per block")
    keys = _demo_keys(seed)
    chain = _demo_chain(keys)
    rng = random.Random(seed)
    for b in range(blocks):
        res = _round(chain, keys, n, rng, seed, b, None, por.DEFAULT_COEFFICIENT)
        if not res.ok:
            raise RuntimeError(f"honest round {b} rejected at {res.rejected_stage}")
    return chain


def _round(chain: Chain, keys: dict[str, KeyPair], n: int, rng: random.Random, seed: int, round_no: int,
           tamper: str | None, cost_coefficient: int) -> SettlementResult:
    res = SettlementResult()
    directory = chain.directory
    members = {"outbound", "inbound"}
    out_ledger = por.OutboundLedger("outbound", keys["outbound"])
    relay_ledger = por.RelayLedger("relay", keys["relay"])
    in_ledger = por.InboundLedger("inbound", keys["inbound"])

    envs = []
    for i in range(n):
        payload = rng.randbytes(rng.randint(16, 512))
        eid = H(b"demo-event", u64(seed), u64(round_no), u64(i))
        env = por.assemble_outbound(eid, payload, keys["outbound"], outbound_id="outbound", room_id="demo-room")
        out_ledger.record(env)
        envs.append(env)
    res.outbound_total = sum(out_ledger.sent.values()) * cost_coefficient
    res.log("assemble", f"ok {n} envelopes, {sum(out_ledger.sent.values())} bytes")
    if tamper == "envelope":
        envs[0] = replace(envs[0], sig_out=_flip(envs[0].sig_out))

    endorsed = []
    try:
        for env in envs:
            e = por.relay_endorse(env, members, keys["relay"], relay_id="relay", next_hop="inbound", directory=directory)
            relay_ledger.record(e)
            endorsed.append(e)
    except por.PorError as exc:
        return res.reject(exc.stage, f"{type(exc).__name__}: {exc}")
    res.log("relay_endorse", f"ok {len(endorsed)} endorsed")
    if tamper == "relay":
        endorsed[0] = replace(endorsed[0], sig_relay=None)
    if tamper == "chain" and n > 1:
        # theft: reuse another message's hop signature instead of signing this one
        endorsed[0] = replace(endorsed[0], chain=endorsed[1].chain)
    elif tamper == "chain":
        endorsed[0] = replace(endorsed[0], chain=(replace(endorsed[0].chain[0], signature=endorsed[0].sig_out),))

    receipts = []
    now = 0
    try:
        for e in endorsed:
            por.inbound_accept(e, members, in_ledger, directory, now)
            res.inbound_total += e.message_size * cost_coefficient
            now += 1
            receipts += por.flush_receipts(in_ledger, now=now, cost_coefficient=cost_coefficient)
    except por.PorError as exc:
        return res.reject(exc.stage, f"{type(exc).__name__}: {exc}")
    res.log("inbound_accept", f"ok {len(endorsed)} accepted")
    res.log("inbound_chain", f"ok {len(endorsed)} chains verified")
    receipts += por.flush_receipts(in_ledger, now=now + por.RECEIPT_TIMEOUT_TICKS, cost_coefficient=cost_coefficient)
    res.log("build_receipt", f"ok {len(receipts)} receipt(s), sizes {[len(r.event_ids) for r in receipts]}")
    if tamper == "receipt":
        receipts[0] = replace(receipts[0], sig_in=_flip(receipts[0].sig_in))

    try:
        bill = por.compile_bill(receipts, relay_ledger, directory)
    except por.PorError as exc:
        return res.reject(exc.stage, f"{type(exc).__name__}: {exc}")
    res.relay_total = bill.total_millis
    res.log("compile_bill", f"ok total {bill.total_millis / por.COEFF_SCALE:.3f}")
    if tamper == "bill":
        sec = bill.sections[0]
        lines = list(sec.lines)
        lines[0] = (lines[0][0], lines[0][1] + 1)
        bill = replace(bill, sections=(replace(sec, lines=tuple(lines)),) + bill.sections[1:])
        bill = replace(bill, sig_relay=sign(keys["relay"].secret, H(bill.body())))

    try:
        bill = por.outbound_endorse(bill, out_ledger, directory)
    except por.PorError as exc:
        return res.reject(exc.stage, f"{type(exc).__name__}: {exc}")
    res.log("outbound_endorse", f"ok outbound total {res.outbound_total / por.COEFF_SCALE:.3f}")

    epoch = por.WorkloadEpoch(round_no, workload_params())
    for e in endorsed:
        por.record_relay(epoch, e)
    res.log("record_relay", f"ok fill {epoch.fill}/{EPOCH_CAPACITY}")
    wp = por.prove_workload(epoch, chain.state.randao.seed)
    res.log("prove_workload", f"ok {len(wp.proof.indices)} sampled slot(s)")
    if tamper == "proof":
        p = wp.proof
        forged = (p.values[0] + 1,) + p.values[1:]
        wp = replace(wp, proof=SubvectorProof(p.indices, forged, p.witness))
    res.proof_verified = por.verify_workload(workload_params(), wp, chain.state.randao.seed)

    sub = PorSubmission("relay", wp, (bill,))
    proposer = chain.selected()
    block, results = chain.produce_block(keys[proposer], proposer, [sub],
                                         {proposer: randao_reveal(keys[proposer], chain.state.randao.epoch)})
    if not results[0].accepted:
        return res.reject("assess_por", f"reason={results[0].reason}")
    res.log("assess_por", f"ok proof verified={res.proof_verified}")
    res.credited = chain.balance("relay")
    res.log("produce_block", f"ok height {block.height} root {block.state_root.hex()[:16]} "
                             f"credited {res.credited / por.COEFF_SCALE:.3f}")
    return res
