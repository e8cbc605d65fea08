import math
import random
from dataclasses import replace

import pytest

from sendnet import kzg, por
from sendnet.encoding import H, u64
from sendnet.identity import KeyPair
from sendnet.poa import (
    BlockRejected,
    Chain,
    NoEligibleValidator,
    PorSubmission,
    RandaoState,
    StakeRegistry,
    WINDOW,
    assess_por,
    availability_score,
    mix_reveals,
    node_key,
    randao_reveal,
    select_validator,
)
from sendnet.verkle import (
    Account,
    VerkleTree,
    default_params,
    verkle_prove,
    verkle_update,
    verkle_verify,
)

# --- verkle ---


def rand_keys(n, seed):
    rng = random.Random(seed)
    return [rng.randbytes(32) for _ in range(n)]


def walk_inners(node):
    yield node
    for c in getattr(node, "children", {}).values():
        if hasattr(c, "children"):
            yield from walk_inners(c)


def test_single_leaf_round_trip():
    t = VerkleTree()
    k = b"\x11" * 32
    verkle_update(t, k, Account(5, 1))
    assert verkle_verify(t.root_digest(), k, Account(5, 1), verkle_prove(t, k))
    assert not verkle_verify(t.root_digest(), k, Account(6, 1), verkle_prove(t, k))


def test_empty_tree_proves_absence():
    t = VerkleTree()
    k = b"\x01" * 32
    assert verkle_verify(t.root_digest(), k, None, verkle_prove(t, k))


def test_inner_commitments_match_recommit():
    t = VerkleTree()
    for i, k in enumerate(rand_keys(80, 1)):
        t.update(k, Account(i))
    params = default_params()
    for inner in walk_inners(t.root):
        expect = [0] * 16
        for slot, child in inner.children.items():
            expect[slot] = child.digest()
        assert inner.values == expect
        assert inner.commitment == kzg.commit_vector(params, expect)


def test_root_independent_of_insert_order():
    keys = rand_keys(60, 2)
    a, b = VerkleTree(), VerkleTree()
    for i, k in enumerate(keys):
        a.update(k, Account(i))
    order = list(enumerate(keys))
    random.Random(3).shuffle(order)
    for i, k in order:
        b.update(k, Account(i))
    assert a.root_digest() == b.root_digest()


def test_root_changes_iff_leaf_changes():
    t = VerkleTree()
    k = rand_keys(1, 4)[0]
    t.update(k, Account(1))
    r = t.root_digest()
    t.update(k, Account(1))
    assert t.root_digest() == r
    t.update(k, Account(2))
    assert t.root_digest() != r


def test_stale_proof_fails_after_other_update():
    t = VerkleTree()
    keys = rand_keys(30, 5)
    for i, k in enumerate(keys):
        t.update(k, Account(i))
    old = verkle_prove(t, keys[0])
    t.update(keys[1], Account(999))
    assert not verkle_verify(t.root_digest(), keys[0], Account(0), old)
    assert verkle_verify(t.root_digest(), keys[0], Account(0), verkle_prove(t, keys[0]))


def test_nibble_corruption_fails():
    t = VerkleTree()
    keys = rand_keys(50, 6)
    for i, k in enumerate(keys):
        t.update(k, Account(i))
    rng = random.Random(7)
    for i in range(20):
        p = verkle_prove(t, keys[i])
        lvl = rng.randrange(len(p.levels))
        levels = list(p.levels)
        levels[lvl] = replace(levels[lvl], nibble=(levels[lvl].nibble + rng.randint(1, 15)) % 16)
        assert not verkle_verify(t.root_digest(), keys[i], Account(i), replace(p, levels=tuple(levels)))


def test_soundness_absent_pairs_100_probes():
    t = VerkleTree()
    keys = rand_keys(40, 8)
    for i, k in enumerate(keys):
        t.update(k, Account(i))
    rng = random.Random(9)
    root = t.root_digest()
    accepted = 0
    for _ in range(100):
        if rng.random() < 0.5:
            # a present key with the wrong account
            i = rng.randrange(len(keys))
            accepted += verkle_verify(root, keys[i], Account(i + rng.randint(1, 9)), verkle_prove(t, keys[i]))
        else:
            # an absent key, using the proof for a neighbour or its own non-membership proof
            k = rng.randbytes(32)
            p = verkle_prove(t, k)
            accepted += verkle_verify(root, k, Account(0), p)
            accepted += verkle_verify(root, k, Account(0), verkle_prove(t, rng.choice(keys)))
            assert verkle_verify(root, k, None, p)
    assert accepted == 0


def test_present_key_cannot_prove_absence():
    t = VerkleTree()
    keys = rand_keys(10, 10)
    for i, k in enumerate(keys):
        t.update(k, Account(i))
    assert not verkle_verify(t.root_digest(), keys[0], None, verkle_prove(t, keys[0]))


# --- registry / selection ---


def test_availability_scores():
    reg = StakeRegistry()
    reg.add("a", 10, [True] * WINDOW)
    reg.add("b", 10)
    reg.add("c", 10, [True] * 8 + [False] * 24)
    assert availability_score(reg, "a") == 1.0
    assert availability_score(reg, "b") == 0.0
    assert availability_score(reg, "c") == 0.25
    # the window slides: older epochs fall off
    for _ in range(8):
        reg.record("c", False)
    assert availability_score(reg, "c") == 0.0


def test_single_staker_always_selected():
    reg = StakeRegistry()
    reg.add("only", 5, [True])
    for i in range(50):
        assert select_validator(reg, RandaoState(i, H(u64(i)))) == "only"


def test_zero_availability_never_selected():
    reg = StakeRegistry()
    reg.add("live", 5, [True] * 4)
    reg.add("dead", 1000)
    assert all(select_validator(reg, RandaoState(i, H(u64(i)))) == "live" for i in range(200))


def test_all_zero_weights():
    reg = StakeRegistry()
    reg.add("a", 0, [True] * WINDOW)
    with pytest.raises(NoEligibleValidator):
        select_validator(reg, RandaoState())


@pytest.mark.parametrize("stakes,avail", [((1, 1), (32, 32)), ((3, 1), (32, 32)), ((2, 5, 7), (32, 16, 9))])
def test_selection_frequency_within_3_sigma(stakes, avail):
    reg = StakeRegistry()
    names = [f"v{i}" for i in range(len(stakes))]
    for n, s, a in zip(names, stakes, avail):
        reg.add(n, s, [True] * a + [False] * (WINDOW - a))
    weights = [s * a for s, a in zip(stakes, avail)]
    total = sum(weights)
    trials = 10_000
    counts = dict.fromkeys(names, 0)
    for i in range(trials):
        counts[select_validator(reg, RandaoState(i, H(b"seed", u64(i))))] += 1
    for n, w in zip(names, weights):
        p = w / total
        assert abs(counts[n] - trials * p) <= 3 * math.sqrt(trials * p * (1 - p))


def test_randao_mix_order_independent_of_dict_order():
    r1 = mix_reveals(RandaoState(), {"a": b"1", "b": b"2"})
    r2 = mix_reveals(RandaoState(), {"b": b"2", "a": b"1"})
    assert r1 == r2 and r1.epoch == 1
    assert mix_reveals(RandaoState(), {"a": b"2", "b": b"1"}) != r1


# --- assessment and blocks ---

NODES = {n: KeyPair.from_seed(f"poa-test/{n}") for n in ("out", "relay", "in", "val", "val2")}
DIR = {k: v.public for k, v in NODES.items()}
WPARAMS = kzg.seeded_setup(32, b"poa-test-workload")


def make_submission(sizes, sample_seed, tag=b"", epoch_no=0):
    out = por.OutboundLedger("out", NODES["out"])
    relay = por.RelayLedger("relay", NODES["relay"])
    inbound = por.InboundLedger("in", NODES["in"])
    epoch = por.WorkloadEpoch(epoch_no, WPARAMS)
    for i, size in enumerate(sizes):
        env = por.assemble_outbound(H(b"poa", tag, u64(i)), b"z" * size, NODES["out"], outbound_id="out")
        out.record(env)
        e = por.relay_endorse(env, {"out", "in"}, NODES["relay"], relay_id="relay", next_hop="in", directory=DIR)
        relay.record(e)
        por.inbound_accept(e, {"out", "in"}, inbound, DIR)
        por.record_relay(epoch, e)
    receipts = por.flush_receipts(inbound, now=0, force=True)
    bill = por.outbound_endorse(por.compile_bill(receipts, relay, DIR), out, DIR)
    return PorSubmission("relay", por.prove_workload(epoch, sample_seed), (bill,))


def genesis_registry():
    reg = StakeRegistry()
    reg.add("val", 100, [True] * WINDOW)
    reg.add("val2", 1)
    return reg


def new_chain():
    return Chain(genesis_registry(), DIR, WPARAMS)


def reveals(epoch):
    return {"val": randao_reveal(NODES["val"], epoch)}


def test_honest_submission_accepted():
    chain = new_chain()
    sub = make_submission([10, 20, 30], chain.state.randao.seed)
    a = assess_por(sub, WPARAMS, DIR, set(), chain.state.randao.seed)
    assert a.accepted and a.amount_millis == 60 * por.COEFF_SCALE


def test_forged_bill_signature_rejected():
    chain = new_chain()
    sub = make_submission([10, 20], chain.state.randao.seed)
    bill = sub.bills[0]
    forged = replace(bill, sig_outbound=bill.sig_relay)
    a = assess_por(replace(sub, bills=(forged,)), WPARAMS, DIR, set(), chain.state.randao.seed)
    assert (a.accepted, a.reason) == (False, "signature")


def test_proof_from_other_seed_rejected():
    chain = new_chain()
    sub = make_submission([10, 20, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5], b"chosen by relay")
    a = assess_por(sub, WPARAMS, DIR, set(), chain.state.randao.seed)
    assert (a.accepted, a.reason) == (False, "proof")


def test_empty_block_keeps_root():
    chain = new_chain()
    root = chain.state_root
    block, _ = chain.produce_block(NODES["val"], "val", [], reveals(0))
    assert block.state_root == root and block.height == 1


def test_credit_of_1000_units_and_follower_agreement():
    leader, follower = new_chain(), new_chain()
    sub = make_submission([100] * 10, leader.state.randao.seed)
    assert sub.bills[0].total_millis == 1000 * por.COEFF_SCALE
    block, results = leader.produce_block(NODES["val"], "val", [sub], reveals(0))
    assert results[0].accepted
    assert leader.balance("relay") == 1000 * por.COEFF_SCALE
    follower.apply_block(block)
    assert follower.state_root == leader.state_root == block.state_root
    acct = follower.state.tree.get(node_key("relay"))
    assert acct == Account(1000 * por.COEFF_SCALE, 1)


def test_double_credit_rejected_any_pattern():
    chain = new_chain()
    seed = chain.state.randao.seed
    sub = make_submission([7, 8, 9], seed, b"a")
    other = make_submission([1, 2], seed, b"b")
    # same submission twice in one block: the second copy is dropped
    _, results = chain.produce_block(NODES["val"], "val", [sub, sub, other], reveals(0))
    assert [r.reason for r in results] == ["ok", "double-credit", "ok"]
    assert chain.balance("relay") == (24 + 3) * por.COEFF_SCALE
    # replaying the bill later, with a fresh proof for the new epoch seed, is still rejected
    seed = chain.state.randao.seed
    again = make_submission([7, 8, 9], seed, b"a")
    _, results = chain.produce_block(NODES["val"], "val", [again], reveals(1))
    assert results[0].reason == "double-credit"
    assert chain.balance("relay") == 27 * por.COEFF_SCALE


def test_block_from_wrong_validator_rejected():
    leader, follower = new_chain(), new_chain()
    with pytest.raises(BlockRejected):
        leader.produce_block(NODES["val2"], "val2", [], {})
    block, _ = leader.produce_block(NODES["val"], "val", [], reveals(0))
    forged = replace(block, validator="val2")
    with pytest.raises(BlockRejected):
        follower.apply_block(forged)
    follower.apply_block(block)
    assert follower.state.head == leader.state.head


def test_follower_rejects_tampered_root():
    leader, follower = new_chain(), new_chain()
    sub = make_submission([3, 4], leader.state.randao.seed)
    block, _ = leader.produce_block(NODES["val"], "val", [sub], reveals(0))
    from sendnet.identity import sign
    bad = replace(block, state_root=b"\x00" * 32)
    bad = replace(bad, signature=sign(NODES["val"].secret, H(bad.body())))
    with pytest.raises(BlockRejected):
        follower.apply_block(bad)


def test_chain_dump_lists_blocks_and_accounts():
    chain = new_chain()
    chain.produce_block(NODES["val"], "val", [], reveals(0))
    text = chain.dump()
    assert text.startswith("block 1 ")
    assert "account val " in text
