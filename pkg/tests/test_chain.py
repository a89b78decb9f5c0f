import random
import statistics
from dataclasses import replace

import pytest

from conftest import SMALL, mine
from oracles import window_heights
from tangletrust.chain import (
    Block,
    ChainState,
    DifficultyParams,
    InvalidRelaxation,
    MiningInterrupted,
    NoEligibleWindow,
    accumulated_attempts,
    dumb_payload,
    eligible_dumb_refs,
    fork_choice,
    mine_block,
    relaxed_target,
    validate_block,
    window_for,
)
from tangletrust.core import pow_solve
from tangletrust.ledger import Account, Ledger
from tangletrust.tangle import MessageKind
from tangletrust.weakreq import ProfitabilityPolicy, create_pob, make_request, make_weakreq_message, miner_serve


def forge(ledger, miner, refs, parent=None, reqs=()):
    parent = parent or ledger.canonical_tip
    bits = ledger.relaxed_bits
    b = Block(parent.height + 1, parent.id, tuple(refs), tuple(reqs), ledger.params.coinbase, miner.node_id, bits)
    sol = pow_solve(b.pow_payload, bits)
    return replace(b, nonce=sol.nonce, header_hash=sol.digest)


def dumb(ledger, miner, height, bits=None):
    anchor = ledger.chain.path(ledger.canonical_tip.id)[height].id
    return ledger.issue(miner, MessageKind.DUMB, dumb_payload(height, anchor),
                        bits=ledger.relaxed_bits if bits is None else bits).id


def check(ledger, block):
    return validate_block(block, ledger.tangle, ledger.chain, ledger.params, ledger.utxo)


# -- difficulty relaxation ------------------------------------------------------

def test_relaxation_matches_published_example():
    assert relaxed_target(DifficultyParams(20, 16)) == (16, 16)


def test_unit_relaxation_is_identity():
    assert relaxed_target(DifficultyParams(20, 1)) == (20, 1)


@pytest.mark.parametrize("d,F", [(20, 3), (20, 0), (4, 16), (3, 8)])
def test_bad_relaxations(d, F):
    with pytest.raises(InvalidRelaxation):
        relaxed_target(DifficultyParams(d, F))


def test_expected_work_is_conserved_at_small_difficulty():
    d = 8
    targets = [(d - k, 1 << k) for k in range(5)]
    runs = [accumulated_attempts(b"cons-unit/%d" % i, targets) for i in range(2000)]
    means = [statistics.fmean(r[j] for r in runs) for j in range(len(targets))]
    for m in means[1:]:
        assert abs(m / means[0] - 1) <= 0.10


# -- windows --------------------------------------------------------------------

@pytest.mark.parametrize("n", range(2, 30))
def test_window_for_n_plus_two(n):
    assert window_for(n + 2) == {n - 2, n - 1, n}


def test_window_bootstrap_and_genesis():
    assert window_for(1) == {0}
    with pytest.raises(NoEligibleWindow):
        window_for(0)


def test_windows_match_oracle_and_overlap_by_two():
    for h in range(1, 51):
        assert window_for(h) == window_heights(h)
    for h in range(4, 50):
        assert len(window_for(h) & window_for(h + 1)) == 2
        assert window_for(h) - window_for(h + 1) == {h - 4}
        assert h - 1 not in window_for(h)


# -- block assembly and validation -----------------------------------------------

def test_empty_mempool_block_has_exactly_N_refs():
    ledger = Ledger(replace(SMALL, F=4))
    miner = Account.derive("m")
    block = mine(ledger, miner)[0]
    assert len(block.dumb_refs) == 4 and block.weakreq_reqs == ()
    assert check(Ledger(replace(SMALL, F=4)), block).reason == "UnknownDumbRef"


def test_profitability_policy_filters_requests(funded, accounts):
    ledger = funded
    dev = accounts["alice"]
    ledger.endow(dev.node_id, 100)
    cheap_pob = create_pob(dev.wallet, 1000, ledger)
    good_pob = create_pob(dev.wallet, 10, ledger)
    good = make_request(dev.keys, 100, 10, good_pob)
    cheap = make_request(dev.keys, 1, 1000, cheap_pob)
    ledger.broadcast_request(good)
    ledger.broadcast_request(cheap)
    block = mine(ledger, accounts["miner"], policy=ProfitabilityPolicy(1))[0]
    assert block.weakreq_reqs == (good,)


def test_insufficient_dumb_work(ledger, accounts):
    m = accounts["miner"]
    mine(ledger, m, 2)
    ref = dumb(ledger, m, 0)
    assert check(ledger, forge(ledger, m, [ref])).reason == "InsufficientDumbWork"


def test_reusing_parent_ref_is_rejected(ledger, accounts):
    m = accounts["miner"]
    mine(ledger, m, 2)
    parent = ledger.canonical_tip
    h = parent.height + 1
    fresh = dumb(ledger, m, h - 2)
    old_in_window = [r for b in ledger.chain.path(parent.id) for r in b.dumb_refs
                     if ledger.tangle.messages[r].payload[1] in window_for(h)]
    block = forge(ledger, m, [old_in_window[0], fresh])
    assert check(ledger, block).reason == "DumbRefReuse"


def test_ref_from_previous_height_is_outside_window(ledger, accounts):
    m = accounts["miner"]
    mine(ledger, m, 3)
    h = ledger.canonical_tip.height + 1
    good = dumb(ledger, m, h - 2)
    late = dumb(ledger, m, h - 1)
    assert check(ledger, forge(ledger, m, [good, late])).reason == "OutsideWindow"
    ok = forge(ledger, m, [good, dumb(ledger, m, h - 3)])
    assert check(ledger, ok)


def test_foreign_weak_and_non_dumb_refs(ledger, accounts):
    m, other = accounts["miner"], accounts["bob"]
    mine(ledger, m, 2)
    h = ledger.canonical_tip.height + 1
    mine_ref = dumb(ledger, m, h - 2)
    assert check(ledger, forge(ledger, m, [mine_ref, dumb(ledger, other, h - 2)])).reason == "ForeignDumbRef"
    normal = ledger.issue(m, MessageKind.NORMAL, ("note",)).id
    assert check(ledger, forge(ledger, m, [mine_ref, normal])).reason == "NotDumb"
    bad_pow = replace(forge(ledger, m, [mine_ref, dumb(ledger, m, h - 3)]), nonce=0)
    assert check(ledger, bad_pow).reason == "BadHeaderPow"


def test_heavier_fork_wins_at_equal_length(ledger, accounts):
    a, b = accounts["alice"], accounts["bob"]
    mine(ledger, accounts["miner"], 2)
    parent = ledger.canonical_tip
    h = parent.height + 1
    light = forge(ledger, a, [dumb(ledger, a, h - 2), dumb(ledger, a, h - 3)], parent)
    heavy_bits = ledger.relaxed_bits + 3
    heavy = forge(ledger, b, [dumb(ledger, b, h - 2, heavy_bits), dumb(ledger, b, h - 3, heavy_bits)], parent)
    ledger.submit_block(light)
    assert fork_choice(ledger.chain).id == light.id
    ledger.submit_block(heavy)
    assert light.height == heavy.height
    assert fork_choice(ledger.chain).id == heavy.id


def test_single_chain_fork_choice_is_tip(ledger, accounts):
    blocks = mine(ledger, accounts["miner"], 4)
    assert fork_choice(ledger.chain).id == blocks[-1].id


def test_losing_miner_keeps_all_but_oldest_window_height(ledger, accounts):
    winner, loser = accounts["miner"], accounts["carol"]
    mine(ledger, winner, 5)
    parent = ledger.canonical_tip
    h = parent.height + 1
    refs = {x: dumb(ledger, loser, x) for x in sorted(window_for(h))}
    bits = ledger.relaxed_bits
    before = eligible_dumb_refs(ledger.tangle, ledger.chain, parent, loser.node_id, bits)
    assert set(before) == set(refs.values())
    new_tip = mine(ledger, winner)[0]
    after = eligible_dumb_refs(ledger.tangle, ledger.chain, new_tip, loser.node_id, bits)
    assert set(after) == {refs[x] for x in window_for(h + 1) & set(refs)}
    assert set(before) - set(after) == {refs[h - 4]}


def test_canonical_chain_replays_valid(ledger, accounts):
    rng = random.Random(5)
    miners = [accounts[n] for n in ("miner", "alice", "bob")]
    for _ in range(12):
        tip = ledger.canonical_tip
        parent = tip if tip.height < 2 or rng.random() < 0.7 else ledger.chain.blocks[tip.prev_hash]
        ledger.now += 1
        ledger.mine(rng.choice(miners), parent=parent)
    path = ledger.chain.path(ledger.canonical_tip.id)
    replay = ChainState()
    for block in path[1:]:
        assert validate_block(block, ledger.tangle, replay, ledger.params)
        replay.add(block, 0)


def test_miner_income_is_coinbase_plus_fee_shares(funded, accounts):
    ledger = funded
    miner, dev = accounts["miner"], accounts["dave"]
    start = ledger.utxo.balance(miner.node_id)
    pob = create_pob(dev.wallet, 10, ledger)
    req = make_request(dev.keys, 100, 10, pob)
    ledger.broadcast_request(req)
    blocks = mine(ledger, miner, 3)
    for i in range(1, 7):
        miner_serve(miner, ledger, make_weakreq_message(dev.wallet, ledger.utxo, req, miner.node_id, i))
    assert ledger.utxo.balance(miner.node_id) - start == 50 * len(blocks) + 6 * 10
    assert ledger.supply_ok()


def test_mining_can_be_interrupted(ledger, accounts):
    m = accounts["miner"]
    with pytest.raises(MiningInterrupted):
        mine_block([], ledger.tangle, DifficultyParams(24, 1), m, random.Random(0), ledger.chain,
                   issue_dumb=lambda h, a: ledger.issue(m, MessageKind.DUMB, dumb_payload(h, a), bits=0),
                   should_stop=lambda: True)


def test_block_round_trip(ledger, accounts):
    block = mine(ledger, accounts["miner"])[0]
    assert Block.from_bytes(block.raw) == block
