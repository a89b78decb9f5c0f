from dataclasses import replace

import pytest

from conftest import SMALL, mine, run_trade
from tangletrust.chain import dumb_payload
from tangletrust.ledger import AdmissionError, Account, Ledger, rep_claim_payload
from tangletrust.reputation import InteractionGraph, aggregate_average, netflow_score
from tangletrust.tangle import MessageKind
from tangletrust.weakreq import create_pob, make_request, make_weakreq_message, miner_serve


def busy_ledger(funded, accounts):
    a, b, c, m = (accounts[k] for k in ("alice", "bob", "carol", "miner"))
    mine(funded, m, 3)
    run_trade(funded, a, b, 9, 900)
    run_trade(funded, c, b, 4, 300)
    req = make_request(a.keys, 40, 4, create_pob(a.wallet, 4, funded))
    funded.broadcast_request(req)
    mine(funded, m)
    miner_serve(m, funded, make_weakreq_message(a.wallet, funded.utxo, req, m.node_id, 1))
    return funded


def test_snapshot_reload_reproduces_state(funded, accounts, tmp_path):
    ledger = busy_ledger(funded, accounts)
    path = tmp_path / "ledger.snapshot"
    ledger.save(path)
    again = Ledger.load(path)
    assert again.state_digest() == ledger.state_digest()
    assert again.snapshot_text() == ledger.snapshot_text()
    assert len(again.feedback) == 2 and again.served_indices(next(iter(ledger.served))) == [1]


def test_snapshot_rejects_unknown_records():
    with pytest.raises(ValueError, match="unknown record"):
        Ledger.from_lines(['{"kind": "mystery"}'])


def test_supply_is_conserved(funded, accounts):
    ledger = busy_ledger(funded, accounts)
    assert ledger.supply_ok()
    assert ledger.utxo.burned > 0 and len(ledger.coinbases) == 4


def test_issue_follows_seq_after_bare_key_publication(funded, accounts):
    a = accounts["alice"]
    create_pob(a.wallet, 3, funded)
    funded.issue(a, MessageKind.NORMAL, ("note",))
    assert funded.tangle.last_seq[a.node_id] == a.seq


def test_kind_and_payload_must_agree(ledger, accounts):
    m = accounts["miner"]
    mine(ledger, m)
    with pytest.raises(AdmissionError, match="BadKind"):
        ledger.issue(m, MessageKind.NORMAL, dumb_payload(0, ledger.chain.path(ledger.canonical_tip.id)[0].id))
    with pytest.raises(AdmissionError, match="BadKind"):
        ledger.issue(m, MessageKind.DUMB, ("note",), bits=ledger.relaxed_bits)
    with pytest.raises(AdmissionError, match="BadDumbAnchor"):
        ledger.issue(m, MessageKind.DUMB, dumb_payload(0, b"\x00" * 64), bits=ledger.relaxed_bits)
    assert ledger.rejections["BadKind"] == 2


def test_newcomer_starts_at_zero_and_old_history_stays(funded, accounts):
    a, b, c = accounts["alice"], accounts["bob"], accounts["carol"]
    run_trade(funded, a, b, 9, 100)
    funded.register(b, "shop")
    old_feedback = list(funded.feedback)
    fresh = Account.derive("test/fresh-bob")
    funded.endow(fresh.node_id, 10)
    funded.register(fresh, "shop")
    assert funded.registry.discover("shop") == [b.node_id, fresh.node_id]
    mine_fb = [f for f in funded.feedback if f.subject == fresh.node_id]
    assert aggregate_average(mine_fb) == 0.0
    graph = InteractionGraph.from_feedback(funded.feedback)
    assert netflow_score(graph, c.node_id, fresh.node_id) == 0.0
    assert funded.feedback == old_feedback
    with pytest.raises(AdmissionError, match="DuplicateIdentity"):
        funded.register(fresh, "shop")


def test_onboarding_floor(funded, accounts):
    with pytest.raises(AdmissionError, match="WeakOnboarding"):
        funded.register(accounts["dave"], "shop", bits=0)


def test_unprotected_ledger_accepts_bare_claims(accounts):
    ledger = Ledger(replace(SMALL, protected=False))
    a, b = accounts["alice"], accounts["bob"]
    ledger.issue(a, MessageKind.NORMAL, rep_claim_payload(b.node_id, 0, 50))
    assert ledger.feedback[-1].payment_ref is None
    with pytest.raises(AdmissionError, match="Malformed"):
        ledger.issue(a, MessageKind.NORMAL, rep_claim_payload(a.node_id, 0, 50))
