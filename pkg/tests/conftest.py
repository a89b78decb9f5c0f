import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from tangletrust.ledger import Account, Ledger, LedgerConfig, rep_event_payload, rep_request_payload  # noqa: E402
from tangletrust.tangle import MessageKind  # noqa: E402
from tangletrust.trade import Bundle, escrow_address  # noqa: E402
from tangletrust.weakreq import ProfitabilityPolicy  # noqa: E402

SMALL = LedgerConfig(min_pow_bits=2, d=6, F=2, coinbase=50, onboarding_bits=2, onboarding_burn=1)


# one "PASS/FAIL criterion N: ..." line per acceptance check, echoed in the terminal summary
VERDICTS = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical or scenario tests")


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda v: int(v.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def ledger():
    return Ledger(SMALL, seed=11)


@pytest.fixture
def accounts():
    return {name: Account.derive(f"test/{name}") for name in ("alice", "bob", "carol", "dave", "miner")}


@pytest.fixture
def funded(ledger, accounts):
    for name, acct in accounts.items():
        ledger.endow(acct.node_id, 1000)
    return ledger


def mine(ledger, miner, blocks=1, policy=ProfitabilityPolicy()):
    out = []
    for _ in range(blocks):
        ledger.now += 1
        out.append(ledger.mine(miner, policy))
    return out


def run_trade(ledger, buyer, seller, price=9, rating=800):
    N = MessageKind.NORMAL
    sid = ledger.issue(buyer, N, rep_request_payload(seller.node_id, price)).id
    ledger.issue(seller, N, rep_event_payload("ack", sid))
    lock = buyer.wallet.pay(ledger.utxo, [(escrow_address(sid), price)])
    ledger.issue(buyer, N, rep_event_payload("lock", sid, bundle=lock))
    ledger.issue(seller, N, rep_event_payload("deliver", sid))
    s = ledger.sessions[sid]
    rel = Bundle((s.escrow_outpoint,), ((seller.node_id, price),)).signed_by(buyer.keys)
    ledger.issue(buyer, N, rep_event_payload("release", sid, bundle=rel))
    ledger.issue(buyer, N, rep_event_payload("feedback", sid, rating=rating))
    return sid
