"""Wall-clock throughput of real message production on this host.

``pow15`` and ``pow20`` issue Tangle messages: pick two tips, solve SHA3-512
PoW at 15 or 20 leading zero bits, sign, then validate and attach. ``weakreq``
has a device sign a fee-carrying message for an already anchored request and
the miner validate it and settle the fee; no PoW and no tip selection.
"""
from __future__ import annotations

import random
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

from .core import KeyPair, PowInterrupted
from .ledger import Account, Ledger, LedgerConfig
from .tangle import MessageKind, TangleState, genesis_message, make_message, select_tips
from .weakreq import ProfitabilityPolicy, create_pob, make_request, make_weakreq_message, validate_weakreq_message


class UsageError(ValueError):
    pass


class MessageClass(str, Enum):
    POW15 = "pow15"
    POW20 = "pow20"
    WEAKREQ = "weakreq"

    @property
    def bits(self) -> int:
        return {"pow15": 15, "pow20": 20}.get(self.value, 0)


@dataclass(frozen=True)
class BenchSpec:
    message_class: MessageClass
    node_count: int = 1
    duration: float = 5.0
    seed: int = 0

    def validate(self) -> "BenchSpec":
        if self.node_count < 1:
            raise UsageError("node_count must be at least 1")
        if not self.duration > 0:
            raise UsageError("duration must be positive")
        return self


@dataclass(frozen=True)
class BenchResult:
    message_class: MessageClass
    nodes: int
    messages: int
    tps: float

    def csv_row(self) -> str:
        return f"{self.message_class.value},{self.nodes},{self.tps!r}"


def _pow_worker(bits: int, label: str, seconds: float) -> Tuple[int, float]:
    rng = random.Random(label)
    state = TangleState(genesis_message("bench"), min_pow_bits=bits, weight_mode="lazy")
    keys = KeyPair.derive(label)
    start = time.perf_counter()
    deadline = start + seconds
    count = 0
    while time.perf_counter() < deadline:
        parents = select_tips(state, rng)
        try:
            msg = make_message(keys, MessageKind.NORMAL, parents, ("bench", count), count + 1, count, bits,
                               start_nonce=rng.getrandbits(32),
                               should_stop=lambda: time.perf_counter() >= deadline)
        except PowInterrupted:
            break
        state.attach(msg)
        count += 1
    return count, time.perf_counter() - start


def _weakreq_worker(label: str, seconds: float) -> Tuple[int, float]:
    ledger = Ledger(LedgerConfig(min_pow_bits=0, d=4, F=1))
    miner = Account.derive(label + "/miner")
    device = Account.derive(label + "/device")
    n_msg = 1 << 30
    ledger.endow(device.node_id, 1 << 40)
    pob = create_pob(device.wallet, n_msg, ledger)
    req = make_request(device.keys, n_msg, n_msg, pob)
    ledger.broadcast_request(req)
    ledger.mine(miner, ProfitabilityPolicy(1))
    _, block = ledger.anchored_request(req.id)
    served: set = set()
    start = time.perf_counter()
    deadline = start + seconds
    count = 0
    while time.perf_counter() < deadline:
        msg = make_weakreq_message(device.wallet, ledger.utxo, req, block.miner, count + 1, ("reading", count))
        if not validate_weakreq_message(msg, req, block.miner, served, ledger.utxo):
            raise RuntimeError("bench produced an invalid WeakReq message")
        ledger.utxo.apply(msg.bundle)
        served.add(msg.index)
        count += 1
    return count, time.perf_counter() - start


def _worker(cls_value: str, label: str, seconds: float) -> Tuple[int, float]:
    cls = MessageClass(cls_value)
    if cls is MessageClass.WEAKREQ:
        return _weakreq_worker(label, seconds)
    return _pow_worker(cls.bits, label, seconds)


def run_bench(spec: BenchSpec) -> BenchResult:
    """Aggregate TPS is the sum of per-node rates, each timed over its own issuing loop."""
    spec.validate()
    labels = [f"bench/{spec.seed}/{i}" for i in range(spec.node_count)]
    if spec.node_count == 1:
        runs = [_worker(spec.message_class.value, labels[0], spec.duration)]
    else:
        with ProcessPoolExecutor(max_workers=spec.node_count) as pool:
            futures = [pool.submit(_worker, spec.message_class.value, lbl, spec.duration) for lbl in labels]
            runs = [f.result() for f in futures]
    tps = sum(n / max(secs, spec.duration) for n, secs in runs)
    return BenchResult(spec.message_class, spec.node_count, sum(n for n, _ in runs), tps)
