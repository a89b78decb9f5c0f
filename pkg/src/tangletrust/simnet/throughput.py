"""Confirmed throughput against node count, with real PoW scheduled on simulated hash rates.

Each node picks tips, solves a real SHA3 puzzle and attaches the message once
``attempts / hash_rate`` simulated ticks have passed. Tips are read at the
moment work starts, so slow solvers approve stale tips just as in a live
network.
"""
from __future__ import annotations

import heapq
import random
from dataclasses import dataclass
from typing import Dict, Sequence

from ..core import KeyPair
from ..tangle import MessageKind, TangleState, genesis_message, make_message, select_tips


@dataclass(frozen=True)
class ThroughputConfig:
    pow_bits: int = 8
    hash_rate: float = 256.0  # attempts per tick per node
    duration: float = 300.0
    threshold: int = 10


def _attempts(msg) -> int:
    # solver starts at nonce 0, so the winning nonce counts the hashes spent
    return msg.pow.nonce + 1


def confirmed_tps(k: int, seed: int = 0, cfg: ThroughputConfig = ThroughputConfig()) -> float:
    rng = random.Random(f"throughput/{k}/{seed}")
    state = TangleState(genesis_message(f"tput-{seed}"), weight_mode="lazy", min_pow_bits=cfg.pow_bits)
    nodes = [KeyPair.derive(f"tput-{seed}", i) for i in range(k)]
    seq = [0] * k
    queue = []  # (finish time, node index, message)

    def start(i: int, now: float) -> None:
        parents = select_tips(state, rng)
        seq[i] += 1
        msg = make_message(nodes[i], MessageKind.NORMAL, parents, ("tx", i, seq[i]), seq[i], int(now), cfg.pow_bits)
        heapq.heappush(queue, (now + _attempts(msg) / cfg.hash_rate, i, msg))

    for i in range(k):
        start(i, rng.random())  # staggered start
    while queue:
        t, i, msg = heapq.heappop(queue)
        if t > cfg.duration:
            break
        state.attach(msg)
        start(i, t)
    weights = state.all_weights()
    confirmed = sum(1 for mid, w in weights.items() if w >= cfg.threshold and mid != state.genesis_id)
    return confirmed / cfg.duration


def scaling(ks: Sequence[int] = (1, 2, 5, 10), seed: int = 0, cfg: ThroughputConfig = ThroughputConfig()) -> Dict[int, float]:
    return {k: confirmed_tps(k, seed, cfg) for k in ks}
