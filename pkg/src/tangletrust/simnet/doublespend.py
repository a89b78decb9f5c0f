"""Scripted double spend on a real Tangle, with and without miner dumb-message inflow.

An honest payment D and the attacker's conflicting D' spend the same output.
Honest issuers saw D first and never approve anything that descends from D';
the attacker builds only on D'. Weight then decides the conflict.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import List, Optional, Sequence

from ..core import KeyPair, digest, encode
from ..tangle import MessageKind, TangleState, genesis_message, make_message, resolve_conflicts, select_tips
from ..trade import Bundle


@dataclass(frozen=True)
class DoubleSpendConfig:
    honest_rate: int = 1  # honest messages per tick
    attacker_rate: int = 3
    dumb_rate: int = 6  # miner dumb messages per tick when enabled
    ticks: int = 30
    pow_bits: int = 2
    threshold: int = 10


@dataclass
class DoubleSpendResult:
    seed: int
    dumb: bool
    winner: Optional[str]  # "honest", "attacker" or None when undecided
    honest_weight: int
    attacker_weight: int
    messages: int


def _bundle(keys: KeyPair, outpoint, payee: bytes, amount: int) -> Bundle:
    return Bundle((outpoint,), ((payee, amount),)).signed_by(keys)


def run_double_spend(seed: int, with_dumb: bool, cfg: DoubleSpendConfig = DoubleSpendConfig()) -> DoubleSpendResult:
    rng = random.Random(f"doublespend/{seed}")
    state = TangleState(genesis_message(f"ds-{seed}"), weight_mode="lazy", min_pow_bits=cfg.pow_bits)
    seqs = {}

    def emit(keys: KeyPair, kind: MessageKind, payload, parents) -> bytes:
        seq = seqs.get(keys.node_id, 0) + 1
        msg = make_message(keys, kind, parents, payload, seq, tick, cfg.pow_bits)
        state.attach(msg)
        seqs[keys.node_id] = seq
        return msg.id

    attacker = KeyPair.derive(f"ds-attacker-{seed}")
    merchant = KeyPair.derive(f"ds-merchant-{seed}")
    honest = [KeyPair.derive(f"ds-honest-{seed}", i) for i in range(4)]
    miners = [KeyPair.derive(f"ds-miner-{seed}", i) for i in range(2)]
    coin = (digest(encode(("ds-coin", seed))), 0)

    tainted = set()  # descendants of D', which honest issuers refuse to approve

    def honest_eligible(tip):
        return tip not in tainted

    def attacker_eligible(tip):
        return tip in tainted

    def track(msg_id, parents):
        if any(p in tainted for p in parents):
            tainted.add(msg_id)

    tick = 0
    # a little honest history before the payment
    for _ in range(6):
        parents = select_tips(state, rng)
        track(emit(rng.choice(honest), MessageKind.NORMAL, ("note", rng.getrandbits(32)), parents), parents)
    tick = 1
    parents = select_tips(state, rng)
    parents2 = select_tips(state, rng)  # D' is prepared from the same view of the Tangle
    d_id = emit(attacker, MessageKind.NORMAL, _bundle(attacker, coin, merchant.node_id, 10).fields(), parents)
    parents = parents2
    d2_id = emit(attacker, MessageKind.NORMAL, _bundle(attacker, coin, attacker.node_id, 10).fields(), parents)
    tainted.add(d2_id)

    for tick in range(2, cfg.ticks + 2):
        batch = [("honest", i) for i in range(cfg.honest_rate)]
        batch += [("attacker", i) for i in range(cfg.attacker_rate)]
        if with_dumb:
            batch += [("miner", i) for i in range(cfg.dumb_rate)]
        rng.shuffle(batch)
        for role, _ in batch:
            if role == "attacker":
                parents = select_tips(state, rng, eligible=attacker_eligible)
                track(emit(attacker, MessageKind.NORMAL, ("note", rng.getrandbits(32)), parents), parents)
            elif role == "honest":
                parents = select_tips(state, rng, eligible=honest_eligible)
                track(emit(rng.choice(honest), MessageKind.NORMAL, ("note", rng.getrandbits(32)), parents), parents)
            else:
                parents = select_tips(state, rng, eligible=honest_eligible)
                track(emit(rng.choice(miners), MessageKind.DUMB, (), parents), parents)

    resolution = resolve_conflicts(state, cfg.threshold)
    winner_id = next(iter(resolution.values())) if resolution else None
    winner = None if winner_id is None else ("honest" if winner_id == d_id else "attacker")
    return DoubleSpendResult(seed, with_dumb, winner, state.cumulative_weight(d_id),
                             state.cumulative_weight(d2_id), len(state.messages))


def sweep(seeds: Sequence[int], with_dumb: bool, cfg: DoubleSpendConfig = DoubleSpendConfig()) -> List[DoubleSpendResult]:
    return [run_double_spend(s, with_dumb, cfg) for s in seeds]
