"""Hold-and-release balance attack against two honest mining camps.

The attacker owns ``alpha`` of the hash power and tries to keep two forks
level so honest power stays split. Camps see their own fork immediately and
the other fork with a lag. The two mining modes differ in what that lag is:

* ``wta`` (winner-take-all): blocks are the only carrier of work. The attacker
  controls cross-camp block delivery, so a camp learns about the other fork
  only ``delay`` ticks late, and blocks the attacker is holding are invisible
  until released.
* ``sw`` (sliding-window, semi-progressive): a block's work is the dumb
  messages it references, and those must sit on the Tangle before the block
  can use them. Tangle gossip reaches every node within ``tangle_latency``
  ticks, so each camp sees the other fork's work, held blocks included, almost
  in real time. Hits are accumulated toward ``F`` relaxed solutions per block
  and survive a camp switching forks.

Hash power is a per-tick Poisson rate; nothing is hashed for real.
"""
from __future__ import annotations

import random
import statistics
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

MODES = ("wta", "sw")


@dataclass(frozen=True)
class LivenessConfig:
    alpha: float = 0.20
    block_rate: float = 0.1  # expected blocks per tick, whole network
    F: int = 16
    delay: int = 60
    tangle_latency: int = 1
    max_ticks: int = 20_000
    horizon_blocks: int = 50


@dataclass
class LivenessResult:
    mode: str
    seed: int
    persistence: int  # ticks during which honest power stayed split
    collapsed: bool
    blocks_at_collapse: int
    honest_ahead_by: int  # block height by which the honest fork's work led the attacker's, -1 if never
    work: Dict[str, List[int]] = field(default_factory=dict)


def _poisson(rng: random.Random, lam: float) -> int:
    # Knuth; lam stays small here
    if lam <= 0:
        return 0
    limit, k, p = pow(2.718281828459045, -lam), 0, 1.0
    while True:
        p *= rng.random()
        if p <= limit:
            return k
        k += 1


def simulate(seed: int, mode: str, cfg: LivenessConfig = LivenessConfig()) -> LivenessResult:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    rng = random.Random(f"liveness/{mode}/{seed}")
    honest = (1.0 - cfg.alpha) / 2
    unit = cfg.F if mode == "sw" else 1
    rate = cfg.block_rate * unit  # hits per tick for the whole network
    lag = cfg.delay if mode == "wta" else cfg.tangle_latency

    # public[f][t]: work on fork f published by the end of tick t
    public = {"A": [0], "B": [0]}
    held = {"A": 0, "B": 0}
    camp_fork = ["A", "B"]
    hits = [0, 0, 0]  # two camps, then the attacker
    collapsed_at = None
    blocks = 0
    lead_height = -1
    for t in range(1, cfg.max_ticks + 1):
        cur = {f: public[f][-1] for f in public}
        # honest camps mine on their fork
        for c in (0, 1):
            hits[c] += _poisson(rng, honest * rate)
            while hits[c] >= unit:
                hits[c] -= unit
                cur[camp_fork[c]] += 1
                blocks += 1
        # attacker mines on whichever fork is behind once its own stash counts
        if collapsed_at is None:
            lagging = min(("A", "B"), key=lambda f: (cur[f] + held[f], f))
        else:
            lagging = "B" if camp_fork[0] == "A" else "A"
        hits[2] += _poisson(rng, cfg.alpha * rate)
        while hits[2] >= unit:
            hits[2] -= unit
            held[lagging] += 1
            blocks += 1
        # release just enough to level the public forks
        for f, g in (("A", "B"), ("B", "A")):
            gap = cur[g] - cur[f]
            if gap > 0 and held[f]:
                k = min(gap, held[f])
                held[f] -= k
                cur[f] += k
        if collapsed_at is not None:
            # the attacker keeps nothing back once honest power has merged
            cur[lagging] += held[lagging]
            held[lagging] = 0
        for f in public:
            public[f].append(cur[f])

        if collapsed_at is None:
            for c in (0, 1):
                mine = camp_fork[c]
                other = "B" if mine == "A" else "A"
                seen = public[other][max(0, t - lag)]
                if mode == "sw":
                    seen += held[other]  # the dumb work behind held blocks is already on the Tangle
                if seen > cur[mine]:
                    camp_fork[c] = other
            if camp_fork[0] == camp_fork[1]:
                collapsed_at = t
        if collapsed_at is not None:
            honest_fork = camp_fork[0]
            attack_fork = "B" if honest_fork == "A" else "A"
            if lead_height < 0 and cur[honest_fork] > cur[attack_fork] + held[attack_fork]:
                lead_height = max(cur.values())
            if max(cur.values()) >= cfg.horizon_blocks and lead_height >= 0:
                break

    persistence = collapsed_at if collapsed_at is not None else cfg.max_ticks
    return LivenessResult(mode, seed, persistence, collapsed_at is not None, blocks, lead_height,
                          {f: public[f][:] for f in public})


@dataclass
class LivenessSummary:
    wta: List[LivenessResult]
    sw: List[LivenessResult]

    @property
    def median_ratio(self) -> float:
        sw = statistics.median(r.persistence for r in self.sw)
        wta = statistics.median(r.persistence for r in self.wta)
        return wta / sw if sw else float("inf")

    def sw_recoveries(self, within: int = 50) -> int:
        return sum(1 for r in self.sw if 0 <= r.honest_ahead_by <= within)


def run_liveness(seeds: Sequence[int], cfg: LivenessConfig = LivenessConfig()) -> LivenessSummary:
    return LivenessSummary([simulate(s, "wta", cfg) for s in seeds], [simulate(s, "sw", cfg) for s in seeds])
