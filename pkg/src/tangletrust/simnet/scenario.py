"""Seeded discrete-event marketplace with honest traders, miners, weak devices and attackers.

Everything runs against one shared :class:`~tangletrust.ledger.Ledger`, so
every actor, honest or not, passes the same admission checks. Latency is the
reaction delay between protocol steps, drawn per step from
``[1, max_latency]`` ticks.
"""
from __future__ import annotations

import heapq
import itertools
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from ..chain import fork_choice
from ..core import NodeId, digest, encode
from ..ledger import (
    Account,
    AdmissionError,
    Ledger,
    LedgerConfig,
    rep_claim_payload,
    rep_event_payload,
    rep_request_payload,
)
from ..reputation import (
    InteractionGraph,
    NetFlowScorer,
    Trust,
    aggregate_average,
    average_scores,
    calibrated_netflow,
    classify,
    confusion,
    fscore_from_counts,
)
from ..tangle import MessageKind, TangleMessage, make_message
from ..trade import (
    BURN_ADDRESS,
    Bundle,
    Feedback,
    InsufficientFunds,
    ProofOfBurn,
    escrow_address,
    rating_to_milli,
    verify_pob,
)
from ..weakreq import (
    EscalationPolicy,
    ProfitabilityPolicy,
    WeakReqMessage,
    WeakReqRejected,
    make_request,
    make_weakreq_message,
    miner_serve,
)
from .config import AttackKind, SimConfig
from .report import MetricsReport

SERVICE = "sensor-data"
SYBIL_SERVICE = "relay"
TRADE_TIMEOUT = 100_000
CALIBRATION = (
    "average: Distrusted iff mean of per-rater means <= threshold (no feedback scores 0); "
    "netflow: per evaluator, each max-flow score is divided by the median score of the honest cohort "
    "and clamped to [0, 1], then averaged over evaluators; Distrusted iff the result <= threshold"
)


def apportion(total: int, weights: Dict[AttackKind, int]) -> Dict[AttackKind, int]:
    """Largest-remainder split of ``total`` actors in proportion to ``weights``."""
    w = {k: v for k, v in weights.items() if v > 0}
    wsum = sum(w.values())
    if not total or not wsum:
        return {k: 0 for k in w}
    exact = {k: total * v / wsum for k, v in w.items()}
    out = {k: int(x) for k, x in exact.items()}
    order = sorted(w, key=lambda k: (-(exact[k] - out[k]), list(AttackKind).index(k)))
    for k in order[: total - sum(out.values())]:
        out[k] += 1
    return out


@dataclass
class Trade:
    buyer: Account
    seller: Account
    price: int
    rating: Callable[[], Optional[int]]
    mediators: Tuple[NodeId, ...] = ()
    extra_reviews: int = 0
    kind: Optional[AttackKind] = None
    sid: bytes = b""
    quality: Optional[int] = None


@dataclass
class Outcome:
    attempts: int = 0
    successes: int = 0


@dataclass
class Blackboard:
    """Shared state of the malicious cohort."""

    captured: List[bytes] = field(default_factory=list)
    foreign_pobs: List[ProofOfBurn] = field(default_factory=list)
    slander_targets: Dict[NodeId, int] = field(default_factory=Counter)
    promoted: Dict[NodeId, int] = field(default_factory=Counter)


class Scenario:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg.validate()
        self.rng = random.Random(f"scenario/{cfg.seed}")
        self.ledger = Ledger(
            LedgerConfig(
                min_pow_bits=cfg.min_pow_bits, d=cfg.d, F=cfg.F, coinbase=cfg.coinbase, protected=cfg.protected,
                burn_per_msg=1, onboarding_bits=cfg.onboarding_bits, onboarding_burn=cfg.onboarding_burn,
                genesis_label=f"scenario-{cfg.seed}",
            ),
            seed=cfg.seed,
        )
        self.tick = 0
        self._queue: list = []
        self._order = itertools.count()
        self.accounts: Dict[NodeId, Account] = {}
        self.quality: Dict[NodeId, float] = {}
        self.malicious_ids: List[NodeId] = []
        self.kind_of: Dict[NodeId, AttackKind] = {}
        self.outcomes: Dict[AttackKind, Outcome] = {}
        self.board = Blackboard()
        self.fb_seen = 0
        self.fb_by_subject: Dict[NodeId, List[Feedback]] = defaultdict(list)
        self._avg_cache: Dict[NodeId, float] = {}
        self.whitewash_starts: List[Dict[str, float]] = []
        self.sybil_ids: List[NodeId] = []
        self.pending_devices: Dict[bytes, dict] = {}
        self.supply_violations = 0
        self.balance_streak = 0
        self.max_balance_streak = 0
        self.paid_attack_reviews: Counter = Counter()
        self.trade_aborts: Counter = Counter()
        self.device_stats = Counter()
        seed = cfg.seed
        self.honest = [self._account(f"{seed}/honest", i) for i in range(cfg.n_honest)]
        self.miners = [self._account(f"{seed}/miner", i) for i in range(cfg.n_miners)]
        self.devices = [self._account(f"{seed}/device", i) for i in range(cfg.n_devices)]
        counts = apportion(cfg.n_malicious, cfg.attack_mix) if cfg.n_malicious else {}
        self.groups: Dict[AttackKind, List[Account]] = {}
        idx = 0
        for kind in AttackKind:
            members = []
            for _ in range(counts.get(kind, 0)):
                acct = self._account(f"{seed}/malicious", idx)
                idx += 1
                members.append(acct)
                self.malicious_ids.append(acct.node_id)
                self.kind_of[acct.node_id] = kind
            if members:
                self.groups[kind] = members
                self.outcomes[kind] = Outcome()
        self.evaluators = sorted(self.rng.sample(self.honest, cfg.n_evaluators), key=lambda a: a.node_id)

    # -- plumbing ---------------------------------------------------------

    def _account(self, label: str, index: int) -> Account:
        acct = Account.derive(label, index)
        self.accounts[acct.node_id] = acct
        return acct

    def at(self, tick: int, fn, *args) -> None:
        heapq.heappush(self._queue, (tick, next(self._order), fn, args))

    def later(self, fn, *args) -> None:
        self.at(self.tick + self.rng.randint(1, self.cfg.max_latency), fn, *args)

    def act(self, account: Account, payload, kind: MessageKind = MessageKind.NORMAL) -> Optional[TangleMessage]:
        try:
            return self.ledger.issue(account, kind, payload)
        except AdmissionError:
            return None

    def pay(self, account: Account, payments) -> Optional[Bundle]:
        try:
            return account.wallet.pay(self.ledger.utxo, payments)
        except InsufficientFunds:
            return None

    def attempt(self, kind: AttackKind, accepted: bool) -> None:
        o = self.outcomes[kind]
        o.attempts += 1
        o.successes += int(accepted)

    def _refresh_feedback(self) -> None:
        fbs = self.ledger.feedback
        for fb in fbs[self.fb_seen:]:
            self.fb_by_subject[fb.subject].append(fb)
            self._avg_cache.pop(fb.subject, None)
        self.fb_seen = len(fbs)

    def public_average(self, node: NodeId) -> Optional[float]:
        self._refresh_feedback()
        if not self.fb_by_subject.get(node):
            return None
        if node not in self._avg_cache:
            self._avg_cache[node] = aggregate_average(self.fb_by_subject[node])
        return self._avg_cache[node]

    def rating_for(self, seller: NodeId) -> int:
        q = self.quality.get(seller, 0.5) + self.rng.gauss(0.0, 0.05)
        return rating_to_milli(min(1.0, max(0.0, q)))

    def sellers(self) -> List[NodeId]:
        return self.ledger.registry.discover(SERVICE)

    # -- trades -----------------------------------------------------------

    def start_trade(self, t: Trade) -> None:
        msg = self.act(t.buyer, rep_request_payload(t.seller.node_id, t.price, t.mediators, TRADE_TIMEOUT))
        if msg is None:
            self.trade_aborts["request"] += 1
            return
        t.sid = msg.id
        self.later(self._ack, t)

    def _ack(self, t: Trade) -> None:
        if self.act(t.seller, rep_event_payload("ack", t.sid, mediators=t.mediators)) is None:
            self.trade_aborts["ack"] += 1
            return
        self.later(self._choose if t.mediators else self._lock, t)

    def _choose(self, t: Trade) -> None:
        if self.act(t.buyer, rep_event_payload("choose", t.sid, mediator=t.mediators[0])) is None:
            self.trade_aborts["choose"] += 1
            return
        self.later(self._lock, t)

    def _lock(self, t: Trade) -> None:
        bundle = self.pay(t.buyer, [(escrow_address(t.sid), t.price)])
        if bundle is None or self.act(t.buyer, rep_event_payload("lock", t.sid, bundle=bundle)) is None:
            self.trade_aborts["lock"] += 1
            return
        self.later(self._deliver, t)

    def _deliver(self, t: Trade) -> None:
        if self.act(t.seller, rep_event_payload("deliver", t.sid)) is None:
            self.trade_aborts["deliver"] += 1
            return
        self.later(self._settle, t)

    def _settle(self, t: Trade) -> None:
        session = self.ledger.sessions[t.sid]
        t.quality = t.rating()
        if t.mediators and t.quality is not None and t.quality < 500:
            if self.act(t.buyer, rep_event_payload("complain", t.sid)) is None:
                self.trade_aborts["complain"] += 1
                return
            self.later(self._resolve, t)
            return
        bundle = Bundle((session.escrow_outpoint,), ((t.seller.node_id, t.price),)).signed_by(t.buyer.keys)
        if self.act(t.buyer, rep_event_payload("release", t.sid, bundle=bundle)) is None:
            self.trade_aborts["release"] += 1
            return
        self.later(self._feedback, t)

    def _resolve(self, t: Trade) -> None:
        session = self.ledger.sessions[t.sid]
        mediator = self.accounts[session.mediator]
        bundle = Bundle((session.escrow_outpoint,), ((t.buyer.node_id, t.price),)).signed_by(mediator.keys)
        if self.act(mediator, rep_event_payload("resolve", t.sid, bundle=bundle)) is None:
            self.trade_aborts["resolve"] += 1
            return
        self.later(self._feedback, t)

    def _feedback(self, t: Trade) -> None:
        if t.quality is None:
            return
        msg = self.act(t.buyer, rep_event_payload("feedback", t.sid, rating=t.quality))
        if msg is not None and t.kind is not None:
            self.paid_attack_reviews[t.kind.value] += 1
        if msg is not None and t.kind is None:
            self.board.captured.append(msg.raw)
        for _ in range(t.extra_reviews):
            self.later(self._extra_review, t)

    def _extra_review(self, t: Trade) -> None:
        accepted = self.act(t.buyer, rep_event_payload("feedback", t.sid, rating=t.quality)) is not None
        self.attempt(AttackKind.BALLOT_STUFFING, accepted)

    def claim(self, kind: AttackKind, rater: Account, subject: NodeId, rating: int, amount: int) -> bool:
        accepted = self.act(rater, rep_claim_payload(subject, rating, amount)) is not None
        self.attempt(kind, accepted)
        return accepted

    # -- honest behaviour -------------------------------------------------

    def honest_purchase(self, buyer: Account) -> None:
        pool = [s for s in self.sellers() if s != buyer.node_id]
        if not pool:
            return
        cands = self.rng.sample(pool, min(self.cfg.candidates, len(pool)))
        best, best_score = None, -1.0
        for s in cands:
            avg = self.public_average(s)
            score = 0.9 if avg is None else float(avg)  # optimistic prior for unknown sellers
            if score > best_score:
                best, best_score = s, score
        if best_score <= self.cfg.trust_threshold:
            return
        mediators: Tuple[NodeId, ...] = ()
        if self.rng.random() < self.cfg.mediated_share:
            others = [a.node_id for a in self.honest if a.node_id not in (buyer.node_id, best)]
            mediators = tuple(self.rng.sample(others, min(3, len(others))))
        price = self.rng.randint(self.cfg.price_min, self.cfg.price_max)
        self.start_trade(Trade(buyer, self.accounts[best], price, lambda s=best: self.rating_for(s), mediators))

    def mine_round(self) -> None:
        cfg = self.cfg
        liveness = self.groups.get(AttackKind.LIVENESS, [])
        if liveness and self.rng.random() < cfg.attacker_hash_share:
            self._liveness_block(self.rng.choice(liveness))
        else:
            miner = self.rng.choice(self.miners)
            self.ledger.mine(miner, ProfitabilityPolicy(cfg.min_share))
        if not self.ledger.supply_ok():
            self.supply_violations += 1
        self._serve_devices()
        if self.tick + cfg.block_interval <= cfg.duration_ticks:
            self.at(self.tick + cfg.block_interval, self.mine_round)

    # -- weak devices -----------------------------------------------------

    def device_start(self, device: Account) -> None:
        cfg = self.cfg
        burn = self.pay(device, [(BURN_ADDRESS, cfg.weakreq_burn)])
        if burn is None or self.act(device, burn.fields()) is None:
            return
        pob = ProofOfBurn(burn.id, 0, cfg.weakreq_burn)
        self.board.foreign_pobs.append(pob)
        state = {"device": device, "pob": pob, "fee": cfg.weakreq_fee, "attempt": 0}
        self._device_request(state)

    def _device_request(self, state: dict) -> None:
        cfg = self.cfg
        req = make_request(state["device"].keys, state["fee"], cfg.weakreq_n_msg, state["pob"],
                           cfg.weakreq_timer_ticks, state["attempt"])
        try:
            self.ledger.broadcast_request(req)
        except AdmissionError:
            self.device_stats["rejected"] += 1
            return
        state["req"] = req
        self.pending_devices[req.id] = state
        self.at(self.tick + cfg.weakreq_timer_ticks, self._device_timer, req.id)

    def _device_timer(self, req_id: bytes) -> None:
        state = self.pending_devices.get(req_id)
        if state is None:
            return
        del self.pending_devices[req_id]
        esc = EscalationPolicy(self.cfg.weakreq_escalation_factor, self.cfg.weakreq_escalation_max_attempts)
        if state["attempt"] >= esc.max_attempts:
            self.device_stats["abandoned"] += 1
            return
        state["attempt"] += 1
        state["fee"] = esc.next_fee(state["fee"])
        self.device_stats["escalations"] += 1
        self._device_request(state)

    def _serve_devices(self) -> None:
        for req_id in sorted(self.pending_devices):
            anchored = self.ledger.anchored_request(req_id)
            if anchored is None:
                continue
            state = self.pending_devices.pop(req_id)
            req, block = anchored
            self.later(self._device_send, state["device"], req, block.miner)

    def _device_send(self, device: Account, req, miner_id: NodeId) -> None:
        miner = self.accounts.get(miner_id)
        for i in range(1, req.n_msg + 1):
            try:
                msg = make_weakreq_message(device.wallet, self.ledger.utxo, req, miner_id, i, ("reading", i))
            except InsufficientFunds:
                self.device_stats["unfunded"] += 1
                return
            if miner is None:
                return
            try:
                miner_serve(miner, self.ledger, msg)
                self.device_stats["served"] += 1
            except (WeakReqRejected, AdmissionError):
                self.device_stats["refused"] += 1

    # -- attackers --------------------------------------------------------

    def _liveness_block(self, attacker: Account) -> None:
        """Mine a sibling of the canonical tip and release it, trying to split the honest miners."""
        tip = self.ledger.canonical_tip
        parent = self.ledger.chain.blocks.get(tip.prev_hash, tip) if tip.height > 0 else tip
        try:
            self.ledger.mine(attacker, ProfitabilityPolicy(self.cfg.min_share), parent=parent)
            accepted = True
        except AdmissionError:
            accepted = False
        self.outcomes[AttackKind.LIVENESS].attempts += int(accepted)

    def _observe_balance(self) -> None:
        chain = self.ledger.chain
        top = fork_choice(chain)
        rivals = [b for b in chain.leaves() if b.id != top.id and chain.work[b.id] == chain.work[top.id]]
        self.balance_streak = self.balance_streak + 1 if rivals else 0
        self.max_balance_streak = max(self.max_balance_streak, self.balance_streak)
        if self.tick + 1 <= self.cfg.duration_ticks:
            self.at(self.tick + 1, self._observe_balance)

    def _schedule_attacks(self) -> None:
        cfg = self.cfg
        horizon = max(2, int(cfg.duration_ticks * 0.8))
        for kind, members in self.groups.items():
            for acct in members:
                t0 = self.rng.randint(2, horizon)
                early = self.rng.randint(2, max(2, cfg.duration_ticks // 4))
                if kind == AttackKind.SELF_PROMOTING:
                    self.at(early, self._self_promote, acct, members)
                elif kind == AttackKind.WHITEWASHING:
                    self.at(max(t0, cfg.duration_ticks // 2), self._whitewash, acct)
                elif kind == AttackKind.SLANDERING:
                    self.at(early, self._slander, acct)
                elif kind == AttackKind.NETWORK_DOS:
                    self.at(t0, self._network_dos, acct)
                elif kind == AttackKind.APP_DOS:
                    self.at(max(t0, cfg.duration_ticks // 4), self._app_dos, acct)
                elif kind == AttackKind.BALLOT_STUFFING:
                    self.at(early, self._ballot_stuff, acct, members)
                elif kind == AttackKind.SYBIL:
                    self.at(2, self._sybil, acct)
                elif kind == AttackKind.REPLAY:
                    self.at(max(t0, cfg.duration_ticks // 3), self._replay, acct)
                elif kind == AttackKind.WEAKREQ_ABUSE:
                    self.at(t0, self._weakreq_abuse, acct)
        if AttackKind.LIVENESS in self.groups:
            self.at(1, self._observe_balance)

    def _partner(self, acct: Account, members: List[Account]) -> Optional[Account]:
        others = [m for m in members if m.node_id != acct.node_id]
        return self.rng.choice(others) if others else None

    def _fake_trades(self, kind: AttackKind, buyer: Account, seller: Account, rating: int, n: int,
                     extra: int = 0) -> None:
        for _ in range(n):
            price = self.cfg.price_min
            self.start_trade(Trade(buyer, seller, price, lambda r=rating: r, (), extra, kind))
            self.attempt(kind, False)  # counted here; the paid review tally tracks acceptance

    def _promotion_targets(self, acct: Account, n: int) -> List[NodeId]:
        """Coordinated: spread promotions evenly over the cohort's original sellers."""
        pool = [m for m in self.malicious_ids if m != acct.node_id and m not in self.sybil_ids]
        out = []
        for _ in range(min(n, len(pool))):
            pick = min((m for m in pool if m not in out), key=lambda m: (self.board.promoted[m], m))
            self.board.promoted[pick] += 1
            out.append(pick)
        return out

    def _self_promote(self, acct: Account, members: List[Account]) -> None:
        budget = self.cfg.attack_budget
        if self.cfg.protected:
            for friend in self._promotion_targets(acct, budget // 6):
                self._fake_trades(AttackKind.SELF_PROMOTING, acct, self.accounts[friend], 1000, 1)
        else:
            for friend in self._promotion_targets(acct, budget):
                self.claim(AttackKind.SELF_PROMOTING, acct, friend, 1000, self.cfg.price_max)

    def _whitewash(self, acct: Account) -> None:
        fresh = self._account(f"{self.cfg.seed}/whitewash/{acct.node_id.hex()[:16]}", 0)
        self.malicious_ids.append(fresh.node_id)
        self.kind_of[fresh.node_id] = AttackKind.WHITEWASHING
        self.quality[fresh.node_id] = self.quality[acct.node_id]
        old_feedback = len(self.fb_by_subject.get(acct.node_id, ()))
        funds = self.ledger.utxo.balance(acct.node_id)
        bundle = self.pay(acct, [(fresh.node_id, funds - 1)]) if funds > 1 else None
        if bundle is not None:
            self.act(acct, bundle.fields())
        try:
            self.ledger.register(fresh, SERVICE, "fresh")
            registered = True
        except (AdmissionError, InsufficientFunds):
            registered = False
        if registered:
            self._refresh_feedback()
            avg = average_scores(self.ledger.feedback, [fresh.node_id])[fresh.node_id]
            graph = InteractionGraph.from_feedback(self.ledger.feedback, [fresh.node_id, self.evaluators[0].node_id])
            nf = NetFlowScorer(graph).score(self.evaluators[0].node_id, fresh.node_id)
            self.whitewash_starts.append({"average": float(avg), "netflow": float(nf)})
            self.attempt(AttackKind.WHITEWASHING, avg != 0 or nf != 0)
            self.whitewash_history_ok = getattr(self, "whitewash_history_ok", True) and (
                len(self.fb_by_subject.get(acct.node_id, ())) == old_feedback)

    def _slander_targets(self, n: int) -> List[NodeId]:
        """Coordinated: the best-reviewed honest sellers, least-targeted first."""
        self._refresh_feedback()
        honest = [a.node_id for a in self.honest if a.node_id in self.ledger.registry]
        ranked = sorted(honest, key=lambda x: (-len(self.fb_by_subject.get(x, ())), x))[: max(1, len(honest) // 2)]
        out = []
        for _ in range(min(n, len(ranked))):
            pick = min((x for x in ranked if x not in out), key=lambda x: (self.board.slander_targets[x], x))
            self.board.slander_targets[pick] += 1
            out.append(pick)
        return out

    def _slander(self, acct: Account) -> None:
        budget = self.cfg.attack_budget
        if not self.cfg.protected:
            for target in self._slander_targets(budget):
                self.claim(AttackKind.SLANDERING, acct, target, 0, self.cfg.price_max)
            return
        paid = (budget - 3) // 6
        targets = self._slander_targets(max(1, paid))
        if not targets:
            return
        # reviews the seller never acknowledged: a bare claim, then feedback on an unacked request
        self.claim(AttackKind.SLANDERING, acct, targets[0], 0, self.cfg.price_max)
        req = self.act(acct, rep_request_payload(targets[0], self.cfg.price_min, (), TRADE_TIMEOUT))
        if req is not None:
            accepted = self.act(acct, rep_event_payload("feedback", req.id, rating=0)) is not None
            self.attempt(AttackKind.SLANDERING, accepted)
        # the rest of the budget buys real trades that are then rated 0
        for target in targets[:paid]:
            price = self.cfg.price_min
            self.start_trade(Trade(acct, self.accounts[target], price, lambda: 0, (), 0, AttackKind.SLANDERING))

    def _network_dos(self, acct: Account) -> None:
        for i in range(self.cfg.attack_budget):
            parents = self.ledger.tangle.sorted_tips()[:2]
            if len(parents) < 2:
                parents = [parents[0], self.ledger.tangle.genesis_id]
            msg = make_message(acct.keys, MessageKind.NORMAL, tuple(parents), ("spam", i), acct.seq + 1,
                               self.tick, 0)
            weak = msg.pow.difficulty_bits < self.ledger.config.min_pow_bits
            try:
                self.ledger.submit(msg)
                accepted = True
                acct.seq += 1
            except AdmissionError:
                accepted = False
            self.attempt(AttackKind.NETWORK_DOS, accepted and weak)

    def _app_dos(self, acct: Account) -> None:
        cfg = self.cfg
        own = self.pay(acct, [(acct.node_id, 1)])
        if own is not None:
            self.act(acct, own.fields())
        for i in range(cfg.attack_budget):
            variant = i % 3
            if variant == 0:
                pob = ProofOfBurn(digest(encode(("forged", acct.node_id, i))), 0, cfg.weakreq_burn)
            elif variant == 1 and self.board.foreign_pobs:
                pob = self.board.foreign_pobs[i % len(self.board.foreign_pobs)]
            elif own is not None:
                pob = ProofOfBurn(own.id, 0, 1)  # an ordinary payment, not a burn
            else:
                pob = ProofOfBurn(digest(encode(("forged", acct.node_id, i))), 0, cfg.weakreq_burn)
            req = make_request(acct.keys, cfg.weakreq_fee, cfg.weakreq_n_msg, pob, cfg.weakreq_timer_ticks, i)
            try:
                self.ledger.broadcast_request(req)
                accepted = True
            except AdmissionError:
                accepted = False
            self.attempt(AttackKind.APP_DOS, accepted)

    def _ballot_stuff(self, acct: Account, members: List[Account]) -> None:
        friend = self._partner(acct, members)
        if friend is None:
            return
        if self.cfg.protected:
            trades = max(1, self.cfg.attack_budget // 9)
            extra = max(0, (self.cfg.attack_budget - 6 * trades) // trades)
            for _ in range(trades):
                price = self.cfg.price_min
                self.start_trade(Trade(acct, friend, price, lambda: 1000, (), extra, AttackKind.BALLOT_STUFFING))
        else:
            for _ in range(self.cfg.attack_budget):
                self.claim(AttackKind.BALLOT_STUFFING, acct, friend.node_id, 1000, self.cfg.price_max)

    def _sybil(self, acct: Account) -> None:
        cfg = self.cfg
        ring = []
        for j in range(cfg.sybils_per_actor):
            fake = self._account(f"{cfg.seed}/sybil/{acct.node_id.hex()[:16]}", j)
            share = max(cfg.onboarding_burn + 2 * cfg.price_max, cfg.endowment // (cfg.sybils_per_actor + 1))
            bundle = self.pay(acct, [(fake.node_id, share)])
            if bundle is None or self.act(acct, bundle.fields()) is None:
                continue
            try:
                self.ledger.register(fake, SYBIL_SERVICE, "sybil")
            except (AdmissionError, InsufficientFunds):
                continue
            self.malicious_ids.append(fake.node_id)
            self.kind_of[fake.node_id] = AttackKind.SYBIL
            self.sybil_ids.append(fake.node_id)
            ring.append(fake)
        ring.append(acct)
        if len(ring) < 2:
            return
        if cfg.protected:
            for j in range(cfg.attack_budget // 6):
                buyer, seller = ring[j % len(ring)], ring[(j + 1) % len(ring)]
                self.start_trade(Trade(buyer, seller, cfg.price_min, lambda: 1000, (), 0, AttackKind.SYBIL))
                self.attempt(AttackKind.SYBIL, False)
        else:
            for j in range(cfg.attack_budget):
                rater, subject = ring[j % len(ring)], ring[(j + 1) % len(ring)]
                self.claim(AttackKind.SYBIL, rater, subject.node_id, 1000, cfg.price_max)

    def _replay(self, acct: Account) -> None:
        captured = self.board.captured or [raw for kind, raw in self.ledger.records if kind == "tangle"][1:]
        if not captured:
            return
        for _ in range(self.cfg.attack_budget):
            raw = self.rng.choice(captured)
            try:
                self.ledger.submit(TangleMessage.from_bytes(raw))
                accepted = True
            except AdmissionError:
                accepted = False
            self.attempt(AttackKind.REPLAY, accepted)

    def _weakreq_abuse(self, acct: Account) -> None:
        cfg = self.cfg
        n_msg = 100
        burn = self.pay(acct, [(BURN_ADDRESS, n_msg)])
        if burn is None or self.act(acct, burn.fields()) is None:
            return
        pob = ProofOfBurn(burn.id, 0, n_msg)
        req = make_request(acct.keys, 1, n_msg, pob, cfg.weakreq_timer_ticks)
        try:
            self.ledger.broadcast_request(req)
        except AdmissionError:
            return
        self.abuse_requests = getattr(self, "abuse_requests", []) + [req.id]
        self.outcomes[AttackKind.WEAKREQ_ABUSE].attempts += 1
        self.at(self.tick + 2 * cfg.block_interval, self._weakreq_abuse_send, acct, req)

    def _weakreq_abuse_send(self, acct: Account, req) -> None:
        # push messages without anyone having anchored the request
        miner = self.miners[0].node_id
        bundle = self.pay(acct, [(miner, 1)])
        if bundle is None:
            return
        unsigned = WeakReqMessage(req.id, ("junk",), 1, miner, 1, bundle)
        wm = WeakReqMessage(req.id, ("junk",), 1, miner, 1, bundle, acct.keys.sign(unsigned.body))
        self.act(acct, ("weakreq", wm.fields()), MessageKind.WEAKREQ)

    # -- run --------------------------------------------------------------

    def setup(self) -> None:
        cfg = self.cfg
        lo_h, hi_h, lo_m, hi_m = 0.7, 1.0, 0.0, 0.3
        for acct in self.honest:
            self.quality[acct.node_id] = self.rng.uniform(lo_h, hi_h)
        for nid in self.malicious_ids:
            self.quality[nid] = self.rng.uniform(lo_m, hi_m)
        everyone = self.honest + self.miners + self.devices + [self.accounts[n] for n in self.malicious_ids]
        for acct in everyone:
            self.ledger.endow(acct.node_id, cfg.endowment)
        for acct in self.honest + [self.accounts[n] for n in self.malicious_ids]:
            self.ledger.register(acct, SERVICE, f"{acct.node_id.hex()[:8]}")
        self.ledger.now = 1

    def schedule(self) -> None:
        cfg = self.cfg
        horizon = max(2, int(cfg.duration_ticks * 0.8))
        for acct in self.honest:
            for _ in range(cfg.purchases):
                self.at(self.rng.randint(2, horizon), self.honest_purchase, acct)
        for acct in self.devices:
            self.at(self.rng.randint(2, max(2, cfg.duration_ticks // 2)), self.device_start, acct)
        self.at(cfg.block_interval, self.mine_round)
        self._schedule_attacks()

    def run_loop(self) -> None:
        while self._queue:
            tick, _, fn, args = heapq.heappop(self._queue)
            if tick > self.cfg.duration_ticks:
                break
            self.tick = tick
            self.ledger.now = max(self.ledger.now, tick)
            fn(*args)

    def evaluate(self) -> MetricsReport:
        cfg = self.cfg
        ledger = self.ledger
        self._refresh_feedback()
        market = [a.node_id for a in self.honest] + list(self.malicious_ids)
        subjects = sorted(set(market))
        malicious = set(self.malicious_ids)
        truth = {s: (Trust.DISTRUSTED if s in malicious else Trust.TRUSTED) for s in subjects}
        evaluators = [a.node_id for a in self.evaluators]

        avg = average_scores(ledger.feedback, subjects)
        graph = InteractionGraph.from_feedback(ledger.feedback, subjects)
        scorer = NetFlowScorer(graph)
        honest_ref = [a.node_id for a in self.honest]
        nf = calibrated_netflow(scorer, evaluators, subjects, honest_ref)

        fs, conf = {}, {}
        flags = []
        if not malicious:
            flags.append("NoPositives")
        for name, scores in (("average", avg), ("netflow", nf)):
            pred = {s: classify(float(scores[s]), cfg.trust_threshold) for s in subjects}
            tp, fp, fn, tn = confusion(pred, truth)
            conf[name] = [tp, fp, fn, tn]
            fs[name] = None if not malicious else fscore_from_counts(tp, fp, fn)

        kinds = Counter(m.kind for m in ledger.tangle.messages.values() if not m.is_genesis)
        dur = max(1, cfg.duration_ticks)
        tps = {k.value.lower(): kinds.get(k, 0) / dur for k in MessageKind}

        sybil_nf = 0.0
        if self.sybil_ids:
            sybil_nf = max(max(scorer.scores(e, self.sybil_ids)) for e in evaluators)
        abuse_served = 0
        anchored = ledger.chain.anchored(ledger.canonical_tip.id)
        for rid in getattr(self, "abuse_requests", []):
            abuse_served += int(rid in anchored) + len(ledger.served.get(rid, ()))
        if AttackKind.WEAKREQ_ABUSE in self.outcomes:
            self.outcomes[AttackKind.WEAKREQ_ABUSE].successes = abuse_served
        for kind in (AttackKind.SELF_PROMOTING, AttackKind.SYBIL):
            if kind in self.outcomes and cfg.protected:
                self.outcomes[kind].successes = self.paid_attack_reviews.get(kind.value, 0)
        if AttackKind.LIVENESS in self.outcomes:
            self.outcomes[AttackKind.LIVENESS].successes = int(self.max_balance_streak >= cfg.liveness_success_ticks)

        weakreq_pob_ok = all(bool(verify_pob(req.pob, ledger.utxo, req.sender))
                             for req in ledger.served_requests.values())
        escrow_ok = True
        for s in ledger.sessions.values():
            if s.release_bundle is not None:
                payees = {a for a, v in s.release_bundle.outputs if v > 0}
                escrow_ok &= payees in ({s.seller}, {s.buyer}) and s.release_bundle.total_out == s.price

        balances = {n.hex(): ledger.utxo.balance(n) for n in sorted(self.accounts)}
        reps = {s.hex(): {"average": float(avg[s]), "netflow": float(nf[s])} for s in subjects}
        audits = {
            "supply_ok": ledger.supply_ok() and self.supply_violations == 0,
            "escrow_conserved": escrow_ok,
            "weakreq_pob_verified": weakreq_pob_ok,
            "sybil_max_netflow": sybil_nf,
            "whitewash_history_untouched": getattr(self, "whitewash_history_ok", True),
            "max_fork_balance_ticks": self.max_balance_streak,
        }
        extras = {
            "messages": len(ledger.tangle.messages),
            "blocks": len(ledger.chain.blocks),
            "feedback": len(ledger.feedback),
            "sessions": len(ledger.sessions),
            "paid_attack_reviews": dict(sorted(self.paid_attack_reviews.items())),
            "trade_aborts": dict(sorted(self.trade_aborts.items())),
            "devices": dict(sorted(self.device_stats.items())),
            "whitewash_start_scores": self.whitewash_starts,
            "protected": cfg.protected,
            "subjects": len(subjects),
            "malicious": len(malicious),
        }
        return MetricsReport(
            seed=cfg.seed,
            config_digest=cfg.digest(),
            elapsed_ticks=self.tick,
            tps=tps,
            fscore=fs,
            confusion=conf,
            attack_outcomes={k.value: {"attempts": o.attempts, "successes": o.successes}
                             for k, o in self.outcomes.items()},
            balances=balances,
            reputations=reps,
            flags=flags,
            rejections=dict(sorted(ledger.rejections.items())),
            audits=audits,
            extras=extras,
            calibration=CALIBRATION,
            snapshot_digest=ledger.state_digest().hex(),
        )

    def run(self) -> MetricsReport:
        self.setup()
        self.schedule()
        self.run_loop()
        return self.evaluate()


def run_scenario(config: SimConfig) -> MetricsReport:
    return Scenario(config).run()
