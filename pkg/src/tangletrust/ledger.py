"""One node's view of the whole system: Tangle, chain, UTXO set, identities, trades and feedback.

Every protocol action enters through :meth:`Ledger.submit` (Tangle messages),
:meth:`Ledger.submit_block` or :meth:`Ledger.broadcast_request`, so honest and
adversarial actors face identical admission rules.

Rep payloads carried by Tangle messages::

    ("rep", "request", seller, price, mediators, timeout)   # session id = message id
    ("rep", <event>, session_id, (nofeedback, mediators, mediator, bundle|None, rating|None))
    ("rep", "claim", subject, rating, amount)                # bare review, no trade behind it
"""
from __future__ import annotations

import json
import random
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

from .chain import (
    Block,
    ChainState,
    DifficultyParams,
    dumb_anchor,
    dumb_payload,
    dumb_work,
    fork_choice,
    mine_block,
    relaxed_target,
    validate_block,
)
from .core import HashDigest, KeyPair, NodeId, digest, encode, pow_solve
from .tangle import (
    MessageKind,
    TangleError,
    TangleMessage,
    TangleState,
    genesis_message,
    make_message,
    select_tips,
)
from .trade import (
    BURN_ADDRESS,
    Bundle,
    DuplicateIdentity,
    Feedback,
    InitialMessage,
    ProofOfBurn,
    Registry,
    TradeError,
    TradeEvent,
    TradeSession,
    UtxoSet,
    Wallet,
    WeakOnboarding,
    open_session,
    register_initial,
    trade_step,
    validate_bundle,
)
from .weakreq import (
    ProfitabilityPolicy,
    WeakReqMessage,
    WeakReqRequest,
    validate_request,
    validate_weakreq_message,
)


class AdmissionError(Exception):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


@dataclass(frozen=True)
class LedgerConfig:
    min_pow_bits: int = 4
    d: int = 8
    F: int = 4
    coinbase: int = 50
    protected: bool = True
    burn_per_msg: int = 1
    min_fee_unit: int = 0
    onboarding_bits: int = 6
    onboarding_burn: int = 1
    genesis_label: str = "genesis"

    @property
    def params(self) -> DifficultyParams:
        return DifficultyParams(self.d, self.F, coinbase=self.coinbase)


class Account:
    """Key pair, wallet and the sender's sequence counter."""

    def __init__(self, keys: KeyPair):
        self.keys = keys
        self.wallet = Wallet(keys)
        self.seq = 0

    @property
    def node_id(self) -> NodeId:
        return self.keys.node_id

    @classmethod
    def derive(cls, label: str, index: int = 0) -> "Account":
        return cls(KeyPair.derive(label, index))


def rep_event_payload(name: str, session_id: HashDigest, *, nofeedback: bool = False,
                      mediators: Sequence[NodeId] = (), mediator: Optional[NodeId] = None,
                      bundle: Optional[Bundle] = None, rating: Optional[int] = None) -> tuple:
    return ("rep", name, session_id,
            (nofeedback, tuple(mediators), mediator, None if bundle is None else bundle.fields(), rating))


def rep_request_payload(seller: NodeId, price: int, mediators: Sequence[NodeId] = (), timeout: int = 1000) -> tuple:
    return ("rep", "request", seller, price, tuple(mediators), timeout)


def rep_claim_payload(subject: NodeId, rating: int, amount: int) -> tuple:
    return ("rep", "claim", subject, rating, amount)


class Ledger:
    def __init__(self, config: LedgerConfig = LedgerConfig(), seed: int = 0):
        self.config = config
        self.params = config.params
        self.relaxed_bits, _ = relaxed_target(self.params)
        self.rng = random.Random(seed)
        self.tangle = TangleState(genesis_message(config.genesis_label), weight_mode="lazy",
                                  min_pow_bits=config.min_pow_bits)
        self.chain = ChainState()
        self.utxo = UtxoSet()
        self.registry = Registry(config.onboarding_bits, config.onboarding_burn)
        self.sessions: Dict[HashDigest, TradeSession] = {}
        self.feedback: List[Feedback] = []
        self.mempool: Dict[HashDigest, WeakReqRequest] = {}
        self.served: Dict[HashDigest, List[int]] = defaultdict(list)
        self.served_requests: Dict[HashDigest, WeakReqRequest] = {}
        self.fees: Counter = Counter()
        self.coinbases: Dict[HashDigest, NodeId] = {}
        self.endowment = 0
        self.rejections: Counter = Counter()
        self.dumb_by_sender: Dict[NodeId, List[HashDigest]] = defaultdict(list)
        self.records: List[Tuple[str, object]] = []
        self.now = 0
        self._anchored_tip: Optional[HashDigest] = None
        self._anchored: Dict[HashDigest, Tuple[WeakReqRequest, Block]] = {}

    # -- bookkeeping ------------------------------------------------------

    def _reject(self, reason: str, detail: str = ""):
        self.rejections[reason] += 1
        raise AdmissionError(reason, detail)

    def endow(self, address: NodeId, amount: int) -> None:
        op = (digest(encode(("alloc", len(self.records)))), 0)
        self.utxo.credit(op, address, amount)
        self.endowment += amount
        self.records.append(("alloc", (address, amount)))

    @property
    def canonical_tip(self) -> Block:
        return fork_choice(self.chain)

    def supply_ok(self) -> bool:
        """Outstanding supply equals endowment plus paid coinbases minus burns."""
        minted = self.endowment + self.params.coinbase * len(self.coinbases)
        return self.utxo.supply() == minted - self.utxo.burned

    # -- Tangle admission -------------------------------------------------

    def issue(self, account: Account, kind: MessageKind, payload, *, bits: Optional[int] = None,
              parents: Optional[Tuple[HashDigest, HashDigest]] = None) -> TangleMessage:
        """Build, solve, sign and submit a message from ``account``."""
        if parents is None:
            parents = select_tips(self.tangle, self.rng)
        bits = self.config.min_pow_bits if bits is None else bits
        seq = max(account.seq, self.tangle.last_seq.get(account.node_id, 0)) + 1
        msg = make_message(account.keys, kind, parents, payload, seq, self.now, bits)
        self.submit(msg)
        account.seq = seq
        return msg

    def publish_bundle(self, account, bundle: Bundle) -> TangleMessage:
        if isinstance(account, KeyPair):
            account = Account(account)
            account.seq = self.tangle.last_seq.get(account.node_id, 0)
        return self.issue(account, MessageKind.NORMAL, bundle.fields())

    def register(self, account: Account, service: str, pointer: str = "", burn: Optional[int] = None,
                 bits: Optional[int] = None) -> TangleMessage:
        """Burn, then publish an Initial message solved at the onboarding difficulty."""
        burn = self.config.onboarding_burn if burn is None else burn
        bits = self.config.onboarding_bits if bits is None else bits
        bundle = account.wallet.pay(self.utxo, [(BURN_ADDRESS, burn)])
        self.publish_bundle(account, bundle)
        init = InitialMessage(account.node_id, service, pointer, ProofOfBurn(bundle.id, 0, burn), None)
        init = replace(init, pow=pow_solve(init.body, bits))
        return self.issue(account, MessageKind.NORMAL, init.fields())

    def submit(self, msg: TangleMessage) -> HashDigest:
        try:
            self.tangle.check(msg)
        except TangleError as exc:
            self._reject(exc.reason, str(exc))
        effect = self._admit_payload(msg)
        self.tangle._insert(msg)
        if effect is not None:
            effect()
        self.records.append(("tangle", msg.raw))
        self.now = max(self.now, msg.timestamp)
        return msg.id

    def _admit_payload(self, msg: TangleMessage):
        p = msg.payload
        tag = p[0] if isinstance(p, tuple) and p else None
        now = msg.timestamp
        if (msg.kind == MessageKind.DUMB) != (tag == "dumb"):
            self._reject("BadKind", "dumb payloads travel only in dumb messages")
        if (msg.kind == MessageKind.WEAKREQ) != (tag == "weakreq"):
            self._reject("BadKind", "weakreq payloads travel only in weakreq messages")
        if tag == "dumb":
            anchor = dumb_anchor(msg)
            if anchor is None or anchor[1] not in self.chain.blocks:
                self._reject("BadDumbAnchor")
            if msg.pow.difficulty_bits < self.relaxed_bits:
                self._reject("WeakDumbRef")
            return lambda: self.dumb_by_sender[msg.sender].append(msg.id)
        if tag == "bundle":
            bundle = self._bundle(p)
            self._check_bundle(bundle, now)
            return lambda: self.utxo.apply(bundle)
        if tag == "initial":
            return self._admit_initial(msg, p)
        if tag == "rep":
            return self._admit_rep(msg, p)
        if tag == "weakreq":
            return self._admit_weakreq(msg, p)
        return None

    def _bundle(self, fields) -> Bundle:
        try:
            return Bundle.from_fields(fields)
        except (TypeError, ValueError) as exc:
            self._reject("Malformed", str(exc))

    def _check_bundle(self, bundle: Bundle, now: int) -> None:
        check = validate_bundle(bundle, self.utxo, now)
        if not check:
            self._reject(check.reason)

    def _admit_initial(self, msg: TangleMessage, p):
        try:
            init = InitialMessage.from_fields(p)
        except (TypeError, ValueError) as exc:
            self._reject("Malformed", str(exc))
        if init.sender != msg.sender:
            self._reject("UnauthorizedRole", "initial for another identity")
        try:
            register_initial(init, self.registry, self.utxo, msg.timestamp)
        except (WeakOnboarding, DuplicateIdentity) as exc:
            self._reject(type(exc).__name__, str(exc))
        return None

    def _admit_rep(self, msg: TangleMessage, p):
        now = msg.timestamp
        name = p[1] if len(p) > 1 else None
        if name == "request":
            _, _, seller, price, mediators, timeout = p
            try:
                session = open_session(msg.id, msg.sender, seller, price, mediators, now, timeout)
            except TradeError as exc:
                self._reject(exc.reason, str(exc))
            return lambda: self.sessions.__setitem__(msg.id, session)
        if name == "claim":
            _, _, subject, rating, amount = p
            if self.config.protected:
                self._reject("SellerNeverAcked", "review without a trade")
            if not 0 <= rating <= 1000 or amount < 0 or subject == msg.sender:
                self._reject("Malformed", "claim out of range")
            fb = Feedback(None, msg.sender, subject, rating, amount, None, msg.id)
            return lambda: self.feedback.append(fb)
        _, _, sid, args = p
        nofeedback, mediators, mediator, bundle_fields, rating = args
        bundle = None if bundle_fields is None else self._bundle(bundle_fields)
        event = TradeEvent(name, msg.sender, now, bool(nofeedback), tuple(mediators), mediator, bundle, rating)
        session = self.sessions.get(sid)
        try:
            updated = trade_step(session, event)
        except TradeError as exc:
            self._reject(exc.reason, str(exc))
        if bundle is not None:
            self._check_bundle(bundle, now)

        def effect():
            if bundle is not None:
                self.utxo.apply(bundle)
            if name == "lock":
                self.utxo.escrows[updated.escrow] = updated.terms()
            if name == "feedback":
                self.feedback.append(Feedback(sid, updated.buyer, updated.seller, updated.feedback_rating,
                                              updated.price, updated.escrow_bundle.id, msg.id))
            self.sessions[sid] = updated

        return effect

    def _admit_weakreq(self, msg: TangleMessage, p):
        try:
            wm = WeakReqMessage.from_fields(p[1])
        except (TypeError, ValueError) as exc:
            self._reject("Malformed", str(exc))
        anchored = self.anchored_request(wm.request_ref)
        if anchored is None:
            self._reject("NotAnchored")
        req, block = anchored
        if block.miner != msg.sender:
            self._reject("WrongMiner")
        check = validate_weakreq_message(wm, req, block.miner, self.served.get(req.id, ()), self.utxo, msg.timestamp)
        if not check:
            self._reject(check.reason)

        def effect():
            self.utxo.apply(wm.bundle)
            self.served[req.id].append(wm.index)
            self.served_requests[req.id] = req
            self.fees[msg.sender] += wm.fee_share

        return effect

    # -- chain ------------------------------------------------------------

    def broadcast_request(self, req: WeakReqRequest) -> HashDigest:
        check = validate_request(req, self.utxo, self.config.burn_per_msg, self.config.min_fee_unit)
        if not check:
            self._reject(check.reason)
        self.mempool[req.id] = req
        return req.id

    def submit_block(self, block: Block) -> HashDigest:
        check = validate_block(block, self.tangle, self.chain, self.params, self.utxo, self.config.burn_per_msg)
        if not check:
            self._reject(check.reason)
        self.chain.add(block, dumb_work(self.tangle, block.dumb_refs))
        self.records.append(("block", block.raw))
        for b in self.chain.path(self.canonical_tip.id)[1:]:
            if b.id not in self.coinbases:
                self.coinbases[b.id] = b.miner
                self.utxo.credit((b.id, 0), b.miner, b.coinbase)
        for req in block.weakreq_reqs:
            self.mempool.pop(req.id, None)
        return block.id

    def mine(self, account: Account, policy: ProfitabilityPolicy = ProfitabilityPolicy(), parent=None) -> Block:
        def issue_dumb(height, anchor):
            return self.issue(account, MessageKind.DUMB, dumb_payload(height, anchor), bits=self.relaxed_bits)

        block = mine_block(
            sorted(self.mempool.values(), key=lambda r: r.id), self.tangle, self.params, account, self.rng,
            self.chain, issue_dumb=issue_dumb, parent=parent, policy=policy, utxo=self.utxo,
            burn_per_msg=self.config.burn_per_msg, owned=self.dumb_by_sender[account.node_id],
        )
        self.submit_block(block)
        return block

    def anchored_request(self, request_id: HashDigest) -> Optional[Tuple[WeakReqRequest, Block]]:
        tip = self.canonical_tip.id
        if tip != self._anchored_tip:
            self._anchored = self.chain.anchored(tip)
            self._anchored_tip = tip
        return self._anchored.get(request_id)

    def served_indices(self, request_id: HashDigest) -> List[int]:
        return list(self.served.get(request_id, ()))

    # -- snapshots --------------------------------------------------------

    def snapshot_lines(self) -> List[str]:
        lines = [json.dumps({"kind": "config", **asdict(self.config)}, sort_keys=True)]
        for kind, value in self.records:
            if kind == "alloc":
                address, amount = value
                lines.append(json.dumps({"kind": "alloc", "address": address.hex(), "amount": amount},
                                        sort_keys=True))
            else:
                lines.append(json.dumps({"kind": kind, "raw": value.hex()}, sort_keys=True))
        return lines

    def snapshot_text(self) -> str:
        return "".join(line + "\n" for line in self.snapshot_lines())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.snapshot_text())

    def state_digest(self) -> HashDigest:
        return digest(encode(("ledger", self.tangle.state_digest(), self.canonical_tip.id,
                              tuple(sorted(self.utxo.outputs.items())))))

    @classmethod
    def from_lines(cls, lines) -> "Ledger":
        ledger: Optional[Ledger] = None
        for n, line in enumerate(lines, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.pop("kind")
            if kind == "config":
                ledger = cls(LedgerConfig(**rec))
                continue
            if ledger is None:
                ledger = cls()
            if kind == "alloc":
                ledger.endow(bytes.fromhex(rec["address"]), rec["amount"])
            elif kind == "tangle":
                ledger.submit(TangleMessage.from_bytes(bytes.fromhex(rec["raw"])))
            elif kind == "block":
                ledger.submit_block(Block.from_bytes(bytes.fromhex(rec["raw"])))
            else:
                raise ValueError(f"line {n}: unknown record kind {kind!r}")
        return ledger if ledger is not None else cls()

    @classmethod
    def load(cls, path) -> "Ledger":
        with open(path, encoding="utf-8") as fh:
            return cls.from_lines(fh)
