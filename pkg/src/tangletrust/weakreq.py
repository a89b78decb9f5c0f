"""PoW-free submission for weak devices, gated by Proof-of-Burn and paid per message."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Sequence

from .core import PASS, Check, HashDigest, KeyPair, NodeId, Signature, digest, encode, fail, verify
from .trade import BURN_ADDRESS, Bundle, ProofOfBurn, UtxoSet, Wallet, validate_bundle, verify_pob

DEFAULT_BURN_PER_MSG = 1
DEFAULT_MIN_SHARE = 1


class WeakReqRejected(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class Abandoned(Exception):
    """The device would not raise its fee after the timer expired."""


def create_pob(wallet: Wallet, amount: int, ledger) -> ProofOfBurn:
    """Burn ``amount`` from the wallet and return the proof once the bundle is attached.

    ``ledger`` needs ``utxo`` and ``publish_bundle(keys, bundle)``.
    """
    bundle = wallet.pay(ledger.utxo, [(BURN_ADDRESS, amount)])
    ledger.publish_bundle(wallet.keys, bundle)
    return ProofOfBurn(bundle.id, 0, amount)


@dataclass(frozen=True)
class WeakReqRequest:
    sender: NodeId
    fee_total: int
    n_msg: int
    pob: ProofOfBurn
    timer_interval: int
    attempt: int = 0
    signature: Optional[Signature] = None

    @property
    def body(self) -> bytes:
        return encode(
            ("weakreq-req", self.sender, self.fee_total, self.n_msg, self.pob.fields(), self.timer_interval, self.attempt)
        )

    def fields(self) -> tuple:
        sig = None if self.signature is None else self.signature.fields()
        return ("weakreq-req", self.sender, self.fee_total, self.n_msg, self.pob.fields(), self.timer_interval,
                self.attempt, sig)

    @property
    def id(self) -> HashDigest:
        return digest(encode(self.fields()))

    @property
    def share(self) -> float:
        return self.fee_total / self.n_msg if self.n_msg else 0.0

    @classmethod
    def from_fields(cls, f) -> "WeakReqRequest":
        _, sender, fee, n, pob, timer, attempt, sig = f
        return cls(sender, fee, n, ProofOfBurn.from_fields(pob), timer, attempt,
                   None if sig is None else Signature.from_fields(sig))


def make_request(keys: KeyPair, fee_total: int, n_msg: int, pob: ProofOfBurn, timer_interval: int = 10,
                 attempt: int = 0) -> WeakReqRequest:
    unsigned = WeakReqRequest(keys.node_id, fee_total, n_msg, pob, timer_interval, attempt)
    return WeakReqRequest(keys.node_id, fee_total, n_msg, pob, timer_interval, attempt, keys.sign(unsigned.body))


def validate_request(
    req: WeakReqRequest,
    view: UtxoSet,
    burn_per_msg: int = DEFAULT_BURN_PER_MSG,
    min_fee_unit: int = 0,
) -> Check:
    if req.n_msg < 1:
        return fail("BadNMsg")
    if req.fee_total < req.n_msg * min_fee_unit:
        return fail("FeeTooLow")
    if req.signature is None or not verify(req.sender, req.body, req.signature):
        return fail("BadSignature")
    pob_check = verify_pob(req.pob, view, req.sender)
    if not pob_check:
        return pob_check
    if req.pob.amount < burn_per_msg * req.n_msg:
        return fail("BurnTooSmall")
    return PASS


def fee_shares(fee_total: int, n_msg: int) -> List[int]:
    """Even integer split; the remainder rides on the final message."""
    base = fee_total // n_msg
    shares = [base] * n_msg
    shares[-1] += fee_total - base * n_msg
    return shares


def share_for(req: WeakReqRequest, index: int) -> int:
    base = req.fee_total // req.n_msg
    if index == req.n_msg:
        return req.fee_total - base * (req.n_msg - 1)
    return base


@dataclass(frozen=True)
class ProfitabilityPolicy:
    """Serve a request only when each message pays at least ``min_share``."""

    min_share: int = DEFAULT_MIN_SHARE

    def accepts(self, req: WeakReqRequest) -> bool:
        return req.n_msg >= 1 and req.fee_total >= self.min_share * req.n_msg


@dataclass(frozen=True)
class EscalationPolicy:
    factor: float = 2.0
    max_attempts: int = 0

    def next_fee(self, fee: int) -> int:
        return max(fee + 1, math.ceil(fee * self.factor))


@dataclass(frozen=True)
class WeakReqMessage:
    request_ref: HashDigest
    payload: object
    fee_share: int
    recipient_miner: NodeId
    index: int
    bundle: Bundle
    signature: Optional[Signature] = None

    @property
    def body(self) -> bytes:
        return encode(("weakreq-msg", self.request_ref, self.payload, self.fee_share, self.recipient_miner,
                       self.index, self.bundle.fields()))

    def fields(self) -> tuple:
        sig = None if self.signature is None else self.signature.fields()
        return ("weakreq-msg", self.request_ref, self.payload, self.fee_share, self.recipient_miner, self.index,
                self.bundle.fields(), sig)

    @classmethod
    def from_fields(cls, f) -> "WeakReqMessage":
        _, ref, payload, share, miner, index, bundle, sig = f
        return cls(ref, payload, share, miner, index, Bundle.from_fields(bundle),
                   None if sig is None else Signature.from_fields(sig))


def make_weakreq_message(wallet: Wallet, view: UtxoSet, req: WeakReqRequest, miner: NodeId, index: int,
                         payload=b"") -> WeakReqMessage:
    share = share_for(req, index)
    bundle = wallet.pay(view, [(miner, share)])
    unsigned = WeakReqMessage(req.id, payload, share, miner, index, bundle)
    return WeakReqMessage(req.id, payload, share, miner, index, bundle, wallet.keys.sign(unsigned.body))


def validate_weakreq_message(
    msg: WeakReqMessage,
    req: WeakReqRequest,
    anchor_miner: NodeId,
    served: Sequence[int],
    view: UtxoSet,
    now: int = 0,
) -> Check:
    if msg.request_ref != req.id:
        return fail("BadIndex")
    if msg.recipient_miner != anchor_miner:
        return fail("WrongMiner")
    if msg.index > req.n_msg:
        return fail("OverQuota")
    if msg.index < 1 or msg.index in served:
        return fail("BadIndex")
    if msg.signature is None or not verify(req.sender, msg.body, msg.signature):
        return fail("BadSignature")
    share = share_for(req, msg.index)
    paid = sum(a for addr, a in msg.bundle.outputs if addr == anchor_miner)
    if msg.fee_share < share or paid < share:
        return fail("UnderpaidShare")
    return validate_bundle(msg.bundle, view, now)


def miner_serve(miner, ledger, incoming: WeakReqMessage):
    """Validate a device message for a request this miner anchored, then attach it with PoW.

    ``miner`` is a ledger account (keys plus sequence counter). Returns the
    attached Tangle message; raises :class:`WeakReqRejected` otherwise.
    """
    anchored = ledger.anchored_request(incoming.request_ref)
    if anchored is None:
        raise WeakReqRejected("NotAnchored")
    req, block = anchored
    if block.miner != miner.node_id or incoming.recipient_miner != miner.node_id:
        raise WeakReqRejected("WrongMiner")
    check = validate_weakreq_message(incoming, req, block.miner, ledger.served_indices(req.id), ledger.utxo,
                                     ledger.now)
    if not check:
        raise WeakReqRejected(check.reason)
    from .tangle import MessageKind

    return ledger.issue(miner, MessageKind.WEAKREQ, ("weakreq", incoming.fields()))


class Gateway(Protocol):
    now: int
    utxo: UtxoSet

    def broadcast(self, req: WeakReqRequest) -> None: ...

    def anchor_of(self, request_id: HashDigest) -> Optional[NodeId]: ...

    def tick(self) -> None: ...

    def send(self, msg: WeakReqMessage) -> HashDigest: ...


@dataclass
class WeakDevice:
    wallet: Wallet
    fee: int
    n_msg: int
    pob: ProofOfBurn
    timer_interval: int = 10
    broadcasts: int = 0
    stale: List[HashDigest] = field(default_factory=list)

    @property
    def node_id(self) -> NodeId:
        return self.wallet.address


def device_run(device: WeakDevice, gateway: Gateway, escalation: EscalationPolicy = EscalationPolicy(),
               payloads: Optional[Sequence[object]] = None, max_ticks: int = 100_000) -> List[HashDigest]:
    """Request, wait for anchoring (escalating on timer expiry), then send every message."""
    keys = device.wallet.keys
    attempt = 0
    req = make_request(keys, device.fee, device.n_msg, device.pob, device.timer_interval, attempt)
    superseded: List[HashDigest] = []
    gateway.broadcast(req)
    device.broadcasts = 1
    deadline = gateway.now + device.timer_interval
    start = gateway.now
    miner = gateway.anchor_of(req.id)
    while miner is None:
        if gateway.now - start > max_ticks:
            raise Abandoned("gave up waiting for a miner")
        gateway.tick()
        for old in superseded:
            if gateway.anchor_of(old) is not None and old not in device.stale:
                device.stale.append(old)
        miner = gateway.anchor_of(req.id)
        if miner is None and gateway.now >= deadline:
            if attempt >= escalation.max_attempts:
                raise Abandoned(f"fee {req.fee_total} not accepted and device will not pay more")
            attempt += 1
            superseded.append(req.id)
            device.fee = escalation.next_fee(device.fee)
            req = make_request(keys, device.fee, device.n_msg, device.pob, device.timer_interval, attempt)
            gateway.broadcast(req)
            device.broadcasts += 1
            deadline = gateway.now + device.timer_interval
    acks = []
    for i in range(1, req.n_msg + 1):
        body = payloads[i - 1] if payloads is not None else b""
        msg = make_weakreq_message(device.wallet, gateway.utxo, req, miner, i, body)
        acks.append(gateway.send(msg))
    return acks
