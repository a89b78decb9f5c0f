"""Bundle payments, Initial onboarding and the Rep trade protocol."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

from .core import (
    PASS,
    Check,
    HashDigest,
    KeyPair,
    Money,
    NodeId,
    PowSolution,
    Signature,
    digest,
    encode,
    fail,
    node_id_for,
    pow_verify,
    verify,
)

# no private key maps to this address
BURN_ADDRESS = digest(bytes(64))
RATING_SCALE = 1000
DEFAULT_TRADE_TIMEOUT = 1000

OutPoint = Tuple[HashDigest, int]


def escrow_address(session_id: HashDigest) -> bytes:
    return digest(encode(("escrow", session_id)))


# -- bundles ------------------------------------------------------------------

@dataclass(frozen=True)
class Bundle:
    inputs: Tuple[OutPoint, ...]
    outputs: Tuple[Tuple[bytes, int], ...]
    signatures: Tuple[Signature, ...] = ()

    @property
    def body(self) -> bytes:
        return encode(("bundle-body", self.inputs, self.outputs))

    def fields(self) -> tuple:
        return ("bundle", self.inputs, self.outputs, tuple(s.fields() for s in self.signatures))

    @property
    def id(self) -> HashDigest:
        return digest(encode(self.fields()))

    @property
    def total_out(self) -> int:
        return sum(amount for _, amount in self.outputs)

    @classmethod
    def from_fields(cls, fields) -> "Bundle":
        tag, inputs, outputs, sigs = fields
        if tag != "bundle":
            raise ValueError("not a bundle")
        return cls(
            tuple((bytes(b), int(i)) for b, i in inputs),
            tuple((bytes(a), int(v)) for a, v in outputs),
            tuple(Signature.from_fields(s) for s in sigs),
        )

    def signed_by(self, *keys: KeyPair) -> "Bundle":
        unsigned = Bundle(self.inputs, self.outputs)
        return Bundle(self.inputs, self.outputs, tuple(k.sign(unsigned.body) for k in keys))

    def signers(self) -> List[NodeId]:
        body = self.body
        return [node_id_for(s.public_key) for s in self.signatures if verify(node_id_for(s.public_key), body, s)]


@dataclass(frozen=True)
class EscrowTerms:
    buyer: NodeId
    seller: NodeId
    mediator: Optional[NodeId]
    expires_at: int


class InsufficientFunds(ValueError):
    pass


class UtxoSet:
    """Confirmed outputs plus the escrow rules that govern escrow addresses."""

    def __init__(self):
        self.outputs: Dict[OutPoint, Tuple[bytes, Money]] = {}
        self.spent: Dict[OutPoint, HashDigest] = {}
        self.bundles: Dict[HashDigest, Bundle] = {}
        self.escrows: Dict[bytes, EscrowTerms] = {}
        self.burned = Money(0)
        self.minted = Money(0)
        self._by_addr: Dict[bytes, set] = {}

    def _add(self, outpoint: OutPoint, address: bytes, amount: int) -> None:
        self.outputs[outpoint] = (address, Money(amount))
        self._by_addr.setdefault(address, set()).add(outpoint)

    def credit(self, outpoint: OutPoint, address: bytes, amount: int) -> None:
        """Mint new tokens (endowment or coinbase)."""
        if outpoint in self.outputs or outpoint in self.spent:
            raise ValueError("outpoint already exists")
        self._add(outpoint, address, amount)
        self.minted += amount

    def balance(self, address: bytes) -> int:
        return int(sum(self.outputs[op][1] for op in self._by_addr.get(address, ())))

    def owned(self, address: bytes) -> List[Tuple[OutPoint, Money]]:
        return sorted((op, self.outputs[op][1]) for op in self._by_addr.get(address, ()))

    def supply(self) -> int:
        return sum(v for a, v in self.outputs.values() if a != BURN_ADDRESS)

    def apply(self, bundle: Bundle) -> None:
        bid = bundle.id
        for op in bundle.inputs:
            addr, _ = self.outputs.pop(op)
            self._by_addr[addr].discard(op)
            self.spent[op] = bid
        for i, (addr, amount) in enumerate(bundle.outputs):
            self._add((bid, i), addr, amount)
            if addr == BURN_ADDRESS:
                self.burned += amount
        self.bundles[bid] = bundle


def _escrow_spend_ok(terms: EscrowTerms, signers: Sequence[NodeId], bundle: Bundle, now: int) -> bool:
    payees = {addr for addr, amount in bundle.outputs if amount > 0}
    if terms.buyer in signers and payees <= {terms.seller}:
        return True
    if terms.mediator is not None and terms.mediator in signers and (
        payees <= {terms.seller} or payees <= {terms.buyer}
    ):
        return True
    if now >= terms.expires_at and terms.buyer in signers and payees <= {terms.buyer}:
        return True
    return False


def validate_bundle(bundle: Bundle, view: UtxoSet, now: int = 0) -> Check:
    if not bundle.inputs or not bundle.outputs:
        return fail("EmptyBundle")
    if len(set(bundle.inputs)) != len(bundle.inputs):
        return fail("InputSpent")
    if any(amount < 0 for _, amount in bundle.outputs):
        return fail("ValueOverdraw")
    signers = bundle.signers()
    if len(signers) != len(bundle.signatures):
        return fail("BadSignature")
    total_in = 0
    for op in bundle.inputs:
        if op in view.spent:
            return fail("InputSpent")
        if op not in view.outputs:
            return fail("InputUnknown")
        owner, amount = view.outputs[op]
        total_in += amount
        if owner == BURN_ADDRESS:
            return fail("BurnedOutput")
        terms = view.escrows.get(owner)
        if terms is not None:
            if not _escrow_spend_ok(terms, signers, bundle, now):
                return fail("EscrowUnauthorized")
        elif owner not in signers:
            return fail("BadSignature")
    if bundle.total_out > total_in:
        return fail("ValueOverdraw")
    return PASS


class Wallet:
    """Key pair plus deterministic coin selection against a :class:`UtxoSet`."""

    def __init__(self, keys: KeyPair):
        self.keys = keys

    @property
    def address(self) -> NodeId:
        return self.keys.node_id

    def pay(self, view: UtxoSet, payments: Sequence[Tuple[bytes, int]], *, exclude=()) -> Bundle:
        need = sum(a for _, a in payments)
        chosen, total = [], 0
        for op, amount in view.owned(self.address):
            if op in exclude:
                continue
            chosen.append(op)
            total += amount
            if total >= need:
                break
        if total < need or not chosen:
            raise InsufficientFunds(f"need {need}, have {total}")
        outputs = list(payments)
        if total > need:
            outputs.append((self.address, total - need))
        return Bundle(tuple(chosen), tuple(outputs)).signed_by(self.keys)


# -- Initial protocol ---------------------------------------------------------

@dataclass(frozen=True)
class ProofOfBurn:
    bundle_id: HashDigest
    index: int
    amount: int

    def fields(self):
        return ("pob", self.bundle_id, self.index, self.amount)

    @classmethod
    def from_fields(cls, fields) -> "ProofOfBurn":
        tag, bid, index, amount = fields
        return cls(bid, index, amount)


def verify_pob(pob: Optional[ProofOfBurn], view: UtxoSet, owner: Optional[NodeId] = None) -> Check:
    """A burn verifies when its bundle is confirmed and the output pays the burn address."""
    if pob is None:
        return fail("MissingPoB")
    bundle = view.bundles.get(pob.bundle_id)
    if bundle is None:
        return fail("UnconfirmedPoB")
    if not 0 <= pob.index < len(bundle.outputs):
        return fail("BadPoB")
    addr, amount = bundle.outputs[pob.index]
    if addr != BURN_ADDRESS or amount != pob.amount:
        return fail("BadPoB")
    if owner is not None and owner not in bundle.signers():
        return fail("ForeignPoB")
    return PASS


@dataclass(frozen=True)
class InitialMessage:
    sender: NodeId
    service_descriptor: str
    content_pointer: str
    pob: Optional[ProofOfBurn]
    pow: Optional[PowSolution]

    @property
    def body(self) -> bytes:
        return encode(
            (
                "initial",
                self.sender,
                self.service_descriptor,
                self.content_pointer,
                None if self.pob is None else self.pob.fields(),
            )
        )

    def fields(self):
        return (
            "initial",
            self.sender,
            self.service_descriptor,
            self.content_pointer,
            None if self.pob is None else self.pob.fields(),
            None if self.pow is None else self.pow.fields(),
        )

    @classmethod
    def from_fields(cls, fields) -> "InitialMessage":
        _, sender, desc, pointer, pob, pow_ = fields
        return cls(
            sender,
            desc,
            pointer,
            None if pob is None else ProofOfBurn.from_fields(pob),
            None if pow_ is None else PowSolution.from_fields(pow_),
        )


class WeakOnboarding(ValueError):
    pass


class DuplicateIdentity(ValueError):
    pass


@dataclass
class Identity:
    node_id: NodeId
    service_descriptor: str
    content_pointer: str
    pob_amount: int
    pow_bits: int
    registered_at: int
    score: float = 0.0


class Registry:
    def __init__(self, onboarding_bits: int = 8, onboarding_burn: int = 1):
        self.onboarding_bits = onboarding_bits
        self.onboarding_burn = onboarding_burn
        self.identities: Dict[NodeId, Identity] = {}
        self.services: Dict[str, List[NodeId]] = {}
        self.used_pobs: set = set()

    def discover(self, descriptor: str) -> List[NodeId]:
        return list(self.services.get(descriptor, ()))

    def __contains__(self, node_id) -> bool:
        return node_id in self.identities


def register_initial(msg: InitialMessage, registry: Registry, view: UtxoSet, now: int = 0) -> Identity:
    """Admit a newcomer; it starts with reputation 0 whatever it burned."""
    if msg.sender in registry.identities:
        raise DuplicateIdentity(msg.sender.hex()[:16])
    if msg.pow is None or msg.pow.difficulty_bits < registry.onboarding_bits or not pow_verify(msg.body, msg.pow):
        raise WeakOnboarding("onboarding proof-of-work below floor")
    if msg.pob is None or msg.pob.amount < registry.onboarding_burn:
        raise WeakOnboarding("onboarding burn below floor")
    if not verify_pob(msg.pob, view, msg.sender):
        raise WeakOnboarding("onboarding burn does not verify")
    if (msg.pob.bundle_id, msg.pob.index) in registry.used_pobs:
        raise WeakOnboarding("burn already used")
    ident = Identity(
        msg.sender, msg.service_descriptor, msg.content_pointer, msg.pob.amount, msg.pow.difficulty_bits, now
    )
    registry.identities[msg.sender] = ident
    registry.services.setdefault(msg.service_descriptor, []).append(msg.sender)
    registry.used_pobs.add((msg.pob.bundle_id, msg.pob.index))
    return ident


# -- Rep protocol -------------------------------------------------------------

class TradeState(str, Enum):
    REQUESTED = "Requested"
    ACKED = "Acked"
    MEDIATOR_PROPOSED = "MediatorProposed"
    MEDIATOR_CHOSEN = "MediatorChosen"
    FUNDS_LOCKED = "FundsLocked"
    DELIVERED = "Delivered"
    COMPLAINED = "Complained"
    MEDIATOR_RELEASED = "MediatorReleased"
    BUYER_RELEASED = "BuyerReleased"
    REVIEWED = "Reviewed"
    DENIED = "Denied"
    EXPIRED = "Expired"


RELEASE_STATES = (TradeState.BUYER_RELEASED, TradeState.MEDIATOR_RELEASED)
TERMINAL_STATES = (TradeState.REVIEWED, TradeState.DENIED, TradeState.EXPIRED) + RELEASE_STATES


class TradeError(Exception):
    reason = "TradeError"

    def __init__(self, detail: str = ""):
        super().__init__(f"{self.reason}: {detail}" if detail else self.reason)


class IllegalTransition(TradeError):
    reason = "IllegalTransition"


class UnauthorizedRole(TradeError):
    reason = "UnauthorizedRole"


class MediatorNotInIntersection(TradeError):
    reason = "MediatorNotInIntersection"


class BallotStuffing(TradeError):
    reason = "BallotStuffing"


class NoPayment(TradeError):
    reason = "NoPayment"


class SellerNeverAcked(TradeError):
    reason = "SellerNeverAcked"


class BadEscrow(TradeError):
    reason = "BadEscrow"


@dataclass(frozen=True)
class TradeEvent:
    """One Rep protocol message as seen by the state machine."""

    name: str
    sender: NodeId
    timestamp: int = 0
    nofeedback: bool = False
    mediators: Tuple[NodeId, ...] = ()
    mediator: Optional[NodeId] = None
    bundle: Optional[Bundle] = None
    rating: Optional[int] = None
    note: str = ""


@dataclass(frozen=True)
class TradeSession:
    session_id: HashDigest
    buyer: NodeId
    seller: NodeId
    price: int
    created_at: int = 0
    buyer_mediators: Tuple[NodeId, ...] = ()
    seller_mediators: Tuple[NodeId, ...] = ()
    mediator: Optional[NodeId] = None
    state: TradeState = TradeState.REQUESTED
    nofeedback: bool = False
    acked: bool = False
    escrow_bundle: Optional[Bundle] = None
    release_bundle: Optional[Bundle] = None
    released_to: Optional[NodeId] = None
    feedback_rating: Optional[int] = None
    timeout: int = DEFAULT_TRADE_TIMEOUT
    history: Tuple[Tuple[int, str, str], ...] = ()

    @property
    def uses_mediator(self) -> bool:
        return bool(self.buyer_mediators)

    @property
    def escrow(self) -> bytes:
        return escrow_address(self.session_id)

    @property
    def escrow_outpoint(self) -> Optional[OutPoint]:
        if self.escrow_bundle is None:
            return None
        for i, (addr, _) in enumerate(self.escrow_bundle.outputs):
            if addr == self.escrow:
                return (self.escrow_bundle.id, i)
        return None

    def terms(self) -> EscrowTerms:
        return EscrowTerms(self.buyer, self.seller, self.mediator, self.created_at + self.timeout)


def open_session(
    session_id: HashDigest,
    buyer: NodeId,
    seller: NodeId,
    price: int,
    mediators: Sequence[NodeId] = (),
    timestamp: int = 0,
    timeout: int = DEFAULT_TRADE_TIMEOUT,
) -> TradeSession:
    if buyer == seller:
        raise UnauthorizedRole("buyer and seller must differ")
    if price <= 0:
        raise IllegalTransition("price must be positive")
    return TradeSession(
        session_id,
        buyer,
        seller,
        price,
        created_at=timestamp,
        buyer_mediators=tuple(mediators),
        timeout=timeout,
        history=((timestamp, "request", TradeState.REQUESTED.value),),
    )


def _require(session: TradeSession, event: TradeEvent, role: NodeId, *states: TradeState) -> None:
    if session.state not in states:
        raise IllegalTransition(f"{event.name} not allowed in {session.state.value}")
    if event.sender != role:
        raise UnauthorizedRole(f"{event.name} must come from the {'buyer' if role == session.buyer else 'other party'}")


def _single_escrow_spend(session: TradeSession, bundle: Optional[Bundle], payee: NodeId) -> None:
    if bundle is None or session.escrow_outpoint not in bundle.inputs:
        raise BadEscrow("release must spend the session escrow")
    payees = {addr for addr, amount in bundle.outputs if amount > 0}
    if payees != {payee}:
        raise BadEscrow("escrow must be released to a single party")


def trade_step(session: Optional[TradeSession], event: TradeEvent) -> TradeSession:
    """Apply one protocol message; raise :class:`TradeError` and leave ``session`` untouched on refusal."""
    if event.name == "feedback":
        return submit_feedback(session, event)
    if session is None:
        raise IllegalTransition("no such session")
    s = session
    name = event.name
    changes: dict = {}
    if name == "ack":
        _require(s, event, s.seller, TradeState.REQUESTED)
        changes["nofeedback"] = event.nofeedback
        changes["acked"] = True
        if s.uses_mediator:
            if not event.mediators:
                raise MediatorNotInIntersection("seller offered no mediators")
            changes["seller_mediators"] = tuple(event.mediators)
            changes["state"] = TradeState.MEDIATOR_PROPOSED
        else:
            changes["state"] = TradeState.ACKED
    elif name == "deny":
        _require(s, event, s.seller, TradeState.REQUESTED)
        changes["state"] = TradeState.DENIED
    elif name == "choose":
        _require(s, event, s.buyer, TradeState.MEDIATOR_PROPOSED)
        m = event.mediator
        if m is None or m not in s.seller_mediators or m not in s.buyer_mediators:
            raise MediatorNotInIntersection("mediator must appear on both lists")
        if m in (s.buyer, s.seller):
            raise MediatorNotInIntersection("a party cannot mediate its own trade")
        changes["mediator"] = m
        changes["state"] = TradeState.MEDIATOR_CHOSEN
    elif name == "lock":
        allowed = TradeState.MEDIATOR_CHOSEN if s.uses_mediator else TradeState.ACKED
        _require(s, event, s.buyer, allowed)
        b = event.bundle
        if b is None or sum(a for addr, a in b.outputs if addr == s.escrow) != s.price:
            raise BadEscrow("lock must pay exactly the price into escrow")
        if sum(1 for addr, _ in b.outputs if addr == s.escrow) != 1:
            raise BadEscrow("exactly one escrow output")
        changes["escrow_bundle"] = b
        changes["state"] = TradeState.FUNDS_LOCKED
    elif name == "deliver":
        _require(s, event, s.seller, TradeState.FUNDS_LOCKED)
        changes["state"] = TradeState.DELIVERED
    elif name == "release":
        _require(s, event, s.buyer, TradeState.DELIVERED)
        _single_escrow_spend(s, event.bundle, s.seller)
        changes.update(release_bundle=event.bundle, released_to=s.seller, state=TradeState.BUYER_RELEASED)
    elif name == "complain":
        if s.state not in (TradeState.FUNDS_LOCKED, TradeState.DELIVERED):
            raise IllegalTransition(f"complaint not allowed in {s.state.value}")
        if s.mediator is None:
            raise IllegalTransition("no mediator to hand the dispute to")
        if event.sender not in (s.buyer, s.seller):
            raise UnauthorizedRole("only trade parties may complain")
        changes["state"] = TradeState.COMPLAINED
    elif name == "resolve":
        if s.state != TradeState.COMPLAINED:
            raise IllegalTransition(f"resolve not allowed in {s.state.value}")
        if event.sender != s.mediator:
            raise UnauthorizedRole("only the chosen mediator may release")
        b = event.bundle
        payee = s.seller if b is not None and any(a == s.seller for a, _ in b.outputs) else s.buyer
        _single_escrow_spend(s, b, payee)
        changes.update(release_bundle=b, released_to=payee, state=TradeState.MEDIATOR_RELEASED)
    elif name == "expire":
        if s.state in TERMINAL_STATES:
            raise IllegalTransition(f"session already {s.state.value}")
        if event.timestamp < s.created_at + s.timeout:
            raise IllegalTransition("session has not timed out")
        if s.escrow_bundle is not None:
            if event.sender != s.buyer:
                raise UnauthorizedRole("only the buyer claims an expiry refund")
            _single_escrow_spend(s, event.bundle, s.buyer)
            changes.update(release_bundle=event.bundle, released_to=s.buyer)
        elif event.sender not in (s.buyer, s.seller):
            raise UnauthorizedRole("only trade parties may expire a session")
        changes["state"] = TradeState.EXPIRED
    else:
        raise IllegalTransition(f"unknown event {name!r}")
    changes["history"] = s.history + ((event.timestamp, name, changes.get("state", s.state).value),)
    return dataclasses.replace(s, **changes)


def submit_feedback(session: Optional[TradeSession], event: TradeEvent) -> TradeSession:
    """The buyer's single review, coupled to an escrowed payment the seller agreed to."""
    if session is None or not session.acked:
        raise SellerNeverAcked("no trade the seller acknowledged")
    s = session
    if event.sender != s.buyer:
        raise UnauthorizedRole("only the buyer reviews a trade")
    if s.nofeedback:
        raise IllegalTransition("seller opted out of feedback")
    if s.state == TradeState.REVIEWED or s.feedback_rating is not None:
        raise BallotStuffing("trade already reviewed")
    if s.escrow_bundle is None:
        raise NoPayment("no funds were ever locked")
    if s.state not in RELEASE_STATES:
        raise IllegalTransition(f"feedback not allowed in {s.state.value}")
    rating = event.rating
    if rating is None or not 0 <= rating <= RATING_SCALE:
        raise IllegalTransition("rating must lie in [0, 1]")
    return dataclasses.replace(
        s,
        state=TradeState.REVIEWED,
        feedback_rating=rating,
        history=s.history + ((event.timestamp, "feedback", TradeState.REVIEWED.value),),
    )


@dataclass(frozen=True)
class Feedback:
    trade_ref: Optional[HashDigest]
    rater: NodeId
    subject: NodeId
    rating: int  # thousandths
    amount: int
    payment_ref: Optional[HashDigest]
    message_id: HashDigest

    @property
    def value(self) -> float:
        return self.rating / RATING_SCALE


def rating_to_milli(rating: float) -> int:
    if not 0.0 <= rating <= 1.0:
        raise ValueError("rating must lie in [0, 1]")
    return int(round(rating * RATING_SCALE))
