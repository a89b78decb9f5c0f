"""The DAG ledger: two-parent attachment, tips, cumulative weight, conflicts."""
from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Callable, Dict, Iterable, List, Optional, Set, Tuple

from .core import (
    ZERO_DIGEST,
    HashDigest,
    KeyPair,
    NodeId,
    PowSolution,
    Signature,
    decode,
    digest,
    encode,
    pow_solve,
    pow_verify,
    verify,
)

DEFAULT_CONFIRMATION_THRESHOLD = 10
# non-tip messages considered when only one tip exists
RECENT_FALLBACK = 8


class MessageKind(str, Enum):
    NORMAL = "normal"
    DUMB = "dumb"
    WEAKREQ = "weakreq"


class TangleError(Exception):
    """A message was refused; the ledger state is unchanged."""

    reason = "Rejected"

    def __init__(self, detail: str = ""):
        super().__init__(f"{self.reason}: {detail}" if detail else self.reason)


class UnknownParent(TangleError):
    reason = "UnknownParent"


class BadParents(TangleError):
    reason = "BadParents"


class BadPow(TangleError):
    reason = "BadPow"


class BadSignature(TangleError):
    reason = "BadSignature"


class StaleSeqNo(TangleError):
    reason = "StaleSeqNo"


class DuplicateMessage(TangleError):
    reason = "DuplicateMessage"


class EmptyLedger(TangleError):
    reason = "EmptyLedger"


class UnknownMessage(KeyError):
    pass


UNDECIDED = None
GENESIS_SIGNATURE = Signature(b"", b"")


@dataclass(frozen=True)
class TangleMessage:
    kind: MessageKind
    parents: Tuple[HashDigest, ...]
    payload: object
    sender: NodeId
    seq_no: int
    timestamp: int
    pow: PowSolution
    signature: Signature

    @cached_property
    def body(self) -> bytes:
        return encode(
            ("tangle", self.kind.value, tuple(self.parents), self.payload, self.sender, self.seq_no, self.timestamp)
        )

    @cached_property
    def signed_bytes(self) -> bytes:
        return encode((self.body, self.pow.fields()))

    @cached_property
    def raw(self) -> bytes:
        """Canonical record bytes; the message id is their digest."""
        return encode((self.body, self.pow.fields(), self.signature.fields()))

    @cached_property
    def id(self) -> HashDigest:
        return digest(self.raw)

    @property
    def is_genesis(self) -> bool:
        return not self.parents

    @classmethod
    def from_bytes(cls, raw: bytes) -> "TangleMessage":
        body, pow_fields, sig_fields = decode(raw)
        tag, kind, parents, payload, sender, seq_no, timestamp = decode(body)
        if tag != "tangle":
            raise ValueError("not a tangle record")
        return cls(
            MessageKind(kind),
            tuple(parents),
            payload,
            sender,
            seq_no,
            timestamp,
            PowSolution.from_fields(pow_fields),
            Signature.from_fields(sig_fields),
        )


def make_message(
    keys: KeyPair,
    kind: MessageKind,
    parents: Tuple[HashDigest, HashDigest],
    payload,
    seq_no: int,
    timestamp: int,
    difficulty_bits: int,
    start_nonce: int = 0,
    should_stop: Optional[Callable[[], bool]] = None,
) -> TangleMessage:
    """Build, solve and sign a message from ``keys``; ``should_stop`` can abort the solve."""
    unsigned = TangleMessage(
        kind, tuple(parents), payload, keys.node_id, seq_no, timestamp, PowSolution(0, 0, ZERO_DIGEST), GENESIS_SIGNATURE
    )
    solution = pow_solve(unsigned.body, difficulty_bits, start_nonce, should_stop=should_stop)
    solved = TangleMessage(kind, tuple(parents), payload, keys.node_id, seq_no, timestamp, solution, GENESIS_SIGNATURE)
    return TangleMessage(
        kind, tuple(parents), payload, keys.node_id, seq_no, timestamp, solution, keys.sign(solved.signed_bytes)
    )


def genesis_message(label: str = "genesis") -> TangleMessage:
    body_payload = ("genesis", label)
    unsigned = TangleMessage(
        MessageKind.NORMAL, (), body_payload, ZERO_DIGEST, 0, 0, PowSolution(0, 0, ZERO_DIGEST), GENESIS_SIGNATURE
    )
    return TangleMessage(
        MessageKind.NORMAL, (), body_payload, ZERO_DIGEST, 0, 0, pow_solve(unsigned.body, 0), GENESIS_SIGNATURE
    )


def bundle_spends(msg: TangleMessage) -> List[tuple]:
    """Outpoints consumed by any bundle embedded in the message payload.

    Bundles are embedded as ``("bundle", inputs, outputs, signatures)`` at any
    depth; each input is a ``(bundle_id, index)`` pair.
    """
    found: List[tuple] = []
    stack = [msg.payload]
    while stack:
        item = stack.pop()
        if isinstance(item, tuple):
            if len(item) == 4 and item[0] == "bundle" and isinstance(item[1], tuple):
                found.extend(tuple(i) for i in item[1])
            else:
                stack.extend(item)
    return found


class TangleState:
    """Single-writer DAG store.

    ``weight_mode="eager"`` updates every ancestor's cached weight on attach,
    which is quadratic over a long run; ``"lazy"`` computes weights on demand
    and is what the simulator uses.
    """

    def __init__(
        self,
        genesis: Optional[TangleMessage] = None,
        *,
        min_pow_bits: int = 0,
        weight_mode: str = "eager",
        spends: Callable[[TangleMessage], Iterable[tuple]] = bundle_spends,
    ):
        if weight_mode not in ("eager", "lazy"):
            raise ValueError("weight_mode must be 'eager' or 'lazy'")
        self.min_pow_bits = min_pow_bits
        self.weight_mode = weight_mode
        self._spends = spends
        self.messages: Dict[HashDigest, TangleMessage] = {}
        self.children: Dict[HashDigest, List[HashDigest]] = {}
        self.order: Dict[HashDigest, int] = {}
        self.tips: Dict[HashDigest, None] = {}  # insertion-ordered set
        self.weight_cache: Dict[HashDigest, int] = {}
        self.spenders: Dict[tuple, List[HashDigest]] = {}
        self.last_seq: Dict[NodeId, int] = {}
        self.last_ts: Dict[NodeId, int] = {}
        self.genesis_id: Optional[HashDigest] = None
        if genesis is not None:
            self._insert(genesis)
            self.genesis_id = genesis.id

    def __len__(self) -> int:
        return len(self.messages)

    def __contains__(self, msg_id) -> bool:
        return msg_id in self.messages

    @property
    def conflict_sets(self) -> Dict[tuple, List[HashDigest]]:
        return {op: ids for op, ids in self.spenders.items() if len(ids) > 1}

    def sorted_tips(self) -> List[HashDigest]:
        return list(self.tips)  # insertion order is attach order

    def state_digest(self) -> HashDigest:
        ordered = sorted(self.messages, key=self.order.__getitem__)
        return digest(encode(("tangle-state", tuple(ordered))))

    def ancestors(self, msg_id: HashDigest) -> Set[HashDigest]:
        seen: Set[HashDigest] = set()
        stack = list(self.messages[msg_id].parents)
        while stack:
            p = stack.pop()
            if p not in seen:
                seen.add(p)
                stack.extend(self.messages[p].parents)
        return seen

    def descendants(self, msg_id: HashDigest) -> Set[HashDigest]:
        seen: Set[HashDigest] = set()
        stack = list(self.children.get(msg_id, ()))
        while stack:
            c = stack.pop()
            if c not in seen:
                seen.add(c)
                stack.extend(self.children.get(c, ()))
        return seen

    def all_weights(self) -> Dict[HashDigest, int]:
        """Cumulative weight of every message in one reverse-topological pass."""
        ordered = sorted(self.messages, key=self.order.__getitem__)
        bit = {m: 1 << i for i, m in enumerate(ordered)}
        below: Dict[HashDigest, int] = {}
        for m in reversed(ordered):
            acc = 0
            for c in self.children.get(m, ()):
                acc |= below[c] | bit[c]
            below[m] = acc
        return {m: 1 + below[m].bit_count() for m in ordered}

    def check(self, msg: TangleMessage) -> None:
        """Raise the :class:`TangleError` that attaching ``msg`` would raise."""
        if msg.id in self.messages:
            last = self.last_seq.get(msg.sender)
            if last is not None and msg.seq_no <= last:
                raise StaleSeqNo(f"seq {msg.seq_no} <= {last}")
            raise DuplicateMessage(msg.id.hex()[:16])
        if msg.is_genesis:
            raise BadParents("only the configured genesis may lack parents")
        if len(msg.parents) != 2:
            raise BadParents(f"expected 2 parents, got {len(msg.parents)}")
        for p in msg.parents:
            if p not in self.messages:
                raise UnknownParent(p.hex()[:16])
        if msg.parents[0] == msg.parents[1] and msg.parents[0] != self.genesis_id:
            raise BadParents("parents must be distinct")
        last = self.last_seq.get(msg.sender)
        if last is not None and msg.seq_no <= last:
            raise StaleSeqNo(f"seq {msg.seq_no} <= {last}")
        if msg.timestamp < self.last_ts.get(msg.sender, 0):
            raise StaleSeqNo(f"timestamp {msg.timestamp} runs backwards")
        if msg.pow.difficulty_bits < self.min_pow_bits or not pow_verify(msg.body, msg.pow):
            raise BadPow(f"needs {self.min_pow_bits} bits")
        if not verify(msg.sender, msg.signed_bytes, msg.signature):
            raise BadSignature(msg.sender.hex()[:16])

    def _insert(self, msg: TangleMessage) -> None:
        mid = msg.id
        self.messages[mid] = msg
        self.order[mid] = len(self.order)
        self.children[mid] = []
        for p in set(msg.parents):
            self.children[p].append(mid)
            self.tips.pop(p, None)
        self.tips[mid] = None
        if not msg.is_genesis:
            self.last_seq[msg.sender] = msg.seq_no
            self.last_ts[msg.sender] = msg.timestamp
        for op in self._spends(msg):
            self.spenders.setdefault(op, []).append(mid)
        if self.weight_mode == "eager":
            self.weight_cache[mid] = 1
            if msg.parents:
                for a in self.ancestors(mid):
                    self.weight_cache[a] += 1
        else:
            self.weight_cache.clear()

    def attach(self, msg: TangleMessage) -> HashDigest:
        self.check(msg)
        self._insert(msg)
        return msg.id

    def cumulative_weight(self, msg_id: HashDigest) -> int:
        if msg_id not in self.messages:
            raise UnknownMessage(msg_id)
        cached = self.weight_cache.get(msg_id)
        if cached is None:
            cached = 1 + len(self.descendants(msg_id))
            self.weight_cache[msg_id] = cached
        return cached


def select_tips(
    state: TangleState,
    rng: random.Random,
    eligible: Optional[Callable[[HashDigest], bool]] = None,
) -> Tuple[HashDigest, HashDigest]:
    """Pick two distinct tips uniformly at random.

    ``eligible`` narrows the candidates (an issuer skipping tips whose past it
    considers conflicting); non-eligible messages are never returned.
    """
    if state.genesis_id is None or not state.messages:
        raise EmptyLedger()
    tips = state.sorted_tips()
    if eligible is not None:
        tips = [t for t in tips if eligible(t)]
    if len(tips) >= 2:
        a, b = rng.sample(tips, 2)
        return a, b
    if not tips:
        raise EmptyLedger("no eligible tips")
    tip = tips[0]
    if tip == state.genesis_id:
        return tip, tip
    recent = []
    for mid in reversed(state.order):
        if mid != tip and mid not in state.tips and (eligible is None or eligible(mid)):
            recent.append(mid)
            if len(recent) == RECENT_FALLBACK:
                break
    if not recent:
        return tip, state.genesis_id
    return tip, rng.choice(recent)


def attach_message(state: TangleState, msg: TangleMessage) -> TangleState:
    state.attach(msg)
    return state


def cumulative_weight(state: TangleState, msg_id: HashDigest) -> int:
    return state.cumulative_weight(msg_id)


def resolve_conflicts(
    state: TangleState, confirmation_threshold: int = DEFAULT_CONFIRMATION_THRESHOLD
) -> Dict[tuple, Optional[HashDigest]]:
    """Map each contested outpoint to its winning spender, or ``UNDECIDED``."""
    outcome: Dict[tuple, Optional[HashDigest]] = {}
    for op, members in sorted(state.conflict_sets.items()):
        weights = sorted(((state.cumulative_weight(m), m) for m in members), reverse=True)
        (top_w, top), second_w = weights[0], weights[1][0]
        outcome[op] = top if top_w > second_w and top_w >= confirmation_threshold else UNDECIDED
    return outcome


def excluded_messages(state: TangleState, resolution: Dict[tuple, Optional[HashDigest]]) -> Set[HashDigest]:
    """Losing spenders of decided conflicts plus everything built on them."""
    out: Set[HashDigest] = set()
    for op, winner in resolution.items():
        if winner is UNDECIDED:
            continue
        for m in state.spenders[op]:
            if m != winner:
                out.add(m)
                out |= state.descendants(m)
    return out

