"""The blockchain that pays miners for dumb messages and anchors WeakReq requests.

A block at height ``h`` carries ``N`` of its miner's own dumb messages, each
associated with a height in :func:`window_for` ``(h)`` and solved at the
relaxed target, plus a header hash at the same relaxed target. Dumb messages
are tied to heights rather than to a parent block, so a miner that loses the
race for ``h`` reuses them for ``h + 1`` and only the oldest height drops out.
"""
from __future__ import annotations

import hashlib
import random
import struct
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .core import (
    DIFFICULTY_CAP,
    PASS,
    ZERO_DIGEST,
    Check,
    HashDigest,
    NodeId,
    PowInterrupted,
    decode,
    digest,
    encode,
    fail,
    meets_target,
    pow_hash,
    pow_solve,
)
from .tangle import MessageKind, TangleMessage, TangleState
from .trade import UtxoSet
from .weakreq import ProfitabilityPolicy, WeakReqRequest, validate_request

BITCOIN_D_MIN = 2 ** 23
DEFAULT_COINBASE = 50
WINDOW_LENGTH = 3
_U64 = struct.Struct(">Q")


class InvalidRelaxation(ValueError):
    pass


class NoEligibleWindow(ValueError):
    pass


class MiningInterrupted(Exception):
    """A competing block for the same height arrived while mining."""


@dataclass(frozen=True)
class DifficultyParams:
    d: int
    F: int = 1
    d_min: int = BITCOIN_D_MIN
    coinbase: int = DEFAULT_COINBASE

    @property
    def N(self) -> int:
        return self.F


def relaxed_target(params: DifficultyParams) -> Tuple[int, int]:
    """(relaxed leading-zero bits, required dumb-message count)."""
    F = params.F
    if F < 1 or F & (F - 1):
        raise InvalidRelaxation(f"F={F} is not a power of two")
    k = F.bit_length() - 1
    if params.d <= k:
        raise InvalidRelaxation(f"d={params.d} must exceed log2(F)={k}")
    return params.d - k, F


def window_for(height: int) -> Set[int]:
    """Heights whose dumb messages may back a block at ``height``; skips ``height - 1``."""
    if height < 1:
        raise NoEligibleWindow("genesis has no window")
    if height == 1:
        return {0}
    return set(range(max(0, height - 4), height - 1))


def dumb_payload(height: int, anchor: HashDigest) -> tuple:
    """Payload binding a dumb message to the block at ``height``, so none can be minted ahead of the chain."""
    return ("dumb", height, anchor)


def dumb_anchor(msg: TangleMessage) -> Optional[Tuple[int, HashDigest]]:
    p = msg.payload
    if isinstance(p, tuple) and len(p) == 3 and p[0] == "dumb" and isinstance(p[1], int):
        return p[1], p[2]
    return None


def dumb_height(msg: TangleMessage) -> Optional[int]:
    a = dumb_anchor(msg)
    return None if a is None else a[0]


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: HashDigest
    dumb_refs: Tuple[HashDigest, ...]
    weakreq_reqs: Tuple[WeakReqRequest, ...]
    coinbase: int
    miner: NodeId
    difficulty_bits: int
    nonce: int = 0
    header_hash: HashDigest = ZERO_DIGEST

    @property
    def header(self) -> bytes:
        return encode(("block", self.height, self.prev_hash, tuple(self.dumb_refs),
                       tuple(r.fields() for r in self.weakreq_reqs), self.coinbase, self.miner,
                       self.difficulty_bits))

    @property
    def pow_payload(self) -> bytes:
        return encode((self.prev_hash, self.header))

    @property
    def id(self) -> HashDigest:
        return self.header_hash

    @property
    def raw(self) -> bytes:
        return encode((self.header, self.nonce, self.header_hash))

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Block":
        header, nonce, header_hash = decode(raw)
        tag, height, prev, refs, reqs, coinbase, miner, bits = decode(header)
        if tag != "block":
            raise ValueError("not a block record")
        return cls(height, prev, tuple(refs), tuple(WeakReqRequest.from_fields(r) for r in reqs), coinbase, miner,
                   bits, nonce, header_hash)


def genesis_block(label: str = "genesis") -> Block:
    return Block(0, ZERO_DIGEST, (), (), 0, ZERO_DIGEST, 0, 0, digest(encode(("genesis-block", label))))


class ChainState:
    """Block tree with cumulative dumb-work per block."""

    def __init__(self, genesis: Optional[Block] = None):
        genesis = genesis or genesis_block()
        self.genesis = genesis
        self.blocks: Dict[HashDigest, Block] = {genesis.id: genesis}
        self.children: Dict[HashDigest, List[HashDigest]] = {genesis.id: []}
        self.work: Dict[HashDigest, int] = {genesis.id: 0}

    def __len__(self) -> int:
        return len(self.blocks)

    def add(self, block: Block, work: int) -> None:
        self.blocks[block.id] = block
        self.children[block.id] = []
        self.children[block.prev_hash].append(block.id)
        self.work[block.id] = self.work[block.prev_hash] + work

    def path(self, tip: HashDigest) -> List[Block]:
        out = []
        cur = tip
        while True:
            b = self.blocks[cur]
            out.append(b)
            if b.height == 0:
                break
            cur = b.prev_hash
        out.reverse()
        return out

    def used_refs(self, tip: HashDigest) -> Set[HashDigest]:
        return {r for b in self.path(tip) for r in b.dumb_refs}

    def anchored(self, tip: HashDigest) -> Dict[HashDigest, Tuple[WeakReqRequest, Block]]:
        return {r.id: (r, b) for b in self.path(tip) for r in b.weakreq_reqs}

    def leaves(self) -> List[Block]:
        return [self.blocks[b] for b, kids in self.children.items() if not kids]


def dumb_work(tangle: TangleState, refs: Iterable[HashDigest]) -> int:
    return sum(1 << tangle.messages[r].pow.difficulty_bits for r in refs)


def fork_choice(chain: ChainState) -> Block:
    """Leaf with the most cumulative dumb-work; ties go to the lower header hash."""
    return min(chain.leaves(), key=lambda b: (-chain.work[b.id], b.header_hash))


def eligible_dumb_refs(
    tangle: TangleState, chain: ChainState, parent: Block, miner: NodeId, relaxed_bits: int,
    owned: Optional[Sequence[HashDigest]] = None,
) -> List[HashDigest]:
    """The miner's unused dumb messages that may back the block after ``parent``."""
    window = window_for(parent.height + 1)
    path = chain.path(parent.id)
    used = {r for b in path for r in b.dumb_refs}
    if owned is None:
        owned = [m for m, msg in tangle.messages.items() if msg.kind == MessageKind.DUMB and msg.sender == miner]
    out = []
    for mid in owned:
        msg = tangle.messages[mid]
        anchor = dumb_anchor(msg)
        if mid in used or anchor is None or anchor[0] not in window or path[anchor[0]].id != anchor[1]:
            continue
        if msg.pow.difficulty_bits >= relaxed_bits:
            out.append(mid)
    out.sort(key=tangle.order.__getitem__)
    return out


def validate_block(
    block: Block,
    tangle: TangleState,
    chain: ChainState,
    params: DifficultyParams,
    utxo: Optional[UtxoSet] = None,
    burn_per_msg: int = 1,
) -> Check:
    """Check every block rule without touching any state."""
    parent = chain.blocks.get(block.prev_hash)
    if parent is None:
        return fail("UnknownParent")
    if block.height != parent.height + 1:
        return fail("BadHeight")
    bits, n_required = relaxed_target(params)
    if block.difficulty_bits != bits:
        return fail("WrongDifficulty")
    if block.coinbase != params.coinbase:
        return fail("BadCoinbase")
    if len(block.dumb_refs) < n_required:
        return fail("InsufficientDumbWork")
    if len(set(block.dumb_refs)) != len(block.dumb_refs):
        return fail("DumbRefReuse")
    window = window_for(block.height)
    path = chain.path(parent.id)
    used = {r for b in path for r in b.dumb_refs}
    for ref in block.dumb_refs:
        msg = tangle.messages.get(ref)
        if msg is None:
            return fail("UnknownDumbRef")
        if msg.kind != MessageKind.DUMB:
            return fail("NotDumb")
        if msg.sender != block.miner:
            return fail("ForeignDumbRef")
        if msg.pow.difficulty_bits < bits:
            return fail("WeakDumbRef")
        anchor = dumb_anchor(msg)
        if anchor is None or anchor[0] not in window:
            return fail("OutsideWindow")
        if path[anchor[0]].id != anchor[1]:
            return fail("ForeignAnchor")
        if ref in used:
            return fail("DumbRefReuse")
    if pow_hash(block.pow_payload, block.nonce) != block.header_hash or not meets_target(block.header_hash, bits):
        return fail("BadHeaderPow")
    if block.header_hash in chain.blocks:
        return fail("DuplicateBlock")
    anchored = chain.anchored(parent.id)
    pobs = {(r.pob.bundle_id, r.pob.index) for r, _ in anchored.values()}
    for req in block.weakreq_reqs:
        if req.id in anchored or (req.pob.bundle_id, req.pob.index) in pobs:
            return fail("WeakReqReplay")
        pobs.add((req.pob.bundle_id, req.pob.index))
        if utxo is not None:
            check = validate_request(req, utxo, burn_per_msg)
            if not check:
                return fail(f"BadWeakReq:{check.reason}")
    return PASS


def select_requests(
    mempool: Sequence[WeakReqRequest],
    chain: ChainState,
    parent: Block,
    policy: ProfitabilityPolicy,
    utxo: Optional[UtxoSet] = None,
    burn_per_msg: int = 1,
    limit: int = 16,
) -> List[WeakReqRequest]:
    anchored = chain.anchored(parent.id)
    pobs = {(r.pob.bundle_id, r.pob.index) for r, _ in anchored.values()}
    picked = []
    for req in mempool:
        key = (req.pob.bundle_id, req.pob.index)
        if req.id in anchored or key in pobs or not policy.accepts(req):
            continue
        if utxo is not None and not validate_request(req, utxo, burn_per_msg):
            continue
        picked.append(req)
        pobs.add(key)
        if len(picked) == limit:
            break
    return picked


def mine_block(
    mempool: Sequence[WeakReqRequest],
    tangle: TangleState,
    params: DifficultyParams,
    miner,
    rng: random.Random,
    chain: ChainState,
    *,
    issue_dumb: Callable[[int, HashDigest], TangleMessage],
    parent: Optional[Block] = None,
    policy: ProfitabilityPolicy = ProfitabilityPolicy(),
    utxo: Optional[UtxoSet] = None,
    burn_per_msg: int = 1,
    should_stop: Optional[Callable[[], bool]] = None,
    owned: Optional[Sequence[HashDigest]] = None,
) -> Block:
    """Gather N eligible dumb messages (minting the shortfall), then solve the header.

    ``miner`` exposes ``node_id``; ``issue_dumb(height, anchor)`` mints, solves
    and attaches one of the miner's dumb messages bound to the block ``anchor``
    at ``height``, at the relaxed target, and returns it.
    """
    bits, n_required = relaxed_target(params)
    parent = parent or fork_choice(chain)
    height = parent.height + 1
    window = window_for(height)
    refs = eligible_dumb_refs(tangle, chain, parent, miner.node_id, bits, owned)[:n_required]
    while len(refs) < n_required:
        if should_stop is not None and should_stop():
            raise MiningInterrupted(f"height {height}")
        top = max(window)
        msg = issue_dumb(top, chain.path(parent.id)[top].id)
        refs.append(msg.id)
    reqs = select_requests(mempool, chain, parent, policy, utxo, burn_per_msg)
    block = Block(height, parent.id, tuple(refs), tuple(reqs), params.coinbase, miner.node_id, bits)
    try:
        sol = pow_solve(block.pow_payload, bits, rng.getrandbits(32), should_stop=should_stop)
    except PowInterrupted as exc:
        raise MiningInterrupted(f"height {height}") from exc
    return Block(height, parent.id, tuple(refs), tuple(reqs), params.coinbase, miner.node_id, bits, sol.nonce,
                 sol.digest)


def accumulated_attempts(prefix: bytes, targets: Sequence[Tuple[int, int]], cap: int = DIFFICULTY_CAP) -> List[int]:
    """Hash one nonce stream until each ``(bits, count)`` target has seen ``count`` hits.

    Returns, per target, the number of attempts at which its last required hit
    occurred. Sharing one stream across targets is a common-random-numbers
    comparison; each entry on its own is an ordinary Monte Carlo draw.
    """
    if any(b > cap or b < 0 for b, _ in targets):
        raise ValueError("target difficulty outside cap")
    copy = hashlib.sha3_512(prefix).copy
    pack = _U64.pack
    remaining = [c for _, c in targets]
    done: List[Optional[int]] = [None] * len(targets)
    lowest = min(b for b, _ in targets)
    first_byte_zero = lowest >= 8
    nonce = 0
    left = len(targets)
    while left:
        h = copy()
        h.update(pack(nonce))
        nonce += 1
        d = h.digest()
        if first_byte_zero and d[0]:
            continue
        top = int.from_bytes(d[:4], "big")
        if lowest and top >> (32 - lowest):
            continue
        zeros = 32 - top.bit_length()
        for i, (b, _) in enumerate(targets):
            if done[i] is None and zeros >= b:
                remaining[i] -= 1
                if remaining[i] == 0:
                    done[i] = nonce
                    left -= 1
    return done  # type: ignore[return-value]
