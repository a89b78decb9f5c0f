"""Adapter that lets :func:`tangletrust.weakreq.device_run` talk to a live ledger."""
from __future__ import annotations

from typing import Dict, List, Optional

from ..core import HashDigest, NodeId
from ..ledger import Account, Ledger
from ..weakreq import ProfitabilityPolicy, WeakReqMessage, WeakReqRejected, WeakReqRequest, miner_serve


class LedgerGateway:
    """Each tick advances the clock and lets the next miner in rotation mine a block."""

    def __init__(self, ledger: Ledger, miners: List[Account], policy: ProfitabilityPolicy = ProfitabilityPolicy(),
                 ticks_per_block: int = 1):
        if not miners:
            raise ValueError("at least one miner is required")
        self.ledger = ledger
        self.miners: Dict[NodeId, Account] = {m.node_id: m for m in miners}
        self._rotation = list(miners)
        self.policy = policy
        self.ticks_per_block = ticks_per_block
        self._turn = 0
        self.rejected: List[str] = []

    @property
    def now(self) -> int:
        return self.ledger.now

    @property
    def utxo(self):
        return self.ledger.utxo

    def broadcast(self, req: WeakReqRequest) -> None:
        self.ledger.broadcast_request(req)

    def anchor_of(self, request_id: HashDigest) -> Optional[NodeId]:
        anchored = self.ledger.anchored_request(request_id)
        return None if anchored is None else anchored[1].miner

    def tick(self) -> None:
        self.ledger.now += 1
        if self.ledger.now % self.ticks_per_block == 0:
            miner = self._rotation[self._turn % len(self._rotation)]
            self._turn += 1
            self.ledger.mine(miner, self.policy)

    def send(self, msg: WeakReqMessage) -> HashDigest:
        miner = self.miners.get(msg.recipient_miner)
        if miner is None:
            self.rejected.append("WrongMiner")
            raise WeakReqRejected("WrongMiner")
        return miner_serve(miner, self.ledger, msg).id
