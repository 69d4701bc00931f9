"""Deterministic discrete-event simulation of the replicated network.

Protocol (proof-of-authority flavor): a logical clock advances one tick
per step; every proposal_period ticks the round-robin proposer (round r
-> node r mod N) packs mempool transactions into a block and broadcasts
it. Recipients vote accept iff the block extends their tip and is
internally valid (including contract-level envelope checks); votes are
broadcast, and every node tallies at the round's deadline
(proposal tick + 2 * max delay). A block commits when accept votes reach
the strict majority floor(N/2)+1 of all nodes; missing votes count as
rejects. Nodes left behind heal by requesting the committer's chain and
applying the fork-choice rule (longer wins, ties to the smaller tip
hash).

Randomness: every network edge owns an independent substream seeded
from (rng_seed, sender, recipient), so event order is a pure function
of (seed, scenario). Per-edge drops apply to transaction gossip; the
consensus channel (proposals, votes, sync) is delayed but lossless,
which keeps rounds bounded by the vote deadline.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from . import engine, identity, ledger
from .canon import canonical_dumps

HONEST = "honest"
BYZANTINE = "byzantine-invalid-proposer"
SILENT = "silent"
BEHAVIORS = (HONEST, BYZANTINE, SILENT)

DEFAULT_MAX_BLOCK_TXS = 8


class BadSignature(ValueError):
    pass


class NotProposer(ValueError):
    pass


class EmptyMempool(ValueError):
    pass


class InvalidCandidate(ValueError):
    pass


def strict_majority(n: int) -> int:
    return n // 2 + 1


def resolve_fork(own: ledger.Chain, candidate: ledger.Chain) -> ledger.Chain:
    """Adopt the candidate iff strictly longer, or equal length with the
    lexicographically smaller tip hash; candidate must validate from
    genesis."""
    if not ledger.validate_chain(candidate).valid:
        raise InvalidCandidate("candidate chain fails validation")
    if len(candidate) > len(own):
        return candidate
    if len(candidate) == len(own) and candidate.tip.block_hash < own.tip.block_hash:
        return candidate
    return own


@dataclass
class SimNode:
    node_id: int
    keypair: identity.KeyPair
    behavior: str = HONEST
    replica: ledger.Chain = field(default_factory=ledger.Chain.new)
    mempool: dict = field(default_factory=dict)  # tx_id -> Transaction, arrival order
    state: dict = field(default_factory=dict)
    receipts: list = field(default_factory=list)
    committed_tx_ids: set = field(default_factory=set)
    # round -> {"block": Block, "votes": {node_id: bool}}
    pending_rounds: dict = field(default_factory=dict)

    def add_to_mempool(self, tx: ledger.Transaction) -> bool:
        if tx.tx_id in self.mempool or tx.tx_id in self.committed_tx_ids:
            return False
        self.mempool[tx.tx_id] = tx
        return True


class SimNetwork:
    def __init__(
        self,
        num_nodes: int,
        rng_seed: int,
        delay_range: tuple[int, int] = (1, 1),
        drop_probability: Fraction = Fraction(0),
        proposal_period: Optional[int] = None,
        max_block_txs: int = DEFAULT_MAX_BLOCK_TXS,
        behaviors: Optional[dict[int, str]] = None,
        registry: Optional[engine.Registry] = None,
    ):
        from .workflows import civic_registry

        if num_nodes < 1:
            raise ValueError("need at least one node")
        self.registry = registry if registry is not None else civic_registry()
        self.rng_seed = rng_seed
        self.delay_min, self.delay_max = delay_range
        if not 1 <= self.delay_min <= self.delay_max:
            raise ValueError("delay_range must satisfy 1 <= min <= max")
        self.drop_probability = Fraction(drop_probability)
        if not 0 <= self.drop_probability <= 1:
            raise ValueError("drop_probability must be in [0,1]")
        self.vote_timeout = 2 * self.delay_max
        self.proposal_period = (
            proposal_period if proposal_period is not None else self.vote_timeout + 2
        )
        if self.proposal_period <= self.vote_timeout:
            raise ValueError("proposal_period must exceed the vote timeout")
        self.max_block_txs = max_block_txs
        self.clock = 0
        self._seq = 0
        self.queue: list = []  # (deliver_tick, seq, recipient, message)
        self.events: list = []
        behaviors = behaviors or {}
        self.nodes = []
        for i in range(num_nodes):
            behavior = behaviors.get(i, HONEST)
            if behavior not in BEHAVIORS:
                raise ValueError(f"unknown behavior {behavior!r} for node {i}")
            keypair = identity.keypair_from_material(f"node:{rng_seed}:{i}")
            node = SimNode(node_id=i, keypair=keypair, behavior=behavior)
            node.state = self.registry.initial_state()
            self.nodes.append(node)
        self._edge_rngs: dict[tuple[int, int], random.Random] = {}

    # -- randomness ---------------------------------------------------------

    def _edge_rng(self, sender: int, recipient: int) -> random.Random:
        key = (sender, recipient)
        rng = self._edge_rngs.get(key)
        if rng is None:
            digest = hashlib.sha256(
                f"edge:{self.rng_seed}:{sender}:{recipient}".encode()
            ).digest()
            rng = random.Random(int.from_bytes(digest[:8], "big"))
            self._edge_rngs[key] = rng
        return rng

    def _edge_delay(self, sender: int, recipient: int) -> int:
        return self._edge_rng(sender, recipient).randint(self.delay_min, self.delay_max)

    def _edge_drops(self, sender: int, recipient: int) -> bool:
        p = self.drop_probability
        if p == 0:
            return False
        if p == 1:
            return True
        return self._edge_rng(sender, recipient).randrange(p.denominator) < p.numerator

    # -- plumbing -----------------------------------------------------------

    def log(self, kind: str, **payload) -> None:
        self.events.append({"kind": kind, "payload": payload, "tick": self.clock})

    def _send(self, sender: int, recipient: int, message: dict, droppable: bool = False) -> None:
        if droppable and self._edge_drops(sender, recipient):
            return
        deliver_at = self.clock + self._edge_delay(sender, recipient)
        heapq.heappush(self.queue, (deliver_at, self._seq, recipient, message))
        self._seq += 1

    def _broadcast(self, sender: int, message: dict, droppable: bool = False) -> None:
        for node in self.nodes:
            if node.node_id != sender:
                self._send(sender, node.node_id, message, droppable)

    # -- client surface -----------------------------------------------------

    def _admissible(self, tx: ledger.Transaction) -> bool:
        """Schema-valid envelope whose declared sender signed the tx.
        Honest mempools refuse anything else so every pooled transaction
        can eventually commit."""
        if tx.envelope.get("sender") != tx.sender:
            return False
        return not engine.validate_envelope(self.registry, tx.envelope)

    def submit_transaction(self, tx: ledger.Transaction, origin: int) -> dict:
        """Accept a signed transaction at its origin node and gossip it."""
        if not tx.verify():
            raise BadSignature(f"transaction {tx.tx_id} fails verification")
        if not self._admissible(tx):
            self.log("submit-refused", origin=origin, tx_id=tx.tx_id)
            return {"accepted": False, "reason": "invalid-envelope", "tx_id": tx.tx_id}
        self.nodes[origin].add_to_mempool(tx)
        self.log("submit", origin=origin, tx_id=tx.tx_id)
        self._broadcast(origin, {"type": "tx", "tx": tx}, droppable=True)
        return {"accepted": True, "tx_id": tx.tx_id}

    # -- consensus ----------------------------------------------------------

    def propose_block(self, node: SimNode, clock: int) -> ledger.Block:
        round_number = clock // self.proposal_period
        if round_number % len(self.nodes) != node.node_id:
            raise NotProposer(f"node {node.node_id} is not the round {round_number} proposer")
        if not node.mempool:
            raise EmptyMempool("nothing to propose")
        txs = list(node.mempool.values())[: self.max_block_txs]
        tip = node.replica.tip
        corrupt_root = None
        if node.behavior == BYZANTINE:
            corrupt_root = hashlib.sha256(b"corrupt" + tip.block_hash.encode()).hexdigest()
        return ledger.make_block(
            index=tip.index + 1,
            prev_hash=tip.block_hash,
            transactions=txs,
            proposer=node.keypair.address,
            logical_time=clock,
            tx_root=corrupt_root,
        )

    def vote_on_block(self, node: SimNode, block: ledger.Block) -> bool:
        """Accept iff the block extends the node's tip and is internally
        valid, including contract-level envelope validation."""
        tip = node.replica.tip
        if block.prev_hash != tip.block_hash or block.index != tip.index + 1:
            return False
        if ledger.block_internally_valid(block) is not None:
            return False
        for tx in block.transactions:
            if engine.validate_envelope(self.registry, tx.envelope):
                return False
            if tx.envelope["sender"] != tx.sender:
                return False
        return True

    def _commit_on_node(self, node: SimNode, block: ledger.Block, proposer_id: int) -> None:
        tip = node.replica.tip
        if block.prev_hash == tip.block_hash and block.index == tip.index + 1:
            node.replica = ledger.append_block(node.replica, block)
            self._apply_block(node, block)
            self.log(
                "commit",
                block_hash=block.block_hash,
                index=block.index,
                node=node.node_id,
                tx_ids=[tx.tx_id for tx in block.transactions],
            )
        else:
            # behind or diverged: pull the proposer's chain and let the
            # fork-choice rule heal the replica
            self._send(node.node_id, proposer_id, {"type": "chain-request", "from": node.node_id})
            self.log("sync-request", node=node.node_id, to=proposer_id)

    def _apply_block(self, node: SimNode, block: ledger.Block) -> None:
        for tx in block.transactions:
            ctx = engine.ExecContext(block_index=block.index, tick=tx.logical_time, tx_id=tx.tx_id)
            node.receipts.append(engine.execute(self.registry, node.state, tx.envelope, ctx))
            node.committed_tx_ids.add(tx.tx_id)
            node.mempool.pop(tx.tx_id, None)

    def _refold(self, node: SimNode) -> None:
        node.state, node.receipts = engine.replay_chain(self.registry, node.replica)
        node.committed_tx_ids = {
            tx.tx_id for block in node.replica.blocks for tx in block.transactions
        }
        for tx_id in list(node.mempool):
            if tx_id in node.committed_tx_ids:
                del node.mempool[tx_id]

    # -- message handling ---------------------------------------------------

    def _deliver(self, recipient: int, message: dict) -> None:
        node = self.nodes[recipient]
        mtype = message["type"]
        if mtype == "tx":
            if node.add_to_mempool(message["tx"]):
                self.log("gossip-deliver", node=recipient, tx_id=message["tx"].tx_id)
        elif mtype == "proposal":
            if node.behavior == SILENT:
                return
            block = message["block"]
            round_number = message["round"]
            accept = (
                self.vote_on_block(node, block) if node.behavior == HONEST else True
            )
            pending = node.pending_rounds.setdefault(round_number, {"block": None, "votes": {}})
            pending["block"] = block
            pending["votes"][recipient] = (block.block_hash, accept)
            self._broadcast(
                recipient,
                {
                    "type": "vote",
                    "round": round_number,
                    "block_hash": block.block_hash,
                    "voter": recipient,
                    "accept": accept,
                },
            )
            self.log(
                "vote",
                accept=accept,
                block_hash=block.block_hash,
                node=recipient,
                round=round_number,
            )
        elif mtype == "vote":
            # votes may outrun the proposal on a faster edge; buffer them
            pending = node.pending_rounds.setdefault(message["round"], {"block": None, "votes": {}})
            pending["votes"][message["voter"]] = (message["block_hash"], message["accept"])
        elif mtype == "chain-request":
            self._send(
                recipient,
                message["from"],
                {"type": "chain-response", "chain": node.replica.copy()},
            )
        elif mtype == "chain-response":
            if node.behavior == SILENT:
                return
            try:
                adopted = resolve_fork(node.replica, message["chain"])
            except InvalidCandidate:
                return
            if adopted is not node.replica:
                node.replica = adopted
                self._refold(node)
                self.log("sync-adopt", length=len(adopted), node=recipient)

    # -- the clock ----------------------------------------------------------

    def step(self) -> list:
        """Advance one tick: deliver due messages, run due proposal and
        tally phases. Returns the events emitted this tick."""
        self.clock += 1
        events_before = len(self.events)
        while self.queue and self.queue[0][0] <= self.clock:
            _, _, recipient, message = heapq.heappop(self.queue)
            self._deliver(recipient, message)
        if self.clock % self.proposal_period == 0:
            self._proposal_phase()
        if self.clock >= self.vote_timeout and (
            (self.clock - self.vote_timeout) % self.proposal_period == 0
        ):
            self._tally_phase((self.clock - self.vote_timeout) // self.proposal_period)
        return self.events[events_before:]

    def _proposal_phase(self) -> None:
        round_number = self.clock // self.proposal_period
        proposer = self.nodes[round_number % len(self.nodes)]
        if proposer.behavior == SILENT or not proposer.mempool:
            return
        block = self.propose_block(proposer, self.clock)
        accept = True  # proposers endorse their own block, honest or not
        proposer.pending_rounds[round_number] = {
            "block": block,
            "votes": {proposer.node_id: (block.block_hash, accept)},
        }
        self._broadcast(
            proposer.node_id, {"type": "proposal", "round": round_number, "block": block}
        )
        self._broadcast(
            proposer.node_id,
            {
                "type": "vote",
                "round": round_number,
                "block_hash": block.block_hash,
                "voter": proposer.node_id,
                "accept": accept,
            },
        )
        self.log(
            "propose",
            block_hash=block.block_hash,
            index=block.index,
            node=proposer.node_id,
            round=round_number,
            tx_count=len(block.transactions),
        )

    def _tally_phase(self, round_number: int) -> None:
        majority = strict_majority(len(self.nodes))
        proposer_id = round_number % len(self.nodes)
        for node in self.nodes:
            pending = node.pending_rounds.pop(round_number, None)
            if pending is None or pending["block"] is None or node.behavior == SILENT:
                continue
            block_hash = pending["block"].block_hash
            accepts = sum(
                1 for bh, accept in pending["votes"].values() if accept and bh == block_hash
            )
            committed = accepts >= majority
            self.log(
                "tally",
                accepts=accepts,
                block_hash=pending["block"].block_hash,
                committed=committed,
                node=node.node_id,
                round=round_number,
            )
            if committed and node.behavior == HONEST:
                self._commit_on_node(node, pending["block"], proposer_id)

    # -- run helpers --------------------------------------------------------

    def honest_nodes(self) -> list[SimNode]:
        return [n for n in self.nodes if n.behavior == HONEST]

    def quiescent(self) -> bool:
        return not self.queue and all(not n.mempool for n in self.honest_nodes())

    def run_until_quiescent(self, max_ticks: int = 100_000) -> None:
        """Step until the queue drains, honest mempools empty, and every
        pending round has been tallied."""
        idle = 0
        while self.clock < max_ticks:
            self.step()
            if self.quiescent() and not any(n.pending_rounds for n in self.nodes):
                idle += 1
                if idle > self.proposal_period + self.vote_timeout:
                    return
            else:
                idle = 0
        raise RuntimeError(f"no quiescence within {max_ticks} ticks")

    def event_log_lines(self) -> list[str]:
        return [canonical_dumps(event) for event in self.events]
