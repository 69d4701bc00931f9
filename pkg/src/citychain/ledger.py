"""Append-only hash-chained ledger: blocks, validation, tracing.

Digests are hex SHA-256 over canonical JSON. The transaction id covers
(sender, envelope, logical_time); the signature covers the same bytes.
The block hash covers the header (index, prev_hash, tx_root, proposer,
logical_time), so any header edit cascades through every later block.
tx_root is a flat digest over the ordered tx ids, not a Merkle tree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

from . import identity
from .canon import ZERO_DIGEST, canonical_bytes, canonical_dumps, sha256_hex

GENESIS_PROPOSER = "0x" + "00" * 20


class LedgerError(ValueError):
    pass


class LinkMismatch(LedgerError):
    pass


class IndexMismatch(LedgerError):
    pass


class InvalidBlock(LedgerError):
    pass


class NotFound(LedgerError):
    pass


def tx_signing_bytes(sender: str, envelope: dict, logical_time: int) -> bytes:
    return canonical_bytes(
        {"envelope": envelope, "logical_time": logical_time, "sender": sender}
    )


def compute_tx_id(sender: str, envelope: dict, logical_time: int) -> str:
    return sha256_hex(tx_signing_bytes(sender, envelope, logical_time))


@dataclass(frozen=True)
class Transaction:
    tx_id: str
    sender: str
    sender_pub: bytes
    envelope: dict
    signature: bytes
    logical_time: int

    def to_dict(self) -> dict:
        return {
            "envelope": self.envelope,
            "logical_time": self.logical_time,
            "sender": self.sender,
            "sender_pub": identity.b64e(self.sender_pub),
            "signature": identity.b64e(self.signature),
            "tx_id": self.tx_id,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Transaction":
        return cls(
            tx_id=data["tx_id"],
            sender=data["sender"],
            sender_pub=identity.b64d(data["sender_pub"]),
            envelope=data["envelope"],
            signature=identity.b64d(data["signature"]),
            logical_time=data["logical_time"],
        )

    def verify(self) -> bool:
        """Content digest, address derivation and signature all check out."""
        if identity.wallet_address(self.sender_pub) != self.sender:
            return False
        content = tx_signing_bytes(self.sender, self.envelope, self.logical_time)
        if sha256_hex(content) != self.tx_id:
            return False
        try:
            return identity.verify(self.sender_pub, content, self.signature)
        except identity.MalformedSignature:
            return False


def make_transaction(keypair: identity.KeyPair, envelope: dict, logical_time: int) -> Transaction:
    sender = keypair.address
    content = tx_signing_bytes(sender, envelope, logical_time)
    return Transaction(
        tx_id=sha256_hex(content),
        sender=sender,
        sender_pub=keypair.sign_public,
        envelope=envelope,
        signature=identity.sign(keypair, content),
        logical_time=logical_time,
    )


def compute_tx_root(tx_ids: Iterable[str]) -> str:
    return sha256_hex("".join(tx_ids).encode("ascii"))


def compute_block_hash(
    index: int, prev_hash: str, tx_root: str, proposer: str, logical_time: int
) -> str:
    header = {
        "index": index,
        "logical_time": logical_time,
        "prev_hash": prev_hash,
        "proposer": proposer,
        "tx_root": tx_root,
    }
    return sha256_hex(canonical_bytes(header))


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: str
    tx_root: str
    transactions: tuple[Transaction, ...]
    proposer: str
    logical_time: int
    block_hash: str

    def to_dict(self) -> dict:
        return {
            "block_hash": self.block_hash,
            "index": self.index,
            "logical_time": self.logical_time,
            "prev_hash": self.prev_hash,
            "proposer": self.proposer,
            "transactions": [tx.to_dict() for tx in self.transactions],
            "tx_root": self.tx_root,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Block":
        return cls(
            index=data["index"],
            prev_hash=data["prev_hash"],
            tx_root=data["tx_root"],
            transactions=tuple(Transaction.from_dict(t) for t in data["transactions"]),
            proposer=data["proposer"],
            logical_time=data["logical_time"],
            block_hash=data["block_hash"],
        )


def make_block(
    index: int,
    prev_hash: str,
    transactions: Iterable[Transaction],
    proposer: str,
    logical_time: int,
    tx_root: Optional[str] = None,
) -> Block:
    """Assemble a block; tx_root may be overridden to model corruption."""
    txs = tuple(transactions)
    root = tx_root if tx_root is not None else compute_tx_root(t.tx_id for t in txs)
    return Block(
        index=index,
        prev_hash=prev_hash,
        tx_root=root,
        transactions=txs,
        proposer=proposer,
        logical_time=logical_time,
        block_hash=compute_block_hash(index, prev_hash, root, proposer, logical_time),
    )


def genesis_block() -> Block:
    return make_block(0, ZERO_DIGEST, (), GENESIS_PROPOSER, 0)


@dataclass(frozen=True)
class ValidationReport:
    valid: bool
    first_invalid_index: Optional[int] = None
    reason: Optional[str] = None  # hash-mismatch | link-broken | bad-signature | bad-tx-root | bad-genesis

    def to_dict(self) -> dict:
        return {
            "first_invalid_index": self.first_invalid_index,
            "reason": self.reason,
            "valid": self.valid,
        }


@dataclass
class Chain:
    blocks: list[Block] = field(default_factory=list)

    @classmethod
    def new(cls) -> "Chain":
        return cls(blocks=[genesis_block()])

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    def copy(self) -> "Chain":
        return Chain(blocks=list(self.blocks))


def block_internally_valid(block: Block) -> Optional[str]:
    """None when self-consistent, else the failure reason."""
    recomputed_root = compute_tx_root(
        compute_tx_id(tx.sender, tx.envelope, tx.logical_time) for tx in block.transactions
    )
    if recomputed_root != block.tx_root:
        return "bad-tx-root"
    if any(not tx.verify() for tx in block.transactions):
        return "bad-signature"
    expected = compute_block_hash(
        block.index, block.prev_hash, block.tx_root, block.proposer, block.logical_time
    )
    if expected != block.block_hash:
        return "hash-mismatch"
    return None


def append_block(chain: Chain, block: Block) -> Chain:
    """Return the extended chain; the input chain is not modified."""
    if block.index != len(chain.blocks):
        raise IndexMismatch(f"expected index {len(chain.blocks)}, got {block.index}")
    if block.prev_hash != chain.tip.block_hash:
        raise LinkMismatch("prev_hash does not match the tip hash")
    reason = block_internally_valid(block)
    if reason is not None:
        raise InvalidBlock(reason)
    return Chain(blocks=chain.blocks + [block])


def validate_chain(chain: Chain) -> ValidationReport:
    """Lowest-index failure wins; a payload edit surfaces as bad-tx-root
    at its own block, a re-hashed block surfaces as link-broken one later."""
    if not chain.blocks:
        return ValidationReport(False, 0, "bad-genesis")
    for i, block in enumerate(chain.blocks):
        if i == 0:
            if (
                block.index != 0
                or block.prev_hash != ZERO_DIGEST
                or block.transactions
                or block.proposer != GENESIS_PROPOSER
            ):
                return ValidationReport(False, 0, "bad-genesis")
        else:
            if block.index != i or block.prev_hash != chain.blocks[i - 1].block_hash:
                return ValidationReport(False, i, "link-broken")
        expected = compute_block_hash(
            block.index, block.prev_hash, block.tx_root, block.proposer, block.logical_time
        )
        if expected != block.block_hash:
            return ValidationReport(False, i, "hash-mismatch")
        recomputed_root = compute_tx_root(
            compute_tx_id(tx.sender, tx.envelope, tx.logical_time)
            for tx in block.transactions
        )
        if recomputed_root != block.tx_root:
            return ValidationReport(False, i, "bad-tx-root")
        if any(not tx.verify() for tx in block.transactions):
            return ValidationReport(False, i, "bad-signature")
    return ValidationReport(True)


def trace_transaction(chain: Chain, tx_id: str) -> dict:
    """Provenance of a committed transaction: block, position, sender, tick."""
    for block in chain.blocks:
        for pos, tx in enumerate(block.transactions):
            if tx.tx_id == tx_id:
                return {
                    "block_index": block.index,
                    "logical_time": tx.logical_time,
                    "position": pos,
                    "sender": tx.sender,
                    "tx_id": tx_id,
                }
    raise NotFound(f"transaction {tx_id} not committed")


def export_chain(chain: Chain) -> str:
    """JSON Lines, one canonical block per line."""
    return "".join(canonical_dumps(b.to_dict()) + "\n" for b in chain.blocks)


def import_chain(text: str) -> Chain:
    blocks = []
    for line in text.splitlines():
        line = line.strip()
        if line:
            blocks.append(Block.from_dict(json.loads(line)))
    return Chain(blocks=blocks)
