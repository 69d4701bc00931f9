"""JSON access layer: contract registry, envelope validation, execution.

A contract is a descriptor (payload schemas per action plus a handler)
registered under a short id. Envelopes are canonical JSON
{action, contract_id, payload, sender}; handlers fold committed
envelopes into per-contract state, and queries are pure reads over an
immutable state value. Replaying any valid chain from genesis
reproduces state_hash exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .canon import canonical_bytes, canonical_hash, is_canonical

WALLET_RE = r"^0x[0-9a-f]{40}$"


class EngineError(ValueError):
    pass


class DuplicateContract(EngineError):
    pass


class UnknownContract(EngineError):
    pass


class UnknownView(EngineError):
    pass


class HandlerRejection(Exception):
    """Raised by handlers before any state mutation; maps to a rejected Receipt."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class ExecContext:
    block_index: int
    tick: int
    tx_id: Optional[str] = None


@dataclass
class Receipt:
    tx_id: Optional[str]
    status: str  # accepted | rejected
    reason: Optional[str] = None
    emitted_events: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "emitted_events": self.emitted_events,
            "reason": self.reason,
            "status": self.status,
            "tx_id": self.tx_id,
        }


# Handler signature: (state_slice, action, payload, sender, ctx) -> emitted events.
# Handlers must perform every check before the first mutation of state_slice.
Handler = Callable[[dict, str, dict, str, ExecContext], list]

# View signature: (state_slice, params) -> JSON result.
View = Callable[[dict, dict], Any]


@dataclass(frozen=True)
class ContractDescriptor:
    contract_id: str
    schemas: dict  # action -> {field: field spec}
    handler: Handler
    views: dict  # view name -> View
    initial_state: Callable[[], dict]


@dataclass
class Registry:
    contracts: dict = field(default_factory=dict)

    def register(self, descriptor: ContractDescriptor) -> None:
        if descriptor.contract_id in self.contracts:
            raise DuplicateContract(descriptor.contract_id)
        self.contracts[descriptor.contract_id] = descriptor

    def list_ids(self) -> list[str]:
        return sorted(self.contracts)

    def initial_state(self) -> dict:
        return {cid: desc.initial_state() for cid, desc in sorted(self.contracts.items())}


def state_hash(state: dict) -> str:
    return canonical_hash(state)


def _check_field(name: str, value: Any, spec: dict, violations: list, prefix: str) -> None:
    path = f"{prefix}{name}"
    ftype = spec["type"]
    if ftype == "int":
        if not isinstance(value, int) or isinstance(value, bool):
            violations.append(f"{path}: expected integer")
            return
        if "min" in spec and value < spec["min"]:
            violations.append(f"{path}: below minimum {spec['min']}")
        if "max" in spec and value > spec["max"]:
            violations.append(f"{path}: above maximum {spec['max']}")
    elif ftype == "str":
        if not isinstance(value, str):
            violations.append(f"{path}: expected string")
            return
        if "enum" in spec and value not in spec["enum"]:
            violations.append(f"{path}: not one of {sorted(spec['enum'])}")
        if "max_len" in spec and len(value) > spec["max_len"]:
            violations.append(f"{path}: longer than {spec['max_len']}")
        if spec.get("wallet"):
            if not re.match(WALLET_RE, value):
                violations.append(f"{path}: not a wallet address")
    elif ftype == "bool":
        if not isinstance(value, bool):
            violations.append(f"{path}: expected boolean")
    elif ftype == "list":
        if not isinstance(value, list):
            violations.append(f"{path}: expected array")
            return
        if "min_len" in spec and len(value) < spec["min_len"]:
            violations.append(f"{path}: fewer than {spec['min_len']} items")
        if "max_len" in spec and len(value) > spec["max_len"]:
            violations.append(f"{path}: more than {spec['max_len']} items")
        if "item" in spec:
            for i, item in enumerate(value):
                _check_field(str(i), item, spec["item"], violations, f"{path}.")
    elif ftype == "dict":
        if not isinstance(value, dict):
            violations.append(f"{path}: expected object")
            return
        _check_payload(value, spec.get("fields", {}), violations, f"{path}.")
    else:  # pragma: no cover - schema author error
        raise EngineError(f"unknown schema type {ftype!r} at {path}")


def _check_payload(payload: dict, schema: dict, violations: list, prefix: str = "payload.") -> None:
    for name, spec in schema.items():
        if name not in payload:
            if spec.get("required", True):
                violations.append(f"{prefix}{name}: required field missing")
            continue
        _check_field(name, payload[name], spec, violations, prefix)
    for name in payload:
        if name not in schema:
            violations.append(f"{prefix}{name}: field not allowed")


def validate_envelope(registry: Registry, envelope: Any, raw: bytes | None = None) -> list[str]:
    """Violation list; empty means the envelope is acceptable.

    When raw bytes are supplied they must equal the canonical
    serialization of the parsed envelope.
    """
    violations: list[str] = []
    if raw is not None and not is_canonical(raw):
        violations.append("envelope: non-canonical byte form")
    if not isinstance(envelope, dict):
        return violations + ["envelope: expected object"]
    if set(envelope) != {"action", "contract_id", "payload", "sender"}:
        violations.append("envelope: must have exactly action, contract_id, payload, sender")
        return violations
    contract_id = envelope["contract_id"]
    descriptor = registry.contracts.get(contract_id)
    if descriptor is None:
        violations.append(f"contract_id: unknown contract {contract_id!r}")
        return violations
    action = envelope["action"]
    if action not in descriptor.schemas:
        violations.append(f"action: unknown action {action!r} for contract {contract_id!r}")
        return violations
    if not isinstance(envelope["sender"], str):
        violations.append("sender: expected wallet string")
    payload = envelope["payload"]
    if not isinstance(payload, dict):
        violations.append("payload: expected object")
        return violations
    _check_payload(payload, descriptor.schemas[action], violations)
    return violations


def execute(registry: Registry, state: dict, envelope: dict, ctx: ExecContext) -> Receipt:
    """Apply one committed envelope to state in place.

    Schema violations and handler rejections yield a rejected Receipt and
    leave state byte-identical. An unregistered contract inside a
    committed chain is registry drift between nodes and raises.
    """
    contract_id = envelope.get("contract_id")
    if contract_id not in registry.contracts:
        raise UnknownContract(f"committed envelope names unregistered contract {contract_id!r}")
    violations = validate_envelope(registry, envelope)
    if violations:
        return Receipt(tx_id=ctx.tx_id, status="rejected", reason="; ".join(violations))
    descriptor = registry.contracts[contract_id]
    try:
        events = descriptor.handler(
            state[contract_id], envelope["action"], envelope["payload"], envelope["sender"], ctx
        )
    except HandlerRejection as rej:
        return Receipt(tx_id=ctx.tx_id, status="rejected", reason=rej.reason)
    return Receipt(tx_id=ctx.tx_id, status="accepted", emitted_events=events)


def query(registry: Registry, state: dict, request: dict) -> Any:
    """Read-only view dispatch; request = {"view": "contract.view", "params": {...}}."""
    view_name = request.get("view", "")
    contract_id, _, short = view_name.partition(".")
    descriptor = registry.contracts.get(contract_id)
    if descriptor is None or short not in descriptor.views:
        raise UnknownView(view_name)
    return descriptor.views[short](state[contract_id], request.get("params", {}))


def replay_chain(registry: Registry, chain) -> tuple[dict, list[Receipt]]:
    """Fold a committed chain from genesis into (state, receipts)."""
    state = registry.initial_state()
    receipts = []
    for block in chain.blocks:
        for tx in block.transactions:
            ctx = ExecContext(block_index=block.index, tick=tx.logical_time, tx_id=tx.tx_id)
            receipts.append(execute(registry, state, tx.envelope, ctx))
    return state, receipts
