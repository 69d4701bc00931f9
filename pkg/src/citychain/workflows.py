"""Civic contracts: service requests, clean energy, paths, transport.

Four contracts are registered on the access layer:

  service   — citizen/institution request state machine; fulfilled
              documents are stored on-chain only as ciphertext sealed to
              the citizen's encryption key (encryption happens client
              side in the envelope builders, so replay stays pure).
  energy    — production and trading in integer Wh with a non-negative
              storage balance per building; carbon share in ppm.
  path      — plan registration, checkpoint notarization, and the
              hijack audit (deviation / missing / out-of-order).
  transport — anonymous ride events (exactly five fields) and
              aggregate statistics.

Handlers validate everything before touching state, so a rejected
envelope never leaves a state delta.
"""

from __future__ import annotations

import math
import random
from typing import Optional

from . import identity
from .canon import canonical_hash
from .engine import (
    ContractDescriptor,
    ExecContext,
    HandlerRejection,
    Registry,
)

MAX_DOCUMENT_BYTES = 64 * 1024
SERVICE_KINDS = ("residence-certificate", "birth-certificate", "license", "taxi-authentication")
ENERGY_SOURCES = ("solar", "wind", "other")
RENEWABLE_SOURCES = ("solar", "wind")
PPM = 1_000_000


class WorkflowError(ValueError):
    """Raised by query views for domain failures (e.g. auditing an
    unplanned vehicle)."""


# ---------------------------------------------------------------------------
# service: Submitted -> Authenticated -> Fulfilled, Rejected from the
# first two states. The contract's document request (the middle step of
# the paper-style protocol) is emitted as an event of the authenticate
# transaction rather than a separate committed status.

_WALLET = {"type": "str", "wallet": True}

_CIPHER_FIELDS = {
    "ciphertext": {"type": "str", "max_len": 90000},
    "ephemeral_public": {"type": "str", "max_len": 64},
    "nonce": {"type": "str", "max_len": 32},
    "tag": {"type": "str", "max_len": 32},
}

SERVICE_SCHEMAS = {
    "request": {
        "institution": _WALLET,
        "service_kind": {"type": "str", "enum": list(SERVICE_KINDS)},
    },
    "authenticate": {
        "request_id": {"type": "str", "max_len": 64},
        "decision": {"type": "bool"},
        "registry_proof": {"type": "bool"},
    },
    "fulfill": {
        "request_id": {"type": "str", "max_len": 64},
        "document": {"type": "dict", "fields": _CIPHER_FIELDS},
    },
}


def service_request_id(citizen: str, institution: str, service_kind: str, tick: int) -> str:
    return canonical_hash(
        {
            "citizen": citizen,
            "institution": institution,
            "service_kind": service_kind,
            "tick": tick,
        }
    )


def _service_handler(state: dict, action: str, payload: dict, sender: str, ctx: ExecContext) -> list:
    requests = state["requests"]
    if action == "request":
        request_id = service_request_id(sender, payload["institution"], payload["service_kind"], ctx.tick)
        if request_id in requests:
            raise HandlerRejection("duplicate-request")
        requests[request_id] = {
            "citizen": sender,
            "document": None,
            "institution": payload["institution"],
            "reason": None,
            "request_id": request_id,
            "service_kind": payload["service_kind"],
            "status": "Submitted",
            "status_history": ["Submitted"],
            "step_receipts": [ctx.tx_id],
        }
        return [{"kind": "service-requested", "request_id": request_id}]

    request = requests.get(payload["request_id"])
    if request is None:
        raise HandlerRejection("unknown-request")
    if sender != request["institution"]:
        raise HandlerRejection("wrong-institution")

    if action == "authenticate":
        if request["status"] not in ("Submitted", "Authenticated"):
            raise HandlerRejection("invalid-transition")
        if not payload["decision"]:
            new_status, reason = "Rejected", "not-authentic"
        elif not payload["registry_proof"]:
            new_status, reason = "Rejected", "not-obtainable"
        else:
            if request["status"] != "Submitted":
                raise HandlerRejection("invalid-transition")
            new_status, reason = "Authenticated", None
        request["status"] = new_status
        request["reason"] = reason
        request["status_history"].append(new_status)
        request["step_receipts"].append(ctx.tx_id)
        events = [{"kind": "service-" + new_status.lower(), "request_id": request["request_id"]}]
        if new_status == "Authenticated":
            events.append({"kind": "document-requested", "request_id": request["request_id"]})
        return events

    if action == "fulfill":
        if request["status"] != "Authenticated":
            raise HandlerRejection("invalid-transition")
        document = payload["document"]
        try:
            size = len(identity.b64d(document["ciphertext"]))
        except ValueError:
            raise HandlerRejection("malformed-document") from None
        if size > MAX_DOCUMENT_BYTES:
            raise HandlerRejection("document-too-large")
        request["status"] = "Fulfilled"
        request["document"] = dict(document)
        request["status_history"].append("Fulfilled")
        request["step_receipts"].append(ctx.tx_id)
        return [{"kind": "service-fulfilled", "request_id": request["request_id"]}]

    raise HandlerRejection(f"unknown action {action!r}")  # pragma: no cover


def _service_status(state: dict, params: dict) -> dict:
    request = state["requests"].get(params.get("request_id", ""))
    if request is None:
        raise WorkflowError("unknown-request")
    return request


# ---------------------------------------------------------------------------
# energy

ENERGY_SCHEMAS = {
    "produce": {
        "amount_wh": {"type": "int", "min": 1},
        "source": {"type": "str", "enum": list(ENERGY_SOURCES)},
    },
    "trade": {
        "amount_wh": {"type": "int", "min": 1},
        "buyer": _WALLET,
    },
}


def _energy_handler(state: dict, action: str, payload: dict, sender: str, ctx: ExecContext) -> list:
    balances = state["balances"]
    amount = payload["amount_wh"]
    if action == "produce":
        state["entries"].append(
            {
                "amount_wh": amount,
                "building": sender,
                "kind": "production",
                "source": payload["source"],
                "tick": ctx.tick,
            }
        )
        balances[sender] = balances.get(sender, 0) + amount
        return [{"balance_wh": balances[sender], "building": sender, "kind": "energy-produced"}]
    if action == "trade":
        buyer = payload["buyer"]
        if balances.get(sender, 0) < amount:
            raise HandlerRejection("insufficient-storage")
        # trade-out + trade-in land in one transaction, atomically
        state["entries"].append(
            {"amount_wh": amount, "building": sender, "kind": "trade-out", "source": "other", "tick": ctx.tick}
        )
        state["entries"].append(
            {"amount_wh": amount, "building": buyer, "kind": "trade-in", "source": "other", "tick": ctx.tick}
        )
        balances[sender] -= amount
        balances[buyer] = balances.get(buyer, 0) + amount
        return [{"amount_wh": amount, "buyer": buyer, "kind": "energy-traded", "seller": sender}]
    raise HandlerRejection(f"unknown action {action!r}")  # pragma: no cover


def energy_balance(state: dict, building: str) -> int:
    return state["balances"].get(building, 0)


def carbon_report(state: dict, building: str) -> dict:
    """Renewable share of a building's production, in exact ppm (floor)."""
    renewable = total = 0
    for entry in state["entries"]:
        if entry["building"] == building and entry["kind"] == "production":
            total += entry["amount_wh"]
            if entry["source"] in RENEWABLE_SOURCES:
                renewable += entry["amount_wh"]
    share = (renewable * PPM) // total if total else 0
    return {
        "building": building,
        "renewable_share_ppm": share,
        "renewable_wh": renewable,
        "total_wh": total,
    }


def _energy_balance_view(state: dict, params: dict) -> dict:
    building = params.get("building", "")
    return {"balance_wh": energy_balance(state, building), "building": building}


def _energy_carbon_view(state: dict, params: dict) -> dict:
    return carbon_report(state, params.get("building", ""))


# ---------------------------------------------------------------------------
# path

_COORD = {"type": "int", "min": -10**9, "max": 10**9}

PATH_SCHEMAS = {
    "plan": {
        "tolerance_cm": {"type": "int", "min": 1},
        "waypoints": {
            "type": "list",
            "min_len": 2,
            "max_len": 10000,
            "item": {"type": "list", "min_len": 2, "max_len": 2, "item": _COORD},
        },
    },
    "checkpoint": {
        "observed": {"type": "list", "min_len": 2, "max_len": 2, "item": _COORD},
        "waypoint_index": {"type": "int", "min": 0},
    },
}


def _path_handler(state: dict, action: str, payload: dict, sender: str, ctx: ExecContext) -> list:
    if action == "plan":
        plan_id = canonical_hash(
            {"tick": ctx.tick, "vehicle": sender, "waypoints": payload["waypoints"]}
        )
        # a fresh plan supersedes the previous one and its checkpoints
        state["plans"][sender] = {
            "plan_id": plan_id,
            "tick": ctx.tick,
            "tolerance_cm": payload["tolerance_cm"],
            "vehicle": sender,
            "waypoints": payload["waypoints"],
        }
        state["checkpoints"][sender] = []
        return [{"kind": "path-planned", "plan_id": plan_id, "vehicle": sender}]
    if action == "checkpoint":
        plan = state["plans"].get(sender)
        if plan is None:
            raise HandlerRejection("no-plan")
        index = payload["waypoint_index"]
        if index >= len(plan["waypoints"]):
            raise HandlerRejection("waypoint-out-of-range")
        previous = state["checkpoints"][sender]
        if previous and ctx.tick < previous[-1]["tick"]:
            raise HandlerRejection("non-monotonic-tick")
        previous.append(
            {
                "observed": payload["observed"],
                "plan_id": plan["plan_id"],
                "tick": ctx.tick,
                "waypoint_index": index,
            }
        )
        return [{"kind": "checkpoint-notarized", "vehicle": sender, "waypoint_index": index}]
    raise HandlerRejection(f"unknown action {action!r}")  # pragma: no cover


def detect_hijack(state: dict, vehicle: str) -> list[dict]:
    """Audit notarized checkpoints against the registered plan.

    Scan order: for each checkpoint in commit order, a deviation anomaly
    when the observed point is farther than the tolerance from its
    waypoint (squared-distance compare; reported distance is the floor
    integer root), then an out-of-order anomaly when the index decreases
    relative to the previous checkpoint. Missing anomalies (indices below
    the highest notarized index never seen) follow, ascending.
    """
    plan = state["plans"].get(vehicle)
    if plan is None:
        raise WorkflowError("no-plan")
    tolerance_sq = plan["tolerance_cm"] ** 2
    anomalies = []
    seen: set[int] = set()
    prev_index: Optional[int] = None
    for cp in state["checkpoints"].get(vehicle, []):
        index = cp["waypoint_index"]
        wx, wy = plan["waypoints"][index]
        ox, oy = cp["observed"]
        dist_sq = (ox - wx) ** 2 + (oy - wy) ** 2
        if dist_sq > tolerance_sq:
            anomalies.append(
                {"distance_cm": math.isqrt(dist_sq), "kind": "deviation", "waypoint_index": index}
            )
        if prev_index is not None and index < prev_index:
            anomalies.append({"kind": "out-of-order", "waypoint_index": index})
        prev_index = index
        seen.add(index)
    if seen:
        for index in range(max(seen)):
            if index not in seen:
                anomalies.append({"kind": "missing", "waypoint_index": index})
    return anomalies


def arrival_tick(state: dict, vehicle: str) -> Optional[int]:
    """Tick of the checkpoint notarized at the final waypoint, if any."""
    plan = state["plans"].get(vehicle)
    if plan is None:
        raise WorkflowError("no-plan")
    last = len(plan["waypoints"]) - 1
    for cp in state["checkpoints"].get(vehicle, []):
        if cp["waypoint_index"] == last:
            return cp["tick"]
    return None


def _path_audit_view(state: dict, params: dict) -> dict:
    vehicle = params.get("vehicle", "")
    return {
        "anomalies": detect_hijack(state, vehicle),
        "arrival_tick": arrival_tick(state, vehicle),
        "vehicle": vehicle,
    }


# ---------------------------------------------------------------------------
# transport: events carry exactly rider/origin/destination/wait/tick —
# anonymity by data minimization, enforced by the strict schema.

TRANSPORT_SCHEMAS = {
    "event": {
        "destination_stop": {"type": "str", "max_len": 80},
        "origin_stop": {"type": "str", "max_len": 80},
        "wait_s": {"type": "int", "min": 0},
    },
}


def _transport_handler(state: dict, action: str, payload: dict, sender: str, ctx: ExecContext) -> list:
    if action == "event":
        state["events"].append(
            {
                "destination_stop": payload["destination_stop"],
                "origin_stop": payload["origin_stop"],
                "rider": sender,
                "tick": ctx.tick,
                "wait_s": payload["wait_s"],
            }
        )
        return [{"kind": "transport-recorded"}]
    raise HandlerRejection(f"unknown action {action!r}")  # pragma: no cover


def transport_stats(state: dict, filter_params: Optional[dict] = None) -> dict:
    """Aggregate committed ride events.

    top_destinations ordered by count descending then stop id ascending;
    mean waits per origin stop use floor seconds with the remainder in
    microseconds.
    """
    filter_params = filter_params or {}
    origin_filter = filter_params.get("origin_stop")
    events = [
        e
        for e in state["events"]
        if origin_filter is None or e["origin_stop"] == origin_filter
    ]
    dest_counts: dict[str, int] = {}
    waits: dict[str, list[int]] = {}
    for event in events:
        dest_counts[event["destination_stop"]] = dest_counts.get(event["destination_stop"], 0) + 1
        waits.setdefault(event["origin_stop"], []).append(event["wait_s"])
    top = sorted(dest_counts.items(), key=lambda kv: (-kv[1], kv[0]))
    mean_wait = {
        stop: {
            "mean_wait_s": sum(values) // len(values),
            "remainder_us": (sum(values) % len(values)) * PPM // len(values),
        }
        for stop, values in waits.items()
    }
    return {
        "mean_wait": {stop: mean_wait[stop] for stop in sorted(mean_wait)},
        "top_destinations": [[stop, count] for stop, count in top],
        "total_events": len(events),
    }


def _transport_stats_view(state: dict, params: dict) -> dict:
    return transport_stats(state, params)


# ---------------------------------------------------------------------------
# registry assembly and client-side envelope builders

def civic_registry() -> Registry:
    registry = Registry()
    registry.register(
        ContractDescriptor(
            contract_id="service",
            schemas=SERVICE_SCHEMAS,
            handler=_service_handler,
            views={"status": _service_status},
            initial_state=lambda: {"requests": {}},
        )
    )
    registry.register(
        ContractDescriptor(
            contract_id="energy",
            schemas=ENERGY_SCHEMAS,
            handler=_energy_handler,
            views={"balance": _energy_balance_view, "carbon": _energy_carbon_view},
            initial_state=lambda: {"balances": {}, "entries": []},
        )
    )
    registry.register(
        ContractDescriptor(
            contract_id="path",
            schemas=PATH_SCHEMAS,
            handler=_path_handler,
            views={"audit": _path_audit_view},
            initial_state=lambda: {"checkpoints": {}, "plans": {}},
        )
    )
    registry.register(
        ContractDescriptor(
            contract_id="transport",
            schemas=TRANSPORT_SCHEMAS,
            handler=_transport_handler,
            views={"stats": _transport_stats_view},
            initial_state=lambda: {"events": []},
        )
    )
    return registry


def _envelope(contract_id: str, action: str, payload: dict, sender: str) -> dict:
    return {"action": action, "contract_id": contract_id, "payload": payload, "sender": sender}


def build_service_request(citizen: str, institution: str, service_kind: str) -> dict:
    return _envelope(
        "service", "request", {"institution": institution, "service_kind": service_kind}, citizen
    )


def build_authenticate(institution: str, request_id: str, decision: bool, registry_proof: bool) -> dict:
    return _envelope(
        "service",
        "authenticate",
        {"decision": decision, "registry_proof": registry_proof, "request_id": request_id},
        institution,
    )


def build_fulfill(
    institution: str,
    request_id: str,
    document_plaintext: bytes,
    citizen_enc_public: bytes,
    rng: Optional[random.Random] = None,
) -> dict:
    """Seal the document to the citizen client-side, then wrap it."""
    document = identity.encrypt_for(citizen_enc_public, document_plaintext, rng)
    return _envelope(
        "service", "fulfill", {"document": document, "request_id": request_id}, institution
    )


def build_produce(building: str, source: str, amount_wh: int) -> dict:
    return _envelope("energy", "produce", {"amount_wh": amount_wh, "source": source}, building)


def build_trade(seller: str, buyer: str, amount_wh: int) -> dict:
    return _envelope("energy", "trade", {"amount_wh": amount_wh, "buyer": buyer}, seller)


def build_path_plan(vehicle: str, waypoints: list, tolerance_cm: int) -> dict:
    return _envelope(
        "path", "plan", {"tolerance_cm": tolerance_cm, "waypoints": waypoints}, vehicle
    )


def build_checkpoint(vehicle: str, waypoint_index: int, observed: list) -> dict:
    return _envelope(
        "path", "checkpoint", {"observed": observed, "waypoint_index": waypoint_index}, vehicle
    )


def build_transport_event(rider: str, origin_stop: str, destination_stop: str, wait_s: int) -> dict:
    return _envelope(
        "transport",
        "event",
        {"destination_stop": destination_stop, "origin_stop": origin_stop, "wait_s": wait_s},
        rider,
    )
