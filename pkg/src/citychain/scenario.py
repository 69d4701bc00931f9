"""Scenario files: schema checking, deterministic execution, artifacts.

A scenario bundles the network configuration, an actor roster (each
actor is a keypair derived from declared seed material, attached to a
home node) and a timeline of envelope submissions. Running it produces
three artifacts that are byte-identical across runs for the same file:
the exported chain (JSON Lines), the event log (JSON Lines) and a run
report (canonical JSON).
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional

from . import engine, identity, ledger, netsim, workflows
from .canon import canonical_dumps


class ScenarioError(ValueError):
    """Schema violation; message carries the offending field path."""


@dataclass
class Scenario:
    num_nodes: int
    seed: int
    delay_range: tuple[int, int]
    drop_probability: Fraction
    behaviors: dict[int, str]
    proposal_period: Optional[int]
    max_block_txs: int
    max_ticks: int
    actors: dict[str, dict]  # name -> {"keypair", "node"}
    timeline: list[dict]  # {"tick", "actor", "envelope"}


def _require(data: dict, key: str, types, path: str):
    if key not in data:
        raise ScenarioError(f"{path}.{key}: required field missing")
    value = data[key]
    if not isinstance(value, types) or isinstance(value, bool):
        raise ScenarioError(f"{path}.{key}: wrong type")
    return value


def parse_drop_probability(value, path: str) -> Fraction:
    try:
        if isinstance(value, str):
            frac = Fraction(value)
        elif isinstance(value, (int, float)) and not isinstance(value, bool):
            frac = Fraction(str(value))
        else:
            raise ValueError
    except (ValueError, ZeroDivisionError):
        raise ScenarioError(f"{path}: not a rational in [0,1]") from None
    if not 0 <= frac <= 1:
        raise ScenarioError(f"{path}: not a rational in [0,1]")
    return frac


def parse_scenario(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario: expected object")
    network = _require(data, "network", dict, "scenario")
    num_nodes = _require(network, "nodes", int, "scenario.network")
    if num_nodes < 1:
        raise ScenarioError("scenario.network.nodes: must be >= 1")
    seed = _require(network, "seed", int, "scenario.network")
    delay = _require(network, "delay_range", list, "scenario.network")
    if (
        len(delay) != 2
        or not all(isinstance(d, int) and not isinstance(d, bool) for d in delay)
        or not 1 <= delay[0] <= delay[1]
    ):
        raise ScenarioError("scenario.network.delay_range: expected [min,max] with 1 <= min <= max")
    drop = parse_drop_probability(
        network.get("drop_probability", 0), "scenario.network.drop_probability"
    )
    behaviors = {}
    for key, value in network.get("behaviors", {}).items():
        try:
            node_id = int(key)
        except ValueError:
            raise ScenarioError(f"scenario.network.behaviors.{key}: node id not an integer") from None
        if not 0 <= node_id < num_nodes:
            raise ScenarioError(f"scenario.network.behaviors.{key}: node id out of range")
        if value not in netsim.BEHAVIORS:
            raise ScenarioError(f"scenario.network.behaviors.{key}: unknown behavior {value!r}")
        behaviors[node_id] = value
    proposal_period = network.get("proposal_period")
    if proposal_period is not None and (
        not isinstance(proposal_period, int) or proposal_period < 2
    ):
        raise ScenarioError("scenario.network.proposal_period: expected integer >= 2")
    max_block_txs = network.get("max_block_txs", netsim.DEFAULT_MAX_BLOCK_TXS)
    if not isinstance(max_block_txs, int) or max_block_txs < 1:
        raise ScenarioError("scenario.network.max_block_txs: expected integer >= 1")
    max_ticks = network.get("max_ticks", 100_000)

    actors: dict[str, dict] = {}
    roster = _require(data, "actors", list, "scenario")
    for i, entry in enumerate(roster):
        path = f"scenario.actors.{i}"
        if not isinstance(entry, dict):
            raise ScenarioError(f"{path}: expected object")
        name = _require(entry, "name", str, path)
        if name in actors:
            raise ScenarioError(f"{path}.name: duplicate actor {name!r}")
        seed_material = _require(entry, "seed", str, path)
        node = entry.get("node", i % num_nodes)
        if not isinstance(node, int) or not 0 <= node < num_nodes:
            raise ScenarioError(f"{path}.node: out of range")
        actors[name] = {
            "keypair": identity.keypair_from_material(f"actor:{seed_material}"),
            "node": node,
        }

    timeline = []
    entries = _require(data, "timeline", list, "scenario")
    last_tick = 0
    for i, entry in enumerate(entries):
        path = f"scenario.timeline.{i}"
        if not isinstance(entry, dict):
            raise ScenarioError(f"{path}: expected object")
        tick = _require(entry, "tick", int, path)
        if tick < 1:
            raise ScenarioError(f"{path}.tick: must be >= 1")
        if tick < last_tick:
            raise ScenarioError(f"{path}.tick: timeline ticks must be non-decreasing")
        last_tick = tick
        actor = _require(entry, "actor", str, path)
        if actor not in actors:
            raise ScenarioError(f"{path}.actor: undeclared actor {actor!r}")
        envelope = _require(entry, "envelope", dict, path)
        for key in ("contract_id", "action", "payload"):
            _require(envelope, key, (dict if key == "payload" else str), f"{path}.envelope")
        timeline.append({"tick": tick, "actor": actor, "envelope": envelope})

    return Scenario(
        num_nodes=num_nodes,
        seed=seed,
        delay_range=(delay[0], delay[1]),
        drop_probability=drop,
        behaviors=behaviors,
        proposal_period=proposal_period,
        max_block_txs=max_block_txs,
        max_ticks=max_ticks,
        actors=actors,
        timeline=timeline,
    )


def crypto_rng(seed: int, tick: int, actor: str) -> random.Random:
    """Deterministic substream for client-side encryption in scenarios."""
    digest = hashlib.sha256(f"crypto:{seed}:{tick}:{actor}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def materialize_envelope(scenario: Scenario, item: dict) -> dict:
    """Fill in the sender and seal any inline plaintext document."""
    actor = scenario.actors[item["actor"]]
    envelope = dict(item["envelope"])
    payload = dict(envelope["payload"])
    declared = envelope.get("sender")
    sender = actor["keypair"].address
    if declared is not None and declared != sender:
        raise ScenarioError(
            f"timeline envelope sender {declared} does not match actor wallet {sender}"
        )
    envelope["sender"] = sender
    if "document_plaintext_b64" in payload:
        recipient_name = payload.pop("recipient", None)
        if recipient_name not in scenario.actors:
            raise ScenarioError(f"timeline document recipient {recipient_name!r} undeclared")
        plaintext = identity.b64d(payload.pop("document_plaintext_b64"))
        rng = crypto_rng(scenario.seed, item["tick"], item["actor"])
        payload["document"] = identity.encrypt_for(
            scenario.actors[recipient_name]["keypair"].enc_public, plaintext, rng
        )
    envelope["payload"] = payload
    return envelope


def build_network(scenario: Scenario) -> netsim.SimNetwork:
    return netsim.SimNetwork(
        num_nodes=scenario.num_nodes,
        rng_seed=scenario.seed,
        delay_range=scenario.delay_range,
        drop_probability=scenario.drop_probability,
        proposal_period=scenario.proposal_period,
        max_block_txs=scenario.max_block_txs,
        behaviors=scenario.behaviors,
    )


@dataclass
class RunResult:
    network: netsim.SimNetwork
    chain: ledger.Chain
    state: dict
    state_hash: str
    report: dict


def run_scenario(scenario: Scenario) -> RunResult:
    network = build_network(scenario)
    pending = list(scenario.timeline)
    while pending:
        network.step()
        while pending and pending[0]["tick"] <= network.clock:
            item = pending.pop(0)
            envelope = materialize_envelope(scenario, item)
            tx = ledger.make_transaction(
                scenario.actors[item["actor"]]["keypair"], envelope, item["tick"]
            )
            network.submit_transaction(tx, scenario.actors[item["actor"]]["node"])
    network.run_until_quiescent(scenario.max_ticks)

    honest = network.honest_nodes()
    reference = honest[0] if honest else network.nodes[0]
    final_hash = engine.state_hash(reference.state)
    accepted = sum(1 for r in reference.receipts if r.status == "accepted")
    rejected = sum(1 for r in reference.receipts if r.status == "rejected")
    path_state = reference.state["path"]
    audits = {
        vehicle: {
            "anomalies": workflows.detect_hijack(path_state, vehicle),
            "arrival_tick": workflows.arrival_tick(path_state, vehicle),
        }
        for vehicle in sorted(path_state["plans"])
    }
    report = {
        "accepted_receipts": accepted,
        "chain_lengths": {str(n.node_id): len(n.replica) for n in network.nodes},
        "committed_txs": sum(len(b.transactions) for b in reference.replica.blocks),
        "final_tick": network.clock,
        "path_audits": audits,
        "rejected_receipts": rejected,
        "state_hash": final_hash,
        "transport_stats": workflows.transport_stats(reference.state["transport"]),
    }
    return RunResult(
        network=network,
        chain=reference.replica,
        state=reference.state,
        state_hash=final_hash,
        report=report,
    )


def write_artifacts(result: RunResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "chain.jsonl").write_text(ledger.export_chain(result.chain), encoding="utf-8")
    (out / "events.jsonl").write_text(
        "".join(line + "\n" for line in result.network.event_log_lines()), encoding="utf-8"
    )
    (out / "report.json").write_text(
        canonical_dumps(result.report) + "\n", encoding="utf-8"
    )
