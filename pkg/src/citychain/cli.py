"""Command-line surface over the ledger, simulator and workflows.

Exit codes: 0 ok, 1 domain failure (invalid chain, unknown tx, audit of
an unplanned vehicle), 2 usage or scenario-schema error. All outputs on
stdout are canonical JSON so they can be diffed and piped.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import engine, identity, ledger, scenario, workflows
from .canon import canonical_dumps

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2


def _out(obj) -> None:
    print(canonical_dumps(obj))


def _load_chain(path: str) -> ledger.Chain:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_DOMAIN)
    try:
        return ledger.import_chain(text)
    except (KeyError, ValueError) as exc:
        print(f"error: malformed chain file: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_DOMAIN)


def _load_valid_chain(path: str) -> ledger.Chain:
    chain = _load_chain(path)
    report = ledger.validate_chain(chain)
    if not report.valid:
        print(
            f"error: invalid chain (index {report.first_invalid_index}, {report.reason})",
            file=sys.stderr,
        )
        raise SystemExit(EXIT_DOMAIN)
    return chain


def _replayed_state(path: str) -> dict:
    chain = _load_valid_chain(path)
    state, _ = engine.replay_chain(workflows.civic_registry(), chain)
    return state


def cmd_keygen(args) -> int:
    try:
        seed = bytes.fromhex(args.seed)
    except ValueError:
        print("error: --seed must be hex", file=sys.stderr)
        return EXIT_USAGE
    if len(seed) != 32:
        print("error: --seed must be 32 bytes (64 hex chars)", file=sys.stderr)
        return EXIT_USAGE
    keypair = identity.generate_keypair(seed)
    identity.save_key_file(keypair, args.out)
    _out({"address": keypair.address, "path": args.out})
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        data = json.loads(Path(args.scenario).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        print(f"error: cannot load scenario: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        scn = scenario.parse_scenario(data)
    except scenario.ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None:
        scn.seed = args.seed
    result = scenario.run_scenario(scn)
    scenario.write_artifacts(result, args.out)
    _out(result.report)
    return EXIT_OK


def cmd_validate(args) -> int:
    chain = _load_chain(args.chain)
    report = ledger.validate_chain(chain)
    _out(report.to_dict())
    return EXIT_OK if report.valid else EXIT_DOMAIN


def cmd_trace(args) -> int:
    chain = _load_valid_chain(args.chain)
    try:
        _out(ledger.trace_transaction(chain, args.tx_id))
    except ledger.NotFound as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


def cmd_stats(args) -> int:
    state = _replayed_state(args.chain)
    params = {} if args.origin is None else {"origin_stop": args.origin}
    _out(workflows.transport_stats(state["transport"], params))
    return EXIT_OK


def cmd_audit_path(args) -> int:
    state = _replayed_state(args.chain)
    try:
        _out(
            {
                "anomalies": workflows.detect_hijack(state["path"], args.vehicle),
                "arrival_tick": workflows.arrival_tick(state["path"], args.vehicle),
                "vehicle": args.vehicle,
            }
        )
    except workflows.WorkflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


def cmd_export(args) -> int:
    chain = _load_valid_chain(args.chain)
    Path(args.out).write_text(ledger.export_chain(chain), encoding="utf-8")
    _out({"blocks": len(chain), "path": args.out})
    return EXIT_OK


def cmd_import(args) -> int:
    # import re-canonicalizes: import -> export of an export is identity
    return cmd_export(args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="citychain", description="Hash-chained civic ledger toolkit"
    )
    parser.add_argument("--format", choices=["json"], default="json")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="derive a key file from a 32-byte hex seed")
    p.add_argument("--seed", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("run", help="execute a scenario file deterministically")
    p.add_argument("scenario")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="validate an exported chain file")
    p.add_argument("chain")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("trace", help="provenance of a committed transaction")
    p.add_argument("chain")
    p.add_argument("tx_id")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("stats", help="transport statistics over a chain file")
    p.add_argument("chain")
    p.add_argument("--origin", default=None, help="restrict to one origin stop")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("audit-path", help="hijack audit for one vehicle")
    p.add_argument("chain")
    p.add_argument("vehicle")
    p.set_defaults(func=cmd_audit_path)

    p = sub.add_parser("export", help="re-export a chain file in canonical form")
    p.add_argument("chain")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("import", help="import and canonically re-emit a chain file")
    p.add_argument("chain")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_import)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
