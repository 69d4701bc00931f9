import json
from importlib import resources
from pathlib import Path

import pytest

from citychain import cli, identity, ledger, scenario

SCENARIOS = resources.files("citychain") / "scenarios"


def load(name):
    return json.loads((SCENARIOS / f"{name}.json").read_text())


def scenario_path(name) -> str:
    return str(SCENARIOS / f"{name}.json")


class TestScenarioParsing:
    def test_bundled_scenarios_parse(self):
        for name in ("service_request", "service_request_rejected", "transport_demo", "city_demo"):
            scn = scenario.parse_scenario(load(name))
            assert scn.num_nodes == 5

    def test_undeclared_actor_reports_field_path(self):
        data = load("transport_demo")
        data["timeline"][0]["actor"] = "ghost"
        with pytest.raises(scenario.ScenarioError, match=r"scenario\.timeline\.0\.actor"):
            scenario.parse_scenario(data)

    def test_decreasing_ticks_rejected(self):
        data = load("transport_demo")
        data["timeline"][1]["tick"] = 1
        data["timeline"][0]["tick"] = 5
        with pytest.raises(scenario.ScenarioError, match="non-decreasing"):
            scenario.parse_scenario(data)

    def test_bad_drop_probability_rejected(self):
        data = load("transport_demo")
        data["network"]["drop_probability"] = "3/2"
        with pytest.raises(scenario.ScenarioError, match="drop_probability"):
            scenario.parse_scenario(data)

    def test_unknown_behavior_rejected(self):
        data = load("transport_demo")
        data["network"]["behaviors"] = {"1": "sneaky"}
        with pytest.raises(scenario.ScenarioError, match="behaviors"):
            scenario.parse_scenario(data)


class TestScenarioRuns:
    def test_service_request_happy_path(self):
        result = scenario.run_scenario(scenario.parse_scenario(load("service_request")))
        requests = result.state["service"]["requests"]
        assert len(requests) == 1
        request = next(iter(requests.values()))
        assert request["status_history"] == ["Submitted", "Authenticated", "Fulfilled"]
        assert len(request["step_receipts"]) == 3
        citizen = identity.keypair_from_material("actor:alice-demo")
        assert identity.decrypt(citizen, request["document"]).startswith(b"Certificate")
        # step receipts appear on chain in protocol order
        positions = [
            ledger.trace_transaction(result.chain, tx_id)["block_index"]
            for tx_id in request["step_receipts"]
        ]
        assert positions == sorted(positions)

    def test_rejected_variant_ends_rejected(self):
        result = scenario.run_scenario(scenario.parse_scenario(load("service_request_rejected")))
        request = next(iter(result.state["service"]["requests"].values()))
        assert request["status"] == "Rejected"
        assert request["reason"] == "not-obtainable"

    def test_rerun_is_bit_identical(self):
        scn = scenario.parse_scenario(load("service_request"))
        a = scenario.run_scenario(scn)
        b = scenario.run_scenario(scenario.parse_scenario(load("service_request")))
        assert ledger.export_chain(a.chain) == ledger.export_chain(b.chain)
        assert a.network.event_log_lines() == b.network.event_log_lines()
        assert a.report == b.report


class TestCli:
    def run_cli(self, *argv):
        return cli.main(list(argv))

    @pytest.fixture()
    def run_artifacts(self, tmp_path):
        out = tmp_path / "out"
        assert self.run_cli("run", scenario_path("city_demo"), "--out", str(out)) == 0
        return out

    def test_keygen_writes_key_file(self, tmp_path):
        out = tmp_path / "key.json"
        assert self.run_cli("keygen", "--seed", "ab" * 32, "--out", str(out)) == 0
        assert identity.load_key_file(str(out)).seed == bytes.fromhex("ab" * 32)

    def test_keygen_bad_seed_usage_error(self, tmp_path):
        assert self.run_cli("keygen", "--seed", "xyz", "--out", str(tmp_path / "k")) == 2

    def test_run_writes_artifacts(self, run_artifacts):
        assert (run_artifacts / "chain.jsonl").exists()
        assert (run_artifacts / "events.jsonl").exists()
        assert (run_artifacts / "report.json").exists()

    def test_run_twice_identical_outputs(self, tmp_path):
        out1, out2 = tmp_path / "one", tmp_path / "two"
        self.run_cli("run", scenario_path("transport_demo"), "--out", str(out1))
        self.run_cli("run", scenario_path("transport_demo"), "--out", str(out2))
        for name in ("chain.jsonl", "events.jsonl", "report.json"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_run_bad_scenario_exit_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        data = load("transport_demo")
        del data["actors"]
        bad.write_text(json.dumps(data))
        assert self.run_cli("run", str(bad), "--out", str(tmp_path / "o")) == 2

    def test_validate_ok_and_tampered(self, run_artifacts, tmp_path, capsys):
        chain_file = run_artifacts / "chain.jsonl"
        assert self.run_cli("validate", str(chain_file)) == 0
        lines = chain_file.read_text().splitlines()
        block = json.loads(lines[2])
        block["transactions"][0]["envelope"]["payload"]["amount_wh"] = 1
        tampered = tmp_path / "tampered.jsonl"
        tampered.write_text("\n".join(lines[:2] + [json.dumps(block)] + lines[3:]) + "\n")
        capsys.readouterr()
        assert self.run_cli("validate", str(tampered)) == 1
        out = json.loads(capsys.readouterr().out)
        assert out["valid"] is False
        assert out["first_invalid_index"] == 2

    def test_trace_known_tx(self, run_artifacts, capsys):
        chain = ledger.import_chain((run_artifacts / "chain.jsonl").read_text())
        tx = chain.blocks[1].transactions[0]
        assert self.run_cli("trace", str(run_artifacts / "chain.jsonl"), tx.tx_id) == 0
        record = json.loads(capsys.readouterr().out)
        assert record["block_index"] == 1
        assert record["sender"] == tx.sender

    def test_trace_unknown_tx_exit_1(self, run_artifacts):
        assert self.run_cli("trace", str(run_artifacts / "chain.jsonl"), "00" * 32) == 1

    def test_stats_on_transport_demo(self, tmp_path, capsys):
        out = tmp_path / "out"
        self.run_cli("run", scenario_path("transport_demo"), "--out", str(out))
        capsys.readouterr()
        assert self.run_cli("stats", str(out / "chain.jsonl")) == 0
        stats = json.loads(capsys.readouterr().out)
        assert stats["total_events"] == 7
        assert stats["top_destinations"][0] == ["central", 4]

    def test_audit_path_cli(self, run_artifacts, capsys):
        vehicle = identity.keypair_from_material("actor:bus-7").address
        assert self.run_cli("audit-path", str(run_artifacts / "chain.jsonl"), vehicle) == 0
        audit = json.loads(capsys.readouterr().out)
        kinds = sorted(a["kind"] for a in audit["anomalies"])
        assert kinds == ["deviation", "missing"]
        assert audit["arrival_tick"] == 25

    def test_audit_unknown_vehicle_exit_1(self, run_artifacts):
        assert self.run_cli("audit-path", str(run_artifacts / "chain.jsonl"), "0x" + "99" * 20) == 1

    def test_export_import_round_trip(self, run_artifacts, tmp_path):
        chain_file = run_artifacts / "chain.jsonl"
        imported = tmp_path / "imported.jsonl"
        reexported = tmp_path / "reexported.jsonl"
        assert self.run_cli("import", str(chain_file), "--out", str(imported)) == 0
        assert self.run_cli("export", str(imported), "--out", str(reexported)) == 0
        assert chain_file.read_bytes() == imported.read_bytes() == reexported.read_bytes()
