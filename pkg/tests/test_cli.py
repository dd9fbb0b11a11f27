"""Command-line interface: exit codes, outputs, figures, eval/run agreement."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from conman.cli import main

SCENARIOS = Path(__file__).parent / "scenarios"

SNAPSHOT = {
    "hosts": [
        {
            "id": "hostA",
            "interfaces": [
                {
                    "index": 0,
                    "tech": "wlan",
                    "max_speed": 11000,
                    "available": True,
                    "charge_rate": 2.0,
                    "current_speed": 5000,
                }
            ],
        },
        {
            "id": "hostB",
            "interfaces": [
                {
                    "index": 0,
                    "tech": "wlan",
                    "max_speed": 11000,
                    "available": True,
                    "current_speed": 5000,
                },
                {
                    "index": 1,
                    "tech": "wlan",
                    "max_speed": 11000,
                    "available": True,
                    "current_speed": 5000,
                },
            ],
        },
    ]
}

# Master hostA weighs charge; slave hostB pins its second interface, so the
# master's broadcast tie is resolved by the slave to pair (0, 1).
POLICIES = {
    "hostA": {
        "policies": [
            {"id": "a-weight", "scope": "device", "end_type": "master",
             "weight": [{"factor": "charge_rate", "w": 1.0}]}
        ]
    },
    "hostB": {
        "policies": [
            {"id": "b-pin", "scope": "device", "end_type": "slave", "default": "index:1"}
        ]
    },
}


@pytest.fixture
def snapshot_file(tmp_path):
    path = tmp_path / "snapshot.json"
    path.write_text(json.dumps(SNAPSHOT))
    return path


@pytest.fixture
def policies_file(tmp_path):
    path = tmp_path / "policies.json"
    path.write_text(json.dumps(POLICIES))
    return path


# -- run ------------------------------------------------------------------

def test_run_happy_path_writes_outputs(tmp_path, capsys):
    trace = tmp_path / "trace.jsonl"
    metrics = tmp_path / "metrics.json"
    code = main(
        [
            "run",
            str(SCENARIOS / "always_wlan.json"),
            "--trace",
            str(trace),
            "--metrics",
            str(metrics),
            "--report",
            "text",
            "--figures",
            str(tmp_path / "figs"),
        ]
    )
    assert code == 0
    assert trace.stat().st_size > 0
    loaded = json.loads(metrics.read_text())
    assert loaded["channels"]["app1"]["switches"] == 0
    out = capsys.readouterr().out
    assert "channel app1" in out
    assert (tmp_path / "figs" / "timeline.png").stat().st_size > 0
    assert (tmp_path / "figs" / "cost.png").stat().st_size > 0


def test_run_json_report_is_machine_readable(capsys, tmp_path):
    code = main(["run", str(SCENARIOS / "wlan_fade.json"), "--report", "json"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["channels"]["app1"]["switches"] == 1


def test_run_report_renders_figures_next_to_trace(tmp_path, capsys):
    trace = tmp_path / "out" "_trace.jsonl"
    code = main(["run", str(SCENARIOS / "down_up.json"), "--trace", str(trace), "--report", "text"])
    assert code == 0
    assert (tmp_path / "timeline.png").exists()
    assert (tmp_path / "cost.png").exists()


def test_run_missing_file_is_io_error(capsys):
    assert main(["run", "/does/not/exist.json"]) == 2
    assert "cannot read" in capsys.readouterr().err


def test_run_malformed_scenario_is_parse_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{]")
    assert main(["run", str(bad)]) == 2


def test_run_validation_failure_cites_policy(tmp_path, capsys):
    doc = json.loads((SCENARIOS / "always_wlan.json").read_text())
    doc["policies"]["hostA"]["policies"][0] = {
        "id": "lopsided",
        "scope": "device",
        "end_type": "master",
        "weight": [{"factor": "charge_rate", "w": 0.7}],
    }
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert main(["run", str(bad)]) == 1
    err = capsys.readouterr().err
    assert "lopsided" in err


def test_run_twice_produces_identical_bytes(tmp_path):
    outputs = []
    for k in range(2):
        trace = tmp_path / f"t{k}.jsonl"
        metrics = tmp_path / f"m{k}.json"
        assert main(
            ["run", str(SCENARIOS / "flap_slow.json"), "--trace", str(trace), "--metrics", str(metrics)]
        ) == 0
        outputs.append((trace.read_bytes(), metrics.read_bytes()))
    assert outputs[0] == outputs[1]


def test_internal_failure_maps_to_exit_3(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr("conman.cli.run_simulation", lambda s: (_ for _ in ()).throw(RuntimeError("boom")))
    assert main(["run", str(SCENARIOS / "always_wlan.json")]) == 3
    assert "internal" in capsys.readouterr().err


# -- validate ---------------------------------------------------------------

def test_validate_clean_policy_is_silent(tmp_path, capsys):
    path = tmp_path / "p.json"
    path.write_text(json.dumps(POLICIES["hostA"]))
    assert main(["validate", str(path), "--kind", "policy"]) == 0
    assert capsys.readouterr().out == ""


def test_validate_prints_every_violation(tmp_path, capsys):
    doc = {
        "policies": [
            {
                "id": "p1",
                "scope": "device",
                "end_type": "master",
                "weight": [{"factor": "charge_rate", "w": 0.7}],
            },
            {
                "id": "p2",
                "scope": "device",
                "end_type": "master",
                "priority": [{"target": "index:0", "value": 1}, {"target": "index:0", "value": 2}],
            },
        ]
    }
    path = tmp_path / "p.json"
    path.write_text(json.dumps(doc))
    assert main(["validate", str(path), "--kind", "policy"]) == 1
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 2
    assert "p1" in out[0] and "p2" in out[1]


def test_validate_scenario_kind(capsys):
    assert main(["validate", str(SCENARIOS / "e2e_matrix.json"), "--kind", "scenario"]) == 0


def test_validate_unknown_kind_exits_with_usage():
    with pytest.raises(SystemExit) as exc:
        main(["validate", "whatever.json", "--kind", "nonsense"])
    assert exc.value.code == 2


def test_validate_unreadable_file(capsys):
    assert main(["validate", "/does/not/exist.json", "--kind", "policy"]) == 2


def test_validate_schema_error_reports_exit_2(tmp_path, capsys):
    path = tmp_path / "p.json"
    path.write_text(json.dumps({"policies": [{"id": "x", "scope": "galaxy", "end_type": "master", "use": "wlan"}]}))
    assert main(["validate", str(path), "--kind", "policy"]) == 2
    assert "galaxy" in capsys.readouterr().out


# -- eval -------------------------------------------------------------------

def test_eval_selects_slave_resolved_pair(snapshot_file, policies_file, capsys):
    code = main(["eval", str(snapshot_file), str(policies_file), "--request", "tc=interactive,dir=send"])
    assert code == 0
    result = json.loads(capsys.readouterr().out)
    assert result["pair"] == [0, 1]
    assert result["mmp"]["hostA"] == "a-weight"
    assert result["mode"] == "master_slave"
    assert result["costs"]["hostA"] == [[0.2, 0.2]]


def test_eval_no_valid_connection(tmp_path, policies_file, capsys):
    snapshot = json.loads(json.dumps(SNAPSHOT))
    for host in snapshot["hosts"]:
        for iface in host["interfaces"]:
            iface["available"] = False
    path = tmp_path / "down.json"
    path.write_text(json.dumps(snapshot))
    code = main(["eval", str(path), str(policies_file), "--request", "tc=interactive,dir=send"])
    assert code == 1
    assert capsys.readouterr().out.strip() == "no_valid_connection"


def test_eval_malformed_request(snapshot_file, policies_file, capsys):
    code = main(["eval", str(snapshot_file), str(policies_file), "--request", "tc"])
    assert code == 2
    assert "usage" in capsys.readouterr().err


def test_eval_unknown_traffic_class(snapshot_file, policies_file, capsys):
    code = main(["eval", str(snapshot_file), str(policies_file), "--request", "tc=warp,dir=send"])
    assert code == 2


def test_eval_mistyped_snapshot_value_is_parse_error(tmp_path, policies_file, capsys):
    snapshot = json.loads(json.dumps(SNAPSHOT))
    snapshot["hosts"][0]["interfaces"][0]["index"] = "zero"
    path = tmp_path / "typed.json"
    path.write_text(json.dumps(snapshot))
    code = main(["eval", str(path), str(policies_file), "--request", "tc=interactive,dir=send"])
    assert code == 2


def test_eval_shared_policy_document(snapshot_file, tmp_path, capsys):
    shared = tmp_path / "shared.json"
    shared.write_text(
        json.dumps({"policies": [{"id": "only", "scope": "device", "end_type": "slave", "default": "wlan"}]})
    )
    code = main(["eval", str(snapshot_file), str(shared), "--request", "tc=interactive,dir=send"])
    assert code == 0
    result = json.loads(capsys.readouterr().out)
    assert result["mode"] == "peer_to_peer"
    assert result["pair"] == [0, 0]


def test_eval_agrees_with_zero_event_run(snapshot_file, policies_file, tmp_path, capsys):
    code = main(["eval", str(snapshot_file), str(policies_file), "--request", "tc=interactive,dir=bidirectional"])
    assert code == 0
    eval_result = json.loads(capsys.readouterr().out)

    scenario = {
        "hosts": [
            {
                "id": "hostA",
                "interfaces": [
                    {
                        "index": 0,
                        "tech": "wlan",
                        "max_speed": 11000,
                        "initial": {"available": True, "charge_rate": 2.0, "current_speed": 5000},
                    }
                ],
            },
            {
                "id": "hostB",
                "interfaces": [
                    {
                        "index": 0,
                        "tech": "wlan",
                        "max_speed": 11000,
                        "initial": {"available": True, "current_speed": 5000},
                    },
                    {
                        "index": 1,
                        "tech": "wlan",
                        "max_speed": 11000,
                        "initial": {"available": True, "current_speed": 5000},
                    },
                ],
            },
        ],
        "policies": POLICIES,
        "applications": [
            {
                "id": "app1",
                "traffic_class": "interactive",
                "direction": "bidirectional",
                "qos": {
                    "min_throughput": 100,
                    "max_delay": 1000,
                    "max_cost_rate": 10.0,
                    "max_disruption": 1000,
                    "min_acceptable": 0.5,
                },
                "start": 0,
                "stop": 1000,
            }
        ],
    }
    scenario_path = tmp_path / "equiv.json"
    scenario_path.write_text(json.dumps(scenario))
    trace_path = tmp_path / "equiv_trace.jsonl"
    assert main(["run", str(scenario_path), "--trace", str(trace_path)]) == 0
    capsys.readouterr()
    first = json.loads(trace_path.read_text().splitlines()[0])
    assert first["cause"] == "establish"
    assert first["new_pair"] == eval_result["pair"]
    assert first["mmp"] == eval_result["mmp"]["hostA"]
    assert first["cost"] == eval_result["cost"]
