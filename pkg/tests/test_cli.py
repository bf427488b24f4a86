import json

import pytest
from typer.testing import CliRunner

from app.cli import app
from app.utils.bench import CSV_COLUMNS
from app.utils.scenario import bundled_path

runner = CliRunner()

UNRECIPROCATED = """\
name: one-sided
stakeholders: [alice]
shards:
  S1:
    accounts:
      a1: {balance: 10, owners: [alice]}
  S2:
    accounts:
      a2: {balance: 10, owners: [alice]}
transactions:
  - requests:
      - {shard: S1, ops: [{account: a1, delta: -1}], deps: [S2+]}
      - {shard: S2, ops: [{account: a2, delta: 1}]}
"""


def invoke(*args: str):
    return runner.invoke(app, ["--log-level", "ERROR", *args])


def test_replay_figure_writes_artifacts(tmp_path):
    result = invoke("replay-figure", "2", "--out-dir", str(tmp_path))
    assert result.exit_code == 0, result.output
    summary = json.loads(result.output.split("artifacts:")[0])
    assert summary["rounds"] == {"0": {"S1": 0, "S2": 1, "S3": 2, "S4": 3}}
    assert (tmp_path / "trace.jsonl").exists()
    assert (tmp_path / "decisions.json").exists()


def test_unknown_figure_exits_with_usage_error():
    result = invoke("replay-figure", "7")
    assert result.exit_code == 2


def test_run_with_overrides(tmp_path):
    result = invoke("run", str(bundled_path("chain5")), "--protocol", "2pc", "--seed", "3", "--out-dir", str(tmp_path))
    assert result.exit_code == 0, result.output
    summary = json.loads(result.output.split("artifacts:")[0])
    assert summary["protocol"] == "2pc" and summary["seed"] == 3


def test_invalid_yaml_exits_with_2(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("name: [unclosed\n")
    result = invoke("run", str(path), "--out-dir", str(tmp_path))
    assert result.exit_code == 2
    assert "Invalid YAML" in result.output


def test_failed_negotiation_exits_with_2(tmp_path):
    path = tmp_path / "one-sided.yaml"
    path.write_text(UNRECIPROCATED)
    result = invoke("run", str(path), "--out-dir", str(tmp_path))
    assert result.exit_code == 2
    assert "error:" in result.output


def test_check_bounds():
    result = invoke("check-bounds", str(bundled_path("figure2")))
    assert result.exit_code == 0, result.output
    assert "n=4 l*=3 global_upper=4 rounds=3" in result.output
    assert "violation" not in result.output


def test_check_bounds_of_a_recorded_trace(tmp_path):
    recorded = invoke("replay-figure", "2", "--out-dir", str(tmp_path))
    assert recorded.exit_code == 0, recorded.output
    result = invoke("check-bounds", str(bundled_path("figure2")), "--trace", str(tmp_path / "trace.jsonl"))
    assert result.exit_code == 0, result.output
    assert "n=4 l*=3 global_upper=4 rounds=3" in result.output
    assert "S4: round=3 upper=" in result.output


def test_check_bounds_flags_a_tampered_trace(tmp_path):
    invoke("replay-figure", "2", "--out-dir", str(tmp_path))
    lines = []
    for line in (tmp_path / "trace.jsonl").read_text().splitlines():
        event = json.loads(line)
        if event["kind"] == "finalize" and event["data"]["shard"] == "S4":
            event["data"]["round"] = 9
        lines.append(json.dumps(event))
    tampered = tmp_path / "tampered.jsonl"
    tampered.write_text("\n".join(lines) + "\n")
    result = invoke("check-bounds", str(bundled_path("figure2")), "--trace", str(tampered))
    assert result.exit_code == 1
    assert "violation: tx 0 S4: discard off distance (observed 9, expected 3)" in result.output


def test_check_bounds_with_a_missing_trace(tmp_path):
    result = invoke("check-bounds", str(bundled_path("figure2")), "--trace", str(tmp_path / "absent.jsonl"))
    assert result.exit_code == 2


def test_audit_of_clean_scenario():
    result = invoke("audit", str(bundled_path("coin_exchange")))
    assert result.exit_code == 0, result.output
    assert "signature counts [2, 2]" in result.output


@pytest.mark.parametrize("suite", ["chain", "ring"])
def test_bench_writes_csv(tmp_path, suite):
    result = invoke("bench", suite, "--max-shards", "3", "--out-dir", str(tmp_path))
    assert result.exit_code == 0, result.output
    text = (tmp_path / f"bench-{suite}.csv").read_text()
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    assert len(text.splitlines()) == 1 + 3 * 2


def test_bench_rejects_too_many_shards(tmp_path):
    result = invoke("bench", "chain", "--max-shards", "9", "--out-dir", str(tmp_path))
    assert result.exit_code == 2
