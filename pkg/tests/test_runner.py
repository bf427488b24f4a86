import json

import pytest

from app.utils.model import Decision
from app.utils.runner import (
    bound_violations,
    check_bounds,
    metrics_csv,
    run_scenario,
    transactions_from_trace,
    write_artifacts,
)
from app.utils.scenario import load_bundled, load_figure, parse_scenario
from app.utils.shard import Protocol
from app.utils.simnet import Trace, TraceEventKind


def test_single_shard_commits_in_round_zero():
    result = run_scenario(load_bundled("single"))
    tx = result.transactions[0]
    assert not result.failed
    assert tx.complete and tx.rounds == 0
    assert tx.messages == 0
    assert result.decisions() == {"0": {"S1": "commit"}}
    assert result.states["S1/0"] == {"alice-1": 60}


def test_figure2_discard_spreads_one_shard_per_round(figure2):
    result = run_scenario(figure2)
    assert not result.violations
    assert result.rounds() == {"0": {"S1": 0, "S2": 1, "S3": 2, "S4": 3}}
    assert set(result.decisions()["0"].values()) == {"discard"}
    tx = result.transactions[0]
    assert tx.l_star == 3 and tx.global_upper == 4
    assert {s: r.discard_distance for s, r in tx.shards.items()} == {"S1": 0, "S2": 1, "S3": 2, "S4": 3}
    assert result.states["S2/0"] == {"bob-2": 1000}


def test_figure1a_without_optimization_uses_the_full_budget():
    result = run_scenario(load_figure("1a"), optimize=False)
    assert not result.violations
    assert set(result.rounds()["0"].values()) == {2}
    assert set(result.decisions()["0"].values()) == {"commit"}


@pytest.mark.parametrize("protocol", [Protocol.PPAC, Protocol.TWO_PC])
def test_chain5_commits_under_both_protocols(protocol):
    result = run_scenario(load_bundled("chain5"), protocol=protocol)
    assert not result.violations
    assert set(result.decisions()["0"].values()) == {"commit"}
    assert result.states["S1/0"] == {"alice-1": 975}
    assert result.states["S5/0"] == {"shared-5": 1000}
    rounds = result.transactions[0].rounds
    assert rounds == (4 if protocol == Protocol.PPAC else 1)


def test_coin_exchange_moves_both_legs():
    result = run_scenario(load_bundled("coin_exchange"))
    assert not result.failed
    assert result.states["SA/0"] == {"alice-a": 400, "bob-a": 600}
    assert result.states["SB/0"] == {"alice-b": 600, "bob-b": 400}


def test_replicas_agree_and_report_the_slowest_round(figure2):
    result = run_scenario(figure2, replication=3)
    assert not result.violations
    for shard in result.transactions[0].shards.values():
        assert len(shard.replicas) == 3
        assert {r.decision for r in shard.replicas} == {Decision.DISCARD}


def test_bound_violations_flag_late_and_off_distance_rounds(figure2):
    result = run_scenario(figure2)
    tx = result.transactions[0]
    assert bound_violations([tx], optimize=True) == []
    tx.shards["S4"].round = 9
    kinds = {v.kind for v in bound_violations([tx], optimize=True)}
    assert kinds == {"above upper bound", "discard off distance"}


def test_bound_violations_ignore_commit_budget_when_optimizing():
    result = run_scenario(load_figure("1a"), optimize=False)
    tx = result.transactions[0]
    tx.shards["S0"].round = 0
    assert bound_violations([tx], optimize=True) == []
    assert [v.kind for v in bound_violations([tx], optimize=False)] == ["commit off budget"]


def test_check_bounds_reads_outcomes_from_the_trace(figure2):
    result = run_scenario(figure2)
    recorded = Trace.from_jsonl(result.trace.to_jsonl())
    [tx] = transactions_from_trace(recorded, result.scenario)
    assert tx.session == result.transactions[0].session
    assert {s: r.round for s, r in tx.shards.items()} == {"S1": 0, "S2": 1, "S3": 2, "S4": 3}
    assert {s: r.decision for s, r in tx.shards.items()} == dict.fromkeys(["S1", "S2", "S3", "S4"], Decision.DISCARD)
    assert tx.l_star == 3 and tx.rounds == 3
    assert check_bounds(recorded, result.scenario) == []


def test_check_bounds_flags_a_tampered_trace(figure2):
    result = run_scenario(figure2)
    events = [
        event.model_copy(update={"data": {**event.data, "round": 9}})
        if event.kind == TraceEventKind.FINALIZE and event.data.get("shard") == "S4"
        else event
        for event in result.trace.events
    ]
    kinds = {v.kind for v in check_bounds(Trace(events=events), result.scenario)}
    assert kinds == {"above upper bound", "discard off distance"}


def test_check_bounds_skips_transactions_that_were_never_sent(figure2):
    assert check_bounds(Trace(), figure2) == []
    assert transactions_from_trace(Trace(), figure2) == []


def test_artifacts(tmp_path, figure2):
    result = run_scenario(figure2)
    paths = write_artifacts(result, tmp_path / "out")
    assert sorted(paths) == ["audit.txt", "bounds.txt", "decisions.json", "metrics.csv", "trace.jsonl"]
    assert json.loads(paths["decisions.json"].read_text()) == result.decisions()
    assert len(paths["trace.jsonl"].read_text().splitlines()) == len(result.trace.events)
    assert "l*=3" in paths["bounds.txt"].read_text()


def test_metrics_csv_has_one_row_per_shard(figure2):
    lines = metrics_csv(run_scenario(figure2)).splitlines()
    assert lines[0].startswith("tx,shard,initial,decision,oracle,round")
    assert len(lines) == 5
    assert lines[1].startswith("0,S1,discard,discard,discard,0,")


def test_summary_is_serializable(figure2):
    summary = run_scenario(figure2).summary()
    assert json.loads(json.dumps(summary))["protocol"] == "ppac"
    assert summary["audit_findings"] == 0


SHARED_POOL = """\
name: shared-pool
stakeholders: [alice, bob]
shards:
  S1:
    accounts:
      pool-1: {balance: 50, owners: [alice, bob], threshold: 1}
transactions:
  - requests:
      - shard: S1
        ops: [{account: pool-1, delta: -20}]
        signers: [alice]
"""


def test_one_owner_may_sign_for_an_account_with_threshold_one():
    result = run_scenario(parse_scenario(SHARED_POOL))
    assert not result.violations
    assert result.decisions() == {"0": {"S1": "commit"}}
    assert result.states["S1/0"] == {"pool-1": 30}


def test_every_owner_must_sign_without_a_threshold():
    result = run_scenario(parse_scenario(SHARED_POOL.replace(", threshold: 1", "")))
    assert result.transactions[0].aborted
    assert result.decisions() == {"0": {"S1": None}}
    assert result.states["S1/0"] == {"pool-1": 50}


ONE_WAY_FORGED = """\
name: one-way-forged
stakeholders: [alice]
shards:
  S1: {accounts: {a1: {balance: 100, owners: [alice]}}}
  S2: {accounts: {a2: {balance: 100, owners: [alice]}}}
transactions:
  - forge_signature_of: [S2]
    requests:
      - {shard: S1, ops: [{account: a1, delta: -5}], deps: [S2-]}
      - {shard: S2, ops: [{account: a2, delta: 5}], deps: [S1+]}
"""


def test_forged_entry_of_another_shard_does_not_stop_this_shard():
    result = run_scenario(parse_scenario(ONE_WAY_FORGED))
    assert not result.violations
    assert result.decisions() == {"0": {"S1": "commit", "S2": "discard"}}
    assert result.states["S1/0"] == {"a1": 95}
    assert result.states["S2/0"] == {"a2": 100}


def test_unit_latency_gives_synchronous_rounds(figure2):
    scenario = figure2.model_copy(update={"network": figure2.network.model_copy(update={"delta_max": 1})})
    result = run_scenario(scenario)
    assert not result.violations
    assert result.rounds() == {"0": {"S1": 0, "S2": 1, "S3": 2, "S4": 3}}
    sent = {e.message_id: e.time for e in result.trace.of_kind(TraceEventKind.SEND)}
    assert {e.time - sent[e.message_id] for e in result.trace.of_kind(TraceEventKind.DELIVER)} == {1}
    finalized = {r.shard: r.finalized_at for shard in result.transactions[0].shards.values() for r in shard.replicas}
    assert finalized["S2"] < finalized["S3"] < finalized["S4"]
