import random

import pytest

from app.utils.bench import (
    CSV_COLUMNS,
    Suite,
    bench,
    bench_csv,
    chain_graph,
    random_graph,
    random_scenario,
    ring_graph,
    scenario_from_graph,
)
from app.utils.graph import induce
from app.utils.runner import run_scenario
from app.utils.shard import Protocol


def test_chain_rounds_grow_with_length_only_for_ppac():
    rows = bench(Suite.CHAIN, max_shards=5)
    rounds = {
        protocol: [row.rounds for row in rows if row.protocol == protocol] for protocol in ("ppac", "2pc")
    }
    assert rounds["ppac"] == [0, 1, 2, 3, 4]
    assert rounds["2pc"] == [0, 1, 1, 1, 1]
    assert [row.shards_per_tx for row in rows if row.protocol == "ppac"] == [1, 2, 3, 4, 5]


def test_single_shard_sends_no_protocol_messages():
    rows = bench(Suite.RING, max_shards=1)
    assert {row.messages for row in rows} == {0}


def test_repetitions_use_consecutive_seeds():
    rows = bench(Suite.RANDOM, repetitions=3, max_shards=4, protocols=[Protocol.PPAC], seed=10)
    assert [(row.repetition, row.seed) for row in rows] == [(0, 10), (1, 11), (2, 12)]


@pytest.mark.parametrize("kwargs", [dict(repetitions=0), dict(max_shards=0)])
def test_bench_rejects_empty_runs(kwargs):
    with pytest.raises(ValueError):
        bench(Suite.CHAIN, **kwargs)


def test_csv_layout():
    text = bench_csv(bench(Suite.CHAIN, max_shards=2, protocols=[Protocol.PPAC]))
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert lines[1].startswith("1,ppac,0,")
    assert len(lines) == 3


def test_graph_shapes():
    assert chain_graph(3).sorted_edges() == [("S1", "S2"), ("S2", "S3")]
    assert len(ring_graph(4).edges) == 4
    assert ring_graph(1).edges == frozenset()


def test_scenario_from_graph_induces_the_graph():
    graph = ring_graph(4)
    scenario = scenario_from_graph(graph, "ring4", discards=["S2"])
    tx = scenario.transactions[0]
    induced = induce({r.shard: r.dependencies() for r in tx.requests}, n_hashes=4)
    assert induced.edges == graph.edges
    assert tx.belief_overrides == {"S2": "discard"}


def test_random_graph_stays_within_limits():
    rng = random.Random(5)
    for _ in range(50):
        graph = random_graph(rng, max_shards=6)
        assert 1 <= len(graph.vertices) <= 6
        assert all(u != v for u, v in graph.edges)


def test_random_scenario_is_reproducible():
    assert random_scenario(42) == random_scenario(42)
    result = run_scenario(random_scenario(42))
    assert not result.violations
