import random

import pytest
from hypothesis import given, settings, strategies as st

from app.utils.bench import chain_graph, random_graph, ring_graph
from app.utils.graph import (
    DependencyGraph,
    UnknownShard,
    decision_oracle,
    discard_distances,
    forward_closure,
    from_fragment,
    induce,
    round_bounds,
    shortest_distances,
    to_dependency_sets,
    to_fragment,
    weak_components,
)
from app.utils.model import Decision, parse_dependencies, validate_dependency_consistency

from .conftest import FIGURE2_DEPS

COMMIT, DISCARD = Decision.COMMIT, Decision.DISCARD

FIGURE1A = {
    "S0": parse_dependencies(["S1", "S3"]),
    "S1": parse_dependencies(["S0", "S2"]),
    "S2": parse_dependencies(["S1", "S3"]),
    "S3": parse_dependencies(["S0", "S2"]),
}
FIGURE1B = {
    "S1": parse_dependencies(["S2+"]),
    "S2": parse_dependencies(["S1-", "S3+"]),
    "S3": parse_dependencies(["S2-"]),
}


def test_figure1a_is_a_bidirectional_cycle():
    g = induce(FIGURE1A)
    assert len(g.edges) == 8
    assert all((b, a) in g.edges for a, b in g.edges)


def test_figure1b_chain():
    assert induce(FIGURE1B).sorted_edges() == [("S1", "S2"), ("S2", "S3")]


def test_figure1b_printed_set_adds_an_edge():
    printed = dict(FIGURE1B, S3=parse_dependencies(["S1-"]))
    assert ("S1", "S3") in induce(printed).edges


def test_figure2_edges():
    assert induce(FIGURE2_DEPS).sorted_edges() == [("S2", "S1"), ("S2", "S4"), ("S3", "S2"), ("S4", "S3")]


def test_sides_agree_on_consistent_sets():
    both = induce(FIGURE2_DEPS)
    assert induce(FIGURE2_DEPS, side="contacts") == both
    assert induce(FIGURE2_DEPS, side="expectations") == both


def test_closures():
    assert forward_closure(induce(FIGURE2_DEPS), "S4") == {"S1", "S2", "S3", "S4"}
    assert forward_closure(induce(FIGURE1B), "S1") == {"S1", "S2", "S3"}
    assert forward_closure(induce(FIGURE1B), "S3") == {"S3"}


def test_shortest_distances_unknown_shard():
    with pytest.raises(UnknownShard):
        shortest_distances(induce(FIGURE1B), "S9")


def test_figure2_oracle_discards_everywhere():
    g = induce(FIGURE2_DEPS)
    oracle = decision_oracle(g, {"S1": DISCARD, "S2": COMMIT, "S3": COMMIT, "S4": COMMIT})
    assert set(oracle.values()) == {DISCARD}
    distances = discard_distances(g, {"S1": DISCARD, "S2": COMMIT, "S3": COMMIT, "S4": COMMIT})
    assert distances == {"S1": 0, "S2": 1, "S3": 2, "S4": 3}


def test_chain_oracle_follows_direction():
    g = induce(FIGURE1B)
    sink_discards = decision_oracle(g, {"S1": COMMIT, "S2": COMMIT, "S3": DISCARD})
    assert sink_discards == {"S1": DISCARD, "S2": DISCARD, "S3": DISCARD}
    source_discards = decision_oracle(g, {"S1": DISCARD, "S2": COMMIT, "S3": COMMIT})
    assert source_discards == {"S1": DISCARD, "S2": COMMIT, "S3": COMMIT}


def test_oracle_needs_every_belief():
    with pytest.raises(UnknownShard):
        decision_oracle(induce(FIGURE1B), {"S1": COMMIT})


def test_figure2_bounds():
    bounds = round_bounds(induce(FIGURE2_DEPS, n_hashes=4))
    assert bounds.l_star == 3
    assert bounds.global_upper == 4
    assert bounds.per_shard_upper == {"S1": 4, "S2": 2, "S3": 3, "S4": 3}


def test_chain_bounds():
    bounds = round_bounds(induce(FIGURE1B, n_hashes=3))
    assert (bounds.l_star, bounds.global_upper) == (2, 3)


def test_isolated_shard_bound():
    bounds = round_bounds(induce({"S1": ()}))
    assert bounds == (0, 1, {"S1": 1})


def test_self_loop_rejected():
    with pytest.raises(ValueError):
        DependencyGraph(vertices=frozenset({"S1"}), edges=frozenset({("S1", "S1")}), n_hashes=1)


def test_weak_components_split_disconnected_graphs():
    g = from_fragment({"S1": ["S2+"], "S2": ["S1-"], "S3": ["S4"], "S4": ["S3"], "S5": []})
    assert weak_components(g) == [{"S1", "S2"}, {"S3", "S4"}, {"S5"}]


def test_fragment_round_trip_of_figure2():
    g = induce(FIGURE2_DEPS)
    assert from_fragment(to_fragment(g), g.n_hashes) == g


def test_chain_and_ring_shapes():
    assert chain_graph(3).sorted_edges() == [("S1", "S2"), ("S2", "S3")]
    assert ring_graph(3).sorted_edges() == [("S1", "S2"), ("S2", "S3"), ("S3", "S1")]
    assert ring_graph(1).edges == frozenset()


@settings(max_examples=60)
@given(st.integers(min_value=0, max_value=10_000))
def test_exported_sets_are_reciprocal_and_induce_the_graph(seed):
    g = random_graph(random.Random(seed), max_shards=8)
    sets = to_dependency_sets(g)
    assert validate_dependency_consistency(sets) == []
    assert induce(sets, n_hashes=g.n_hashes) == g


@settings(max_examples=60)
@given(st.integers(min_value=0, max_value=10_000), st.data())
def test_oracle_is_monotone(seed, data):
    g = random_graph(random.Random(seed), max_shards=6)
    shards = g.sorted_vertices()
    beliefs = {s: data.draw(st.sampled_from([COMMIT, DISCARD])) for s in shards}
    flipped = data.draw(st.sampled_from(shards))
    worse = dict(beliefs, **{flipped: DISCARD})
    before, after = decision_oracle(g, beliefs), decision_oracle(g, worse)
    assert all(after[s] == DISCARD for s in shards if before[s] == DISCARD)


@settings(max_examples=60)
@given(st.integers(min_value=0, max_value=10_000))
def test_discard_distance_fits_every_shard_budget(seed):
    rng = random.Random(seed)
    g = random_graph(rng, max_shards=8)
    beliefs = {s: DISCARD if rng.random() < 0.3 else COMMIT for s in g.sorted_vertices()}
    upper = round_bounds(g).per_shard_upper
    for shard, distance in discard_distances(g, beliefs).items():
        assert distance is None or distance <= upper[shard]
