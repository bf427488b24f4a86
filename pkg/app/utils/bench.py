"""
Scenario families and the PPAC vs 2PC benchmark.

Every family builds one transaction over shards `S1..Sk`, each holding a
single vault account owned by its own stakeholder, with the dependency sets
derived from a dependency graph.
"""

import csv
import io
import random
from enum import Enum
from typing import Iterable, NamedTuple, Sequence

from loguru import logger

from .graph import DependencyGraph, to_fragment
from .runner import run_scenario
from .scenario import Scenario
from .shard import Protocol

CSV_COLUMNS = ["shards_per_tx", "protocol", "rounds", "virtual_latency", "messages", "repetition", "seed"]


class Suite(str, Enum):
    CHAIN = "chain"
    RING = "ring"
    RANDOM = "random"


class BenchRow(NamedTuple):
    """One benchmark measurement"""

    shards_per_tx: int
    protocol: str
    rounds: int | None
    virtual_latency: int | None
    messages: int
    repetition: int
    seed: int


def shard_names(k: int) -> list[str]:
    return [f"S{i}" for i in range(1, k + 1)]


def chain_graph(k: int) -> DependencyGraph:
    """S1 -> S2 -> ... -> Sk: each shard depends on the next one."""
    names = shard_names(k)
    return DependencyGraph(
        vertices=frozenset(names), edges=frozenset(zip(names, names[1:])), n_hashes=k
    )


def ring_graph(k: int) -> DependencyGraph:
    names = shard_names(k)
    edges = {(names[i], names[(i + 1) % k]) for i in range(k)} if k > 1 else set()
    return DependencyGraph(vertices=frozenset(names), edges=frozenset(edges), n_hashes=k)


def random_graph(rng: random.Random, max_shards: int = 8) -> DependencyGraph:
    """Random directed graph over 1..max_shards shards; may be disconnected."""
    names = shard_names(rng.randint(1, max_shards))
    density = rng.choice([0.1, 0.25, 0.5])
    edges = {(u, v) for u in names for v in names if u != v and rng.random() < density}
    return DependencyGraph(vertices=frozenset(names), edges=frozenset(edges), n_hashes=len(names))


def scenario_from_graph(
    graph: DependencyGraph,
    name: str,
    seed: int = 0,
    delta_max: int = 10,
    protocol: Protocol = Protocol.PPAC,
    optimize: bool = True,
    discards: Iterable[str] = (),
    replication: int = 1,
) -> Scenario:
    """A single-transaction scenario whose dependency sets induce `graph`."""
    deps = to_fragment(graph)
    shards = graph.sorted_vertices()
    return Scenario.model_validate(
        {
            "name": name,
            "network": {"seed": seed, "delta_max": delta_max},
            "protocol": {"name": protocol.value, "optimize": optimize},
            "stakeholders": [f"owner-{s}" for s in shards],
            "shards": {
                s: {
                    "replication": replication,
                    "accounts": {f"vault-{s}": {"balance": 1000, "owners": [f"owner-{s}"]}},
                }
                for s in shards
            },
            "transactions": [
                {
                    "belief_overrides": {s: "discard" for s in sorted(set(discards))},
                    "requests": [
                        {"shard": s, "ops": [{"account": f"vault-{s}", "delta": -10}], "deps": deps[s]}
                        for s in shards
                    ],
                }
            ],
        }
    )


def random_scenario(seed: int, max_shards: int = 8, protocol: Protocol = Protocol.PPAC) -> Scenario:
    """Random graph, random discards, random optimization switch and latency bound in [1, 20]."""
    rng = random.Random(seed)
    graph = random_graph(rng, max_shards)
    discards = [s for s in graph.sorted_vertices() if rng.random() < 0.3]
    return scenario_from_graph(
        graph,
        name=f"random-{seed}",
        seed=seed,
        delta_max=rng.randint(1, 20),
        protocol=protocol,
        optimize=rng.random() < 0.5,
        discards=discards,
    )


def suite_scenario(suite: Suite, k: int, seed: int, protocol: Protocol) -> Scenario:
    if suite == Suite.CHAIN:
        return scenario_from_graph(chain_graph(k), f"chain{k}", seed=seed, protocol=protocol)
    if suite == Suite.RING:
        return scenario_from_graph(ring_graph(k), f"ring{k}", seed=seed, protocol=protocol)
    return random_scenario(seed, max_shards=k, protocol=protocol)


def bench(
    suite: Suite,
    repetitions: int = 1,
    max_shards: int = 5,
    protocols: Sequence[Protocol] = (Protocol.PPAC, Protocol.TWO_PC),
    seed: int = 0,
) -> list[BenchRow]:
    """
    Run a scenario family for shard counts 1..max_shards (chain and ring) or
    `repetitions` random graphs with up to `max_shards` shards.
    """
    if repetitions < 1 or max_shards < 1:
        raise ValueError("repetitions and max_shards must be at least 1")
    rows = []
    sizes = [max_shards] if suite == Suite.RANDOM else range(1, max_shards + 1)
    for k in sizes:
        for protocol in protocols:
            for repetition in range(repetitions):
                run_seed = seed + repetition
                result = run_scenario(suite_scenario(suite, k, run_seed, protocol))
                tx = result.transactions[0]
                rows.append(
                    BenchRow(
                        shards_per_tx=len(tx.shards),
                        protocol=protocol.value,
                        rounds=tx.rounds,
                        virtual_latency=tx.virtual_latency,
                        messages=tx.messages,
                        repetition=repetition,
                        seed=run_seed,
                    )
                )
    logger.info(f"Benchmark {suite.value} produced {len(rows)} rows")
    return rows


def bench_csv(rows: Iterable[BenchRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(["" if value is None else value for value in row])
    return buffer.getvalue()
