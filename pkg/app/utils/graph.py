"""
Dependency graph induction and the round-bound calculators.

An edge X -> Y means X queries Y's belief during the atomic commit.
"""

from collections import deque
from typing import Iterable, Literal, Mapping, NamedTuple

from pydantic import BaseModel, ConfigDict, model_validator

from .model import Decision, SignedDependency, Sign, parse_dependencies


class UnknownShard(ValueError):
    """Raised when a shard is not a vertex of the graph"""


class DependencyGraph(BaseModel):
    model_config = ConfigDict(frozen=True)

    vertices: frozenset[str]
    edges: frozenset[tuple[str, str]]
    n_hashes: int

    @model_validator(mode="after")
    def _check(self) -> "DependencyGraph":
        for src, dst in self.edges:
            if src == dst:
                raise ValueError(f"Self-loop on {src}")
            if src not in self.vertices or dst not in self.vertices:
                raise ValueError(f"Edge {src}->{dst} references an unknown vertex")
        if self.n_hashes < 1:
            raise ValueError("n_hashes must be at least 1")
        return self

    def successors(self, shard: str) -> list[str]:
        return sorted(dst for src, dst in self.edges if src == shard)

    def predecessors(self, shard: str) -> list[str]:
        return sorted(src for src, dst in self.edges if dst == shard)

    def out_degree(self, shard: str) -> int:
        return sum(1 for src, _ in self.edges if src == shard)

    def sorted_vertices(self) -> list[str]:
        return sorted(self.vertices)

    def sorted_edges(self) -> list[tuple[str, str]]:
        return sorted(self.edges)


class RoundBounds(NamedTuple):
    """Round bounds of one dependency graph"""

    l_star: int
    global_upper: int
    per_shard_upper: dict[str, int]


def induce(
    requests: Mapping[str, Iterable[SignedDependency]],
    n_hashes: int | None = None,
    side: Literal["both", "contacts", "expectations"] = "both",
) -> DependencyGraph:
    """
    Build the dependency graph from per-shard dependency sets.

    Args:
        requests: target shard -> its request's dependency set
        n_hashes: hashes in the transaction; defaults to the number of requests
        side: "both" applies the standard rule (S or S+ gives owner -> S, S-
            gives S -> owner). "contacts" derives edges only from entries the
            owner queries, "expectations" only from entries the owner answers.
            For reciprocally consistent sets all three agree.

    Returns:
        DependencyGraph
    """
    vertices: set[str] = set()
    edges: set[tuple[str, str]] = set()
    for owner, deps in requests.items():
        vertices.add(owner)
        for dep in deps:
            vertices.add(dep.shard)
            if side in ("both", "contacts") and dep.contacts:
                edges.add((owner, dep.shard))
            if side == "both" and dep.sign == Sign.MINUS:
                edges.add((dep.shard, owner))
            if side == "expectations" and dep.expects_call:
                edges.add((dep.shard, owner))
    return DependencyGraph(
        vertices=frozenset(vertices),
        edges=frozenset(edges),
        n_hashes=n_hashes if n_hashes is not None else max(1, len(requests)),
    )


def _require(g: DependencyGraph, shard: str) -> None:
    if shard not in g.vertices:
        raise UnknownShard(f"Shard {shard} is not part of the dependency graph")


def shortest_distances(g: DependencyGraph, source: str) -> dict[str, int]:
    """BFS hop counts from `source` to every vertex it can reach."""
    _require(g, source)
    adjacency = {v: g.successors(v) for v in g.vertices}
    distances = {source: 0}
    queue = deque([source])
    while queue:
        node = queue.popleft()
        for adjacent in adjacency[node]:
            if adjacent not in distances:
                distances[adjacent] = distances[node] + 1
                queue.append(adjacent)
    return distances


def forward_closure(g: DependencyGraph, shard: str) -> set[str]:
    """All shards `shard` transitively depends on, itself included."""
    return set(shortest_distances(g, shard))


def decision_oracle(
    g: DependencyGraph, initial_beliefs: Mapping[str, Decision | bool]
) -> dict[str, Decision]:
    """
    Ground-truth decisions: a shard commits iff every shard in its forward
    closure initially believes commit.
    """
    commits = {
        shard: (value == Decision.COMMIT if isinstance(value, Decision) else bool(value))
        for shard, value in initial_beliefs.items()
    }
    missing = g.vertices - commits.keys()
    if missing:
        raise UnknownShard(f"No initial belief for {sorted(missing)}")
    return {
        shard: Decision.COMMIT
        if all(commits[s] for s in forward_closure(g, shard))
        else Decision.DISCARD
        for shard in g.sorted_vertices()
    }


def discard_distances(
    g: DependencyGraph, initial_beliefs: Mapping[str, Decision]
) -> dict[str, int | None]:
    """Hop count from each shard to the nearest reachable initially-discarding shard."""
    result: dict[str, int | None] = {}
    for shard in g.sorted_vertices():
        distances = shortest_distances(g, shard)
        hits = [d for s, d in distances.items() if initial_beliefs[s] == Decision.DISCARD]
        result[shard] = min(hits) if hits else None
    return result


def round_bounds(g: DependencyGraph) -> RoundBounds:
    """
    l_star is the longest shortest path over ordered pairs joined by a
    directed path (0 when there are none); a shard finalizes within
    n_hashes - out_degree rounds, and every shard within n_hashes minus the
    minimum out-degree.
    """
    if not g.vertices:
        raise ValueError("Round bounds need a nonempty graph")
    l_star = 0
    for shard in g.vertices:
        l_star = max(l_star, max(shortest_distances(g, shard).values()))
    per_shard = {shard: g.n_hashes - g.out_degree(shard) for shard in g.sorted_vertices()}
    return RoundBounds(
        l_star=l_star,
        global_upper=g.n_hashes - min(g.out_degree(s) for s in g.vertices),
        per_shard_upper=per_shard,
    )


def weak_components(g: DependencyGraph) -> list[set[str]]:
    """Connected components ignoring edge direction, in vertex order."""
    neighbours: dict[str, set[str]] = {v: set() for v in g.vertices}
    for src, dst in g.edges:
        neighbours[src].add(dst)
        neighbours[dst].add(src)
    seen: set[str] = set()
    components = []
    for start in g.sorted_vertices():
        if start in seen:
            continue
        component = {start}
        queue = deque([start])
        while queue:
            node = queue.popleft()
            for adjacent in sorted(neighbours[node]):
                if adjacent not in component:
                    component.add(adjacent)
                    queue.append(adjacent)
        seen |= component
        components.append(component)
    return components


def to_dependency_sets(g: DependencyGraph) -> dict[str, list[SignedDependency]]:
    """
    Reciprocally consistent dependency sets inducing exactly `g`: mutual edges
    become unsigned entries on both sides, one-way edges X -> Y become Y+ at X
    and X- at Y.
    """
    sets: dict[str, list[SignedDependency]] = {v: [] for v in g.sorted_vertices()}
    for src, dst in g.sorted_edges():
        if (dst, src) in g.edges:
            sets[src].append(SignedDependency(shard=dst, sign=Sign.UNSIGNED))
        else:
            sets[src].append(SignedDependency(shard=dst, sign=Sign.PLUS))
            sets[dst].append(SignedDependency(shard=src, sign=Sign.MINUS))
    return {shard: sorted(deps, key=lambda d: d.shard) for shard, deps in sets.items()}


def to_fragment(g: DependencyGraph) -> dict[str, list[str]]:
    """Export as the `deps` fragment of a scenario file."""
    return {shard: [str(dep) for dep in deps] for shard, deps in to_dependency_sets(g).items()}


def from_fragment(fragment: Mapping[str, Iterable[str]], n_hashes: int | None = None) -> DependencyGraph:
    return induce({shard: parse_dependencies(tokens) for shard, tokens in fragment.items()}, n_hashes)
