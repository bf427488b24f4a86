from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field

from ..utils.graph import from_fragment, round_bounds, shortest_distances, weak_components
from ..utils.model import parse_dependencies, validate_dependency_consistency

router = APIRouter(prefix="/api/v1/graph")


class BoundsRequest(BaseModel):
    deps: dict[str, list[str]] = Field(description="Dependency tokens per shard, e.g. {'S1': ['S2-']}")
    n_hashes: int | None = Field(default=None, ge=1)


class BoundsResponse(BaseModel):
    edges: list[tuple[str, str]]
    n_hashes: int
    l_star: int
    global_upper: int
    per_shard_upper: dict[str, int]
    distances: dict[str, dict[str, int]]
    components: list[list[str]]
    violations: list[str]


@router.post("/bounds", response_model=BoundsResponse, tags=["graph"])
async def bounds(request: BoundsRequest):
    """
    Induce the dependency graph of a set of dependency sets and compute its
    round bounds. Unreciprocated entries are listed in `violations`.
    """
    try:
        graph = from_fragment(request.deps, request.n_hashes)
        found = round_bounds(graph)
        violations = validate_dependency_consistency(
            {shard: parse_dependencies(tokens) for shard, tokens in request.deps.items()}
        )
        return BoundsResponse(
            edges=sorted(graph.edges),
            n_hashes=graph.n_hashes,
            l_star=found.l_star,
            global_upper=found.global_upper,
            per_shard_upper=found.per_shard_upper,
            distances={shard: shortest_distances(graph, shard) for shard in sorted(graph.vertices)},
            components=[sorted(component) for component in weak_components(graph)],
            violations=[str(v) for v in violations],
        )
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Internal server error: {str(e)}")
