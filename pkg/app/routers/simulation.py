from fastapi import APIRouter, HTTPException
from loguru import logger
from pydantic import BaseModel, Field

from ..utils.bench import BenchRow, Suite, bench, bench_csv
from ..utils.runner import RunResult, run_scenario
from ..utils.scenario import FIGURES, load_figure, parse_scenario
from ..utils.shard import Protocol

router = APIRouter(prefix="/api/v1/simulation")


class RunRequest(BaseModel):
    scenario: str = Field(description="Scenario YAML text")
    seed: int | None = None
    protocol: Protocol | None = None
    optimize: bool | None = None
    replication: int | None = Field(default=None, ge=1, le=7)
    scheme: str | None = None


class RunResponse(BaseModel):
    scenario: str
    protocol: str
    seed: int
    decisions: dict[str, dict[str, str | None]]
    rounds: dict[str, dict[str, int | None]]
    incomplete: bool
    violations: list[str]
    audit_findings: int
    events: int


class BenchRequest(BaseModel):
    suite: Suite = Suite.CHAIN
    repetitions: int = Field(default=1, ge=1, le=20)
    max_shards: int = Field(default=5, ge=1, le=8)
    seed: int = 0


class BenchResponse(BaseModel):
    rows: list[BenchRow]
    csv: str


def _response(result: RunResult) -> RunResponse:
    return RunResponse(**result.summary())


@router.post("/run", response_model=RunResponse, tags=["simulation"])
def run(request: RunRequest):
    """
    Simulate a scenario given as YAML text.

    Violated invariants are reported in `violations`; they do not fail the
    request.
    """
    try:
        scenario = parse_scenario(request.scenario)
        result = run_scenario(
            scenario,
            seed=request.seed,
            protocol=request.protocol,
            optimize=request.optimize,
            replication=request.replication,
            scheme=request.scheme,
        )
        logger.info(f"Scenario {scenario.name} finished with {len(result.violations)} violation(s)")
        return _response(result)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Internal server error: {str(e)}")


@router.post("/bench", response_model=BenchResponse, tags=["simulation"])
def run_bench(request: BenchRequest):
    try:
        rows = bench(request.suite, request.repetitions, request.max_shards, seed=request.seed)
        return BenchResponse(rows=rows, csv=bench_csv(rows))
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Internal server error: {str(e)}")


@router.get("/figures/{name}", response_model=RunResponse, tags=["simulation"])
def replay_figure(name: str, seed: int | None = None, replication: int | None = None):
    """Replay a bundled figure scenario (1a, 1b or 2)."""
    if name not in FIGURES:
        raise HTTPException(status_code=404, detail=f"Unknown figure {name}; choose one of {sorted(FIGURES)}")
    try:
        return _response(run_scenario(load_figure(name), seed=seed, replication=replication))
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Internal server error: {str(e)}")
