from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field

from ..utils.runner import run_scenario
from ..utils.scenario import parse_scenario
from ..utils.shard import Protocol

router = APIRouter(prefix="/api/v1/audit")


class AuditScenarioRequest(BaseModel):
    scenario: str = Field(description="Scenario YAML text")
    seed: int | None = None
    protocol: Protocol | None = None


class RoleReport(BaseModel):
    role: str
    ok: bool
    findings: list[str]
    observed_shards: list[str]
    notes: list[str]


class AuditScenarioResponse(BaseModel):
    scenario: str
    protocol: str
    ok: bool
    reports: list[RoleReport]


@router.post("/scenario", response_model=AuditScenarioResponse, tags=["audit"])
def audit_scenario(request: AuditScenarioRequest):
    """
    Run a scenario and report, per role, every sensitive value that role
    received although it must not see it.

    The ledger may learn entry and signature counts (listed as notes). A
    shard may learn its own requests and its direct neighbours.
    """
    try:
        result = run_scenario(parse_scenario(request.scenario), seed=request.seed, protocol=request.protocol)
        reports = [
            RoleReport(
                role=report.role,
                ok=report.ok,
                findings=[str(finding) for finding in report.findings],
                observed_shards=report.observed_shards,
                notes=report.notes,
            )
            for report in result.audits
        ]
        return AuditScenarioResponse(
            scenario=result.scenario.name,
            protocol=result.scenario.protocol.name.value,
            ok=all(report.ok for report in reports),
            reports=reports,
        )
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Internal server error: {str(e)}")
