from fastapi import APIRouter, Depends

from ..dependencies import Settings, get_settings
from ..utils.crypto import get_scheme
from ..utils.scenario import FIGURES, bundled_path

router = APIRouter(prefix="/api/v1/health")


@router.get("/", tags=["health"])
async def health():
    """
    Basic health check endpoint.

    Returns:
        dict: Status response indicating the service is healthy
    """
    return {"status": "ok"}


@router.get("/live", tags=["health"])
async def live():
    """Liveness probe: the process answers."""
    return {"status": "ok"}


@router.get("/ready", tags=["health"])
async def ready(settings: Settings = Depends(get_settings)):
    """
    Readiness probe: the configured signature scheme loads and the bundled
    figure scenarios are present.

    Returns:
        dict: "ok", or "degraded" with the missing pieces
    """
    problems = []
    try:
        get_scheme(settings.signature_scheme)
    except ValueError as e:
        problems.append(str(e))
    problems += [f"missing scenario {name}" for name in FIGURES.values() if not bundled_path(name).exists()]
    return {"status": "degraded" if problems else "ok", "problems": problems}
