from fastapi import FastAPI
from loguru import logger

from .dependencies import configure_logging
from .routers import audit, graph, health, simulation

configure_logging()
logger.info("Starting the application")

app = FastAPI(title="mspt-sim", description="Private multi-shard transaction simulator")

app.include_router(health.router)
app.include_router(simulation.router)
app.include_router(audit.router)
app.include_router(graph.router)
