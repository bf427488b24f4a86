import os
import sys
from functools import lru_cache

from dotenv import load_dotenv
from loguru import logger
from pydantic import BaseModel, Field

load_dotenv()


class Settings(BaseModel):
    log_level: str = "INFO"
    out_dir: str = "out"
    signature_scheme: str = "keyed-hash"
    default_seed: int = 7
    session_gc_timeout: int = Field(default=5000, ge=1)


@lru_cache(maxsize=None)
def get_settings() -> Settings:
    """
    Settings read from the environment (and a `.env` file, if present).

    Raises:
        ValueError: if a numeric variable does not parse
    """
    return Settings(
        log_level=os.getenv("MSPT_LOG_LEVEL", "INFO").upper(),
        out_dir=os.getenv("MSPT_OUT_DIR", "out"),
        signature_scheme=os.getenv("MSPT_SIGNATURE_SCHEME", "keyed-hash"),
        default_seed=int(os.getenv("MSPT_DEFAULT_SEED", "7")),
        session_gc_timeout=int(os.getenv("MSPT_SESSION_GC_TIMEOUT", "5000")),
    )


def configure_logging(level: str | None = None) -> None:
    """Route loguru output to stderr at `level` (defaults to MSPT_LOG_LEVEL)."""
    logger.remove()
    logger.add(sys.stderr, level=(level or get_settings().log_level).upper())
