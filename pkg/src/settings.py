import os
import logging
from functools import lru_cache
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field

logger = logging.getLogger(__name__)

# Load environment variables
load_dotenv()


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    return float(raw)


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    return int(raw)


class SolverSettings(BaseModel):
    """
    Numeric tolerances and iteration caps used across the toolkit.
    Every field can be overridden through a POWERLIN_* environment variable.
    """
    pf_tolerance: float = Field(default=1e-8, gt=0)
    pf_max_iterations: int = Field(default=30, ge=1)
    qp_tolerance: float = Field(default=1e-9, gt=0)
    qp_dual_tolerance: float = Field(default=1e-7, gt=0)
    qp_max_iterations: int = Field(default=100, ge=1)
    baseline_tolerance: float = Field(default=1e-4, gt=0)
    loss_iterations: int = Field(default=4, ge=1)
    loss_tolerance: Optional[float] = None
    workers: int = Field(default=4, ge=1)

    @classmethod
    def from_env(cls) -> "SolverSettings":
        seed = os.getenv("POWERLIN_SEED")
        if seed:
            # Nothing in the toolkit is stochastic yet; the variable is reserved.
            logger.debug(f"POWERLIN_SEED={seed} is set but has no effect")
        return cls(
            pf_tolerance=_env_float("POWERLIN_PF_TOL", 1e-8),
            pf_max_iterations=_env_int("POWERLIN_PF_MAX_IT", 30),
            qp_tolerance=_env_float("POWERLIN_QP_TOL", 1e-9),
            qp_dual_tolerance=_env_float("POWERLIN_QP_DUAL_TOL", 1e-7),
            qp_max_iterations=_env_int("POWERLIN_QP_MAX_IT", 100),
            baseline_tolerance=_env_float("POWERLIN_BASELINE_TOL", 1e-4),
            workers=_env_int("POWERLIN_WORKERS", 4),
        )


@lru_cache(maxsize=1)
def get_settings() -> SolverSettings:
    """Process-wide settings, read from the environment on first use."""
    return SolverSettings.from_env()
