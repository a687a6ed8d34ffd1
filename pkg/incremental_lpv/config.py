"""Configuration for the incremental LPV toolkit."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field


class ToolkitConfig(BaseModel):
    """Numerical defaults shared by all toolkit modules."""

    model_config = ConfigDict(extra="forbid")

    delta_feas: float = Field(
        default=1e-7, gt=0, description="Margin implementing strict LMIs as M >= delta*I"
    )
    solver: str = Field(default="CLARABEL", description="Preferred cvxpy conic solver")
    cache_dir: Optional[Path] = Field(
        default=None, description="Directory of the SDP solution cache (disabled when unset)"
    )
    validation_samples: int = Field(
        default=10_000, gt=0, description="Halton samples used to validate embeddings"
    )
    embedding_tol: float = Field(default=1e-8, gt=0, description="Embedding PASS threshold")
    jacobian_step: float = Field(default=1e-6, gt=0, description="Central-difference step")
    jacobian_rtol: float = Field(
        default=1e-5, gt=0, description="Relative tolerance for Jacobian checks"
    )
    quadrature_order: int = Field(
        default=16, gt=0, description="Gauss-Legendre order for path integrals"
    )
    condition_limit: float = Field(
        default=1e12, gt=1, description="Condition number above which R is treated as singular"
    )


ROOT_CONFIG = Path(__file__).resolve().parents[1] / "lpv.config.json"


def _load_config_from_file() -> ToolkitConfig:
    """Load configuration from the repository config file if present."""
    if ROOT_CONFIG.exists():
        data = json.loads(ROOT_CONFIG.read_text(encoding="utf-8"))
        cfg = ToolkitConfig(**data.get("incremental_lpv", {}))
    else:
        cfg = ToolkitConfig()
    if cfg.cache_dir is not None:
        cfg.cache_dir = Path(cfg.cache_dir).expanduser()
    return cfg


CONFIG = _load_config_from_file()


def update_config(**kwargs) -> ToolkitConfig:
    """Update global configuration values.

    Returns the updated configuration.
    """

    global CONFIG
    CONFIG = CONFIG.model_copy(update=kwargs)
    if CONFIG.cache_dir is not None:
        CONFIG.cache_dir = Path(CONFIG.cache_dir).expanduser()
    return CONFIG


def get_config() -> ToolkitConfig:
    """Return the active configuration (reads the module global at call time)."""
    return CONFIG
