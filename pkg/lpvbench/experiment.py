"""Experiment configuration files for the ``lpvbench`` command line."""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from incremental_lpv.simulation import ReferenceGenerator
from incremental_lpv.synthesis import SynthesisOptions

DEFAULT_EXPERIMENT_NAME = "experiment.json"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PolytopeConfig(_Strict):
    vertices: List[List[float]] = Field(min_length=1, description="Polytope vertices, one list per vertex")

    @field_validator("vertices")
    @classmethod
    def _same_dimension(cls, value: List[List[float]]) -> List[List[float]]:
        dims = {len(v) for v in value}
        if len(dims) != 1 or 0 in dims:
            raise ValueError("vertices must be non-empty and share one dimension")
        return value

    @classmethod
    def interval(cls, lower: float, upper: float) -> "PolytopeConfig":
        return cls(vertices=[[lower], [upper]])


class InlinePlantConfig(_Strict):
    """Plant model ``x+ = A(rho) x + B u``, ``y = C x`` given by its affine terms."""

    A: List[List[List[float]]] = Field(description="A_0 followed by one coefficient per scheduling entry")
    B: List[List[float]]
    C: List[List[float]]


class PlantConfig(_Strict):
    kind: Literal["example", "inline"] = "example"
    inline: Optional[InlinePlantConfig] = None

    @model_validator(mode="after")
    def _inline_present(self) -> "PlantConfig":
        if self.kind == "inline" and self.inline is None:
            raise ValueError("plant kind 'inline' needs the 'inline' matrices")
        return self


class WeightConfig(_Strict):
    alpha: float = 1 / math.pi
    error_gain: float = 0.2
    error_zero: float = 0.5
    control_gain: float = 0.2
    epsilon: float = Field(default=1e-4, ge=0, lt=1, description="Radial move of unit-circle poles")


class ComparatorConfig(_Strict):
    enabled: bool = True
    polytope: PolytopeConfig = Field(default_factory=lambda: PolytopeConfig.interval(-0.22, 1.0))
    feedforward: bool = True


class ScenarioConfig(_Strict):
    name: str
    reference: ReferenceGenerator
    horizon: int = Field(default=400, ge=1)
    x0: Optional[List[float]] = Field(default=None, description="Initial plant state; zero by default")


def _default_scenarios() -> List[ScenarioConfig]:
    return [
        ScenarioConfig(name="r1", reference=ReferenceGenerator.constant(1.0), horizon=400),
        ScenarioConfig(name="r2", reference=ReferenceGenerator.constant(2.0), horizon=400),
        ScenarioConfig(name="sinusoid", reference=ReferenceGenerator.sinusoid(), horizon=800),
    ]


class ProbeConfig(_Strict):
    trials: int = Field(default=20, ge=1)
    horizon: int = Field(default=400, ge=1)
    level: float = Field(default=2.0, description="Constant reference of the probe")
    box: float = Field(default=1.0, gt=0, description="Half-width of the initial-state box")
    tolerance: float = Field(default=1e-6, gt=0)


class ExperimentConfig(_Strict):
    """Everything one pipeline run needs; unknown keys are rejected."""

    name: str = "example"
    plant: PlantConfig = Field(default_factory=PlantConfig)
    weights: WeightConfig = Field(default_factory=WeightConfig)
    polytope: PolytopeConfig = Field(default_factory=lambda: PolytopeConfig.interval(-1.0, 1.0))
    comparator: ComparatorConfig = Field(default_factory=ComparatorConfig)
    synthesis: SynthesisOptions = Field(default_factory=SynthesisOptions)
    scenarios: List[ScenarioConfig] = Field(default_factory=_default_scenarios)
    probe: ProbeConfig = Field(default_factory=ProbeConfig)
    seed: int = 0
    quadrature_order: int = Field(default=16, ge=1)
    output_dir: str = "out"
    log_dir: str = "logs"

    def dumps(self) -> str:
        return self.model_dump_json(indent=2)


def load_experiment(path: Path | str) -> ExperimentConfig:
    """Read and validate an experiment file.

    Raises
    ------
    SystemExit
        When the file is missing, is not valid JSON or fails the schema.
    """

    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as handle:
            data = json.load(handle)
    except FileNotFoundError as exc:
        raise SystemExit(f"Configuration file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise SystemExit(f"Invalid JSON in configuration file: {path}") from exc
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise SystemExit(f"Invalid configuration in {path}:\n{exc}") from exc


__all__ = [
    "ComparatorConfig",
    "ExperimentConfig",
    "InlinePlantConfig",
    "PlantConfig",
    "PolytopeConfig",
    "ProbeConfig",
    "ScenarioConfig",
    "WeightConfig",
    "load_experiment",
]
