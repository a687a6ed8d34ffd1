"""Incremental LPV output-feedback synthesis for discrete-time nonlinear plants."""
from __future__ import annotations

from .analysis import (
    ClosedLoopLpv,
    GainAnalysis,
    ProbeReport,
    certificate_margin,
    close_loop,
    hinf_norm_sweep,
    incremental_divergence_probe,
    li2_gain_bound,
    min_li2_gain,
)
from .config import CONFIG, ToolkitConfig, get_config, update_config
from .differential import (
    EmbeddingReport,
    JacobianReport,
    NonlinearPlant,
    Region,
    SchedulingMap,
    check_jacobians,
    differential_form_at,
    validate_embedding,
    validate_primal_embedding,
)
from .errors import (
    AffineClosureError,
    ConvergenceError,
    DimensionError,
    HorizonError,
    InfeasibleError,
    LpvError,
    NumericalFailureError,
    RegionError,
    SolverError,
    StructureError,
)
from .genplant import (
    GeneralizedPlant,
    WeightingScheme,
    build_generalized_plant,
    differential_generalized_plant,
    generalized_lpv_model,
)
from .lpv_model import (
    AffineLpvStateSpace,
    AffineMatrixFunction,
    SchedulingPolytope,
    evaluate,
    series_interconnect,
    vertex_images,
)
from .realization import (
    IncrementalControllerRuntime,
    SteadyStateTrajectory,
    controller_step,
    lift_steady_state,
    path_averaged_matrices,
    quadrature_matrices,
    steady_state_for_constant_reference,
    steady_state_for_reference_sequence,
)
from .sdp import LmiSystem, SdpSolution
from .simulation import (
    ReferenceGenerator,
    SimTrace,
    StandardLpvRuntime,
    converged,
    limit_cycle,
    simulate,
    standard_lpv_runtime,
)
from .synthesis import (
    DifferentialController,
    SynthesisCertificate,
    SynthesisOptions,
    assemble_synthesis_lmi,
    reconstruct_theta,
    synthesize,
)

__all__ = [
    "AffineClosureError",
    "AffineLpvStateSpace",
    "AffineMatrixFunction",
    "CONFIG",
    "ClosedLoopLpv",
    "ConvergenceError",
    "DifferentialController",
    "DimensionError",
    "EmbeddingReport",
    "GainAnalysis",
    "GeneralizedPlant",
    "HorizonError",
    "IncrementalControllerRuntime",
    "InfeasibleError",
    "JacobianReport",
    "LmiSystem",
    "LpvError",
    "NonlinearPlant",
    "NumericalFailureError",
    "ProbeReport",
    "ReferenceGenerator",
    "Region",
    "RegionError",
    "SchedulingMap",
    "SchedulingPolytope",
    "SdpSolution",
    "SimTrace",
    "SolverError",
    "StandardLpvRuntime",
    "SteadyStateTrajectory",
    "StructureError",
    "SynthesisCertificate",
    "SynthesisOptions",
    "ToolkitConfig",
    "WeightingScheme",
    "assemble_synthesis_lmi",
    "build_generalized_plant",
    "certificate_margin",
    "check_jacobians",
    "close_loop",
    "controller_step",
    "converged",
    "differential_form_at",
    "differential_generalized_plant",
    "evaluate",
    "generalized_lpv_model",
    "get_config",
    "hinf_norm_sweep",
    "incremental_divergence_probe",
    "li2_gain_bound",
    "lift_steady_state",
    "limit_cycle",
    "min_li2_gain",
    "path_averaged_matrices",
    "quadrature_matrices",
    "reconstruct_theta",
    "series_interconnect",
    "simulate",
    "standard_lpv_runtime",
    "steady_state_for_constant_reference",
    "steady_state_for_reference_sequence",
    "synthesize",
    "update_config",
    "validate_embedding",
    "validate_primal_embedding",
    "vertex_images",
]
