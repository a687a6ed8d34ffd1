"""Gain analysis of affine LPV systems and closed loops.

The certificate is a constant matrix ``P`` satisfying, at every vertex::

    [[P,   A P, B,  0    ],
     [*,   P,   0,  P C^T],
     [*,   *,   gI, D^T  ],
     [*,   *,   *,  gI   ]] > 0

Infeasibility is inconclusive: the test is sufficient only.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field
from scipy.optimize import minimize_scalar

from .errors import InfeasibleError, StructureError
from .genplant import GeneralizedPlant
from .lpv_model import AffineLpvStateSpace, affine_block, affine_product, common_polytope
from .sdp import INFEASIBLE, LmiSystem, bmat
from .simulation import ControllerRuntime, ReferenceGenerator, simulate
from .synthesis import DifferentialController

logger = logging.getLogger(__name__)

CONTRACTION_TOL = 1e-6
TRAILING_WINDOW = 20


@dataclass(frozen=True, eq=False)
class ClosedLoopLpv:
    """Lower interconnection of a plant model and a controller, state ``col(x, x_c)``."""

    system: AffineLpvStateSpace
    n_plant: int
    n_controller: int
    provenance: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_x(self) -> int:
        return self.system.n_x


def close_loop(plant: AffineLpvStateSpace, ctrl: DifferentialController) -> ClosedLoopLpv:
    """Close ``u = y_c``, ``u_c = y`` around a plant with channels ``(w, u)`` and ``(z, y)``."""
    ctrl_lpv = ctrl.as_lpv()
    polytope = common_polytope(plant, ctrl_lpv)
    n_rho = polytope.dimension
    lift = lambda fn: fn.with_n_rho(n_rho) if fn.is_constant else fn
    try:
        a = lift(plant.A)
        b_w, b_u = lift(plant.block("B", input="w")), lift(plant.block("B", input="u"))
        c_z, c_y = lift(plant.block("C", output="z")), lift(plant.block("C", output="y"))
        d_zw, d_zu = lift(plant.block("D", "z", "w")), lift(plant.block("D", "z", "u"))
        d_yw, d_yu = lift(plant.block("D", "y", "w")), lift(plant.block("D", "y", "u"))
    except KeyError as exc:
        raise StructureError(f"plant model needs channels (w, u) and (z, y): {exc}") from exc
    if ctrl.n_in != c_y.shape[0] or ctrl.n_out != b_u.shape[1]:
        raise StructureError(
            f"controller maps {ctrl.n_in} -> {ctrl.n_out} signals, plant needs "
            f"{c_y.shape[0]} -> {b_u.shape[1]}"
        )
    a_c, b_c, c_c, d_c = (lift(fn) for fn in (ctrl.A, ctrl.B, ctrl.C, ctrl.D))
    plant_direct = not d_yu.is_constant or bool(np.any(d_yu.constant))
    ctrl_direct = not d_c.is_constant or bool(np.any(d_c.constant))
    if plant_direct and ctrl_direct:
        raise StructureError("algebraic loop: plant u -> y feedthrough against controller feedthrough")

    # measured output after substitution: y = C_y x + y_xc x_c + D_yw w
    y_xc = affine_product(d_yu, c_c) if plant_direct else np.zeros((c_y.shape[0], ctrl.n_xc))
    u_x = affine_product(d_c, c_y)
    u_w = affine_product(d_c, d_yw)

    A = affine_block(
        [
            [a + affine_product(b_u, u_x), affine_product(b_u, c_c)],
            [affine_product(b_c, c_y), a_c + affine_product(b_c, y_xc)],
        ],
        n_rho,
    )
    B = affine_block([[b_w + affine_product(b_u, u_w)], [affine_product(b_c, d_yw)]], n_rho)
    C = affine_block([[c_z + affine_product(d_zu, u_x), affine_product(d_zu, c_c)]], n_rho)
    D = d_zw + affine_product(d_zu, u_w)
    system = AffineLpvStateSpace(
        A,
        B,
        C,
        D,
        polytope,
        inputs=(("w", b_w.shape[1]),),
        outputs=(("z", c_z.shape[0]),),
    )
    logger.debug("Closed loop with %d plant and %d controller states", plant.n_x, ctrl.n_xc)
    return ClosedLoopLpv(
        system,
        plant.n_x,
        ctrl.n_xc,
        {"controller": ctrl.kind, "controller_gamma": ctrl.gamma},
    )


def _system_of(sys) -> AffineLpvStateSpace:
    return sys.system if isinstance(sys, ClosedLoopLpv) else sys


def _gain_block(sys: AffineLpvStateSpace, rho, P, gamma):
    a, b, c, d = sys.at(rho)
    n, n_w, n_z = sys.n_x, sys.n_in, sys.n_out
    if n == 0:
        return bmat([[gamma * np.eye(n_w), d.T], [d, gamma * np.eye(n_z)]])
    z = np.zeros
    return bmat(
        [
            [P, a @ P, b, z((n, n_z))],
            [P @ a.T, P, z((n, n_w)), P @ c.T],
            [b.T, z((n_w, n)), gamma * np.eye(n_w), d.T],
            [z((n_z, n)), c @ P, d, gamma * np.eye(n_z)],
        ]
    )


@dataclass(eq=False)
class GainAnalysis:
    """Certificate of a gain bound, or an inconclusive refusal."""

    gamma: float
    certified: bool
    P: Optional[np.ndarray] = None
    min_eigenvalues: Dict[str, float] = field(default_factory=dict)
    status: str = ""
    solver: str = ""

    @property
    def verdict(self) -> str:
        return "certified" if self.certified else "inconclusive"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "gamma": self.gamma,
            "verdict": self.verdict,
            "status": self.status,
            "solver": self.solver,
            "min_eigenvalue": min(self.min_eigenvalues.values(), default=None),
        }


def _storage(sol, sys: AffineLpvStateSpace) -> np.ndarray:
    # memoryless systems carry no storage variable
    return sol["P"] if sys.n_x else np.zeros((0, 0))


def _gain_system(sys: AffineLpvStateSpace, gamma: Optional[float], delta_feas: Optional[float]) -> LmiSystem:
    system = LmiSystem("gain-analysis", delta_feas)
    if gamma is None:
        system.scalar("gamma")
    if sys.n_x:
        system.symmetric("P", sys.n_x)
    system.add_vertex_constraints(
        "gain",
        lambda rho, v: _gain_block(sys, rho, v.get("P"), v["gamma"] if gamma is None else gamma),
        sys.polytope,
    )
    if gamma is None:
        system.minimize(lambda v: v["gamma"])
    return system


def li2_gain_bound(
    sys,
    gamma: float,
    delta_feas: Optional[float] = None,
    solver: Optional[str] = None,
) -> GainAnalysis:
    """Try to certify the gain bound ``gamma`` with a constant storage matrix.

    A failed attempt returns an inconclusive :class:`GainAnalysis`; numerical
    solver failures raise :class:`~incremental_lpv.errors.NumericalFailureError`.
    """

    sys = _system_of(sys)
    sol = _gain_system(sys, gamma, delta_feas).solve(solver=solver)
    if sol.status == INFEASIBLE:
        logger.info("Gain bound %.6g could not be certified", gamma)
        return GainAnalysis(gamma, False, status=sol.status, solver=sol.solver)
    sol.raise_for_status()
    return GainAnalysis(gamma, True, _storage(sol, sys), dict(sol.min_eigenvalues), sol.status, sol.solver)


def min_li2_gain(sys, delta_feas: Optional[float] = None, solver: Optional[str] = None) -> GainAnalysis:
    """Smallest certifiable gain bound.

    Raises
    ------
    InfeasibleError
        When no constant storage certifies any bound.
    """

    sys = _system_of(sys)
    sol = _gain_system(sys, None, delta_feas).solve(solver=solver).raise_for_status()
    gamma = float(sol["gamma"])
    logger.info("Minimal certified gain %.6g (%d states)", gamma, sys.n_x)
    return GainAnalysis(gamma, True, _storage(sol, sys), dict(sol.min_eigenvalues), sol.status, sol.solver)


def certificate_margin(sys, P, gamma: float, rho_list: Sequence) -> float:
    """Minimum eigenvalue of the gain LMI over the given scheduling points."""
    sys = _system_of(sys)
    P = np.asarray(P, dtype=float)
    worst = np.inf
    for rho in rho_list:
        block = _gain_block(sys, rho, P, gamma)
        worst = min(worst, float(np.linalg.eigvalsh((block + block.T) / 2)[0]))
    return float(worst)


def hinf_norm_sweep(A, B, C, D, points: int = 4096) -> float:
    """Discrete-time H-infinity norm by a frequency sweep with local refinement.

    Returns ``inf`` for systems with a pole on or outside the unit circle.
    """

    A, B, C, D = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A, B, C, D))
    n = A.shape[0]
    if n and np.max(np.abs(np.linalg.eigvals(A))) >= 1.0:
        return float("inf")
    eye = np.eye(n)

    def gain(omega: float) -> float:
        if n == 0:
            return float(np.linalg.norm(D, ord=2))
        g = C @ np.linalg.solve(np.exp(1j * omega) * eye - A, B) + D
        return float(np.linalg.norm(g, ord=2))

    grid = np.linspace(0.0, np.pi, points)
    values = np.array([gain(w) for w in grid])
    best = int(np.argmax(values))
    lo, hi = grid[max(best - 1, 0)], grid[min(best + 1, points - 1)]
    refined = minimize_scalar(lambda w: -gain(w), bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    return float(max(values[best], -refined.fun))


class ProbeReport(BaseModel):
    """Outcome of the incremental-stability falsification probe."""

    trials: int
    horizon: int
    seed: int
    tolerance: float
    final_distances: List[float] = Field(default_factory=list)
    max_trailing_distance: float = 0.0
    contracted: List[bool] = Field(default_factory=list)
    diverged: int = 0
    passed: bool = False


def incremental_divergence_probe(
    plant: GeneralizedPlant,
    runtime_factory: Callable[[], ControllerRuntime],
    trials: int = 20,
    reference: Optional[ReferenceGenerator] = None,
    horizon: int = 400,
    seed: int = 0,
    box: float = 1.0,
    tol: float = CONTRACTION_TOL,
) -> ProbeReport:
    """Simulate pairs of closed loops from different plant states under the same reference.

    Initial plant states are drawn uniformly from ``[-box, box]`` around the
    first reference-consistent state (zero), weights start at rest. Distances
    are measured on the plant states.
    """

    reference = reference or ReferenceGenerator.constant(2.0)
    rng = np.random.default_rng(seed)
    finals: List[float] = []
    contracted: List[bool] = []
    trailing_max = 0.0
    diverged = 0
    for trial in range(trials):
        runs = []
        for _ in range(2):
            x0 = np.zeros(plant.n_x)
            x0[: plant.n_xp] = rng.uniform(-box, box, plant.n_xp)
            runs.append(simulate(plant, runtime_factory(), reference, x0, horizon))
        if any(run.diverged for run in runs):
            diverged += 1
            finals.append(float("inf"))
            contracted.append(False)
            continue
        dist = np.linalg.norm(runs[0].x[:, : plant.n_xp] - runs[1].x[:, : plant.n_xp], axis=1)
        trailing = float(np.max(dist[-TRAILING_WINDOW:]))
        trailing_max = max(trailing_max, trailing)
        finals.append(float(dist[-1]))
        contracted.append(bool(dist[-1] <= tol))
        logger.debug("Probe trial %d: final distance %.3e", trial, dist[-1])
    report = ProbeReport(
        trials=trials,
        horizon=horizon,
        seed=seed,
        tolerance=tol,
        final_distances=finals,
        max_trailing_distance=trailing_max,
        contracted=contracted,
        diverged=diverged,
        passed=bool(contracted) and all(contracted),
    )
    logger.info(
        "Divergence probe: %d/%d pairs contracted (max trailing distance %.3e)",
        sum(contracted),
        trials,
        trailing_max,
    )
    return report


__all__ = [
    "ClosedLoopLpv",
    "GainAnalysis",
    "ProbeReport",
    "certificate_margin",
    "close_loop",
    "hinf_norm_sweep",
    "incremental_divergence_probe",
    "li2_gain_bound",
    "min_li2_gain",
]
