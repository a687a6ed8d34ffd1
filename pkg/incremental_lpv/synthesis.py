"""Output-feedback LPV controller synthesis with a scheduling-independent storage.

The synthesis LMI is solved at every polytope vertex for the slack matrices
``J, N, S``, the storage blocks ``P_x, P_y, P_z`` and the affine controller
variables ``U, V, W, X``; the controller is then recovered coefficient by
coefficient with constant block-triangular inverses, so it stays affine in
the scheduling.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field

from lpv_utils import format_float

from .config import get_config
from .errors import DimensionError, NumericalFailureError, StructureError
from .lpv_model import AffineLpvStateSpace, AffineMatrixFunction, SchedulingPolytope, as_point
from .sdp import LmiSystem, SdpSolution, bmat, trace

logger = logging.getLogger(__name__)


class SynthesisOptions(BaseModel):
    """Knobs of :func:`synthesize`; unset numeric values fall back to the toolkit config."""

    model_config = ConfigDict(extra="forbid")

    delta_feas: Optional[float] = Field(default=None, gt=0, description="Strictness margin of the LMIs")
    factorization: Literal["identity", "lu"] = Field(
        default="identity", description="How S - NJ is split into R L"
    )
    condition_limit: Optional[float] = Field(default=None, gt=1)
    gamma_relaxation: float = Field(
        default=1e-3, gt=0, description="Relative slack on gamma for the regularized re-solve"
    )
    solver: Optional[str] = None


@dataclass(frozen=True)
class _PlantBlocks:
    A: AffineMatrixFunction
    B_w: AffineMatrixFunction
    B_u: np.ndarray
    C_z: AffineMatrixFunction
    C_y: np.ndarray
    D_zw: AffineMatrixFunction
    D_zu: np.ndarray
    D_yw: np.ndarray
    polytope: SchedulingPolytope

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_w(self) -> int:
        return self.B_w.shape[1]

    @property
    def n_u(self) -> int:
        return self.B_u.shape[1]

    @property
    def n_z(self) -> int:
        return self.C_z.shape[0]

    @property
    def n_y(self) -> int:
        return self.C_y.shape[0]


def plant_blocks(plant_lpv: AffineLpvStateSpace) -> _PlantBlocks:
    """Split a generalized plant model into the blocks the synthesis LMI uses."""
    try:
        blocks = {
            "B_u": plant_lpv.block("B", input="u"),
            "C_y": plant_lpv.block("C", output="y"),
            "D_zu": plant_lpv.block("D", "z", "u"),
            "D_yw": plant_lpv.block("D", "y", "w"),
        }
        d_yu = plant_lpv.block("D", "y", "u")
        varying = {
            "B_w": plant_lpv.block("B", input="w"),
            "C_z": plant_lpv.block("C", output="z"),
            "D_zw": plant_lpv.block("D", "z", "w"),
        }
    except KeyError as exc:
        raise StructureError(f"plant model needs channels (w, u) and (z, y): {exc}") from exc
    for name, fn in blocks.items():
        if not fn.is_constant:
            raise StructureError(f"{name} depends on the scheduling; it must be constant")
    if not d_yu.is_constant or np.any(d_yu.constant):
        raise StructureError("the measured output has direct feedthrough from u")
    return _PlantBlocks(
        A=plant_lpv.A,
        B_w=varying["B_w"],
        B_u=np.array(blocks["B_u"].constant),
        C_z=varying["C_z"],
        C_y=np.array(blocks["C_y"].constant),
        D_zw=varying["D_zw"],
        D_zu=np.array(blocks["D_zu"].constant),
        D_yw=np.array(blocks["D_yw"].constant),
        polytope=plant_lpv.polytope,
    )


def _affine_variable(values, base: str, rho: np.ndarray):
    out = values[f"{base}0"]
    for i, r in enumerate(rho, start=1):
        out = out + float(r) * values[f"{base}{i}"]
    return out


def assemble_synthesis_lmi(
    plant_lpv: AffineLpvStateSpace,
    options: Optional[SynthesisOptions] = None,
    gamma: Optional[float] = None,
) -> LmiSystem:
    """Build the vertex LMI system of the synthesis problem.

    With ``gamma`` given, the gain is fixed and the objective becomes a trace
    regularization of the storage blocks.
    """

    options = options or SynthesisOptions()
    pb = plant_blocks(plant_lpv)
    n, n_w, n_u, n_z, n_y = pb.n_x, pb.n_w, pb.n_u, pb.n_z, pb.n_y
    n_rho = pb.polytope.dimension

    system = LmiSystem("synthesis" if gamma is None else "synthesis-regularized", options.delta_feas)
    if gamma is None:
        system.scalar("gamma")
    system.symmetric("Px", n)
    system.symmetric("Pz", n)
    for name in ("Py", "J", "N", "S"):
        system.matrix(name, n, n)
    for i in range(n_rho + 1):
        system.matrix(f"U{i}", n, n)
        system.matrix(f"V{i}", n, n_y)
        system.matrix(f"W{i}", n_u, n)
        system.matrix(f"X{i}", n_u, n_y)

    eye_n = np.eye(n)
    B_u, C_y, D_zu, D_yw = pb.B_u, pb.C_y, pb.D_zu, pb.D_yw

    def template(rho, v):
        a = pb.A.evaluate(rho)
        b_w = pb.B_w.evaluate(rho)
        c_z = pb.C_z.evaluate(rho)
        d_zw = pb.D_zw.evaluate(rho)
        U, V, W, X = (_affine_variable(v, base, rho) for base in "UVWX")
        g = v["gamma"] if gamma is None else gamma
        Px, Py, Pz, J, N, S = (v[k] for k in ("Px", "Py", "Pz", "J", "N", "S"))
        P = bmat([[Px, Py], [Py.T, Pz]])
        g12 = eye_n + S.T - Py
        G = bmat([[J + J.T - Px, g12], [g12.T, N + N.T - Pz]])
        cal_a = bmat([[a @ J + B_u @ W, a + B_u @ X @ C_y], [U, N @ a + V @ C_y]])
        cal_b = bmat([[b_w + B_u @ X @ D_yw], [N @ b_w + V @ D_yw]])
        cal_c = bmat([[c_z @ J + D_zu @ W, c_z + D_zu @ X @ C_y]])
        cal_d = d_zw + D_zu @ X @ D_yw
        z = np.zeros
        return bmat(
            [
                [P, cal_a, cal_b, z((2 * n, n_z))],
                [cal_a.T, G, z((2 * n, n_w)), cal_c.T],
                [cal_b.T, z((n_w, 2 * n)), g * np.eye(n_w), cal_d.T],
                [z((n_z, 2 * n)), cal_c, cal_d, g * np.eye(n_z)],
            ]
        )

    system.add_constraint("storage", lambda v: bmat([[v["Px"], v["Py"]], [v["Py"].T, v["Pz"]]]))
    system.add_vertex_constraints("synthesis", template, pb.polytope)
    if gamma is None:
        system.minimize(lambda v: v["gamma"])
    else:
        system.minimize(lambda v: trace(v["Px"]) + trace(v["Pz"]))
    logger.info(
        "Assembled synthesis LMI: n_x=%d, n_w=%d, n_u=%d, n_z=%d, n_y=%d, %d vertex constraints",
        n,
        n_w,
        n_u,
        n_z,
        n_y,
        len(system.constraints),
    )
    return system


# ---------- certificate and controller ----------
def _affine_from_solution(sol: SdpSolution, base: str, n_rho: int) -> AffineMatrixFunction:
    return AffineMatrixFunction(sol[f"{base}0"], tuple(sol[f"{base}{i}"] for i in range(1, n_rho + 1)))


def _matrix_text(name: str, mat: np.ndarray) -> List[str]:
    mat = np.atleast_2d(mat)
    lines = [f"{name} ({mat.shape[0]}x{mat.shape[1]}):"]
    lines.extend("  " + " ".join(format_float(v) for v in row) for row in mat)
    return lines


@dataclass(eq=False)
class SynthesisCertificate:
    gamma: float
    Px: np.ndarray
    Py: np.ndarray
    Pz: np.ndarray
    J: np.ndarray
    N: np.ndarray
    S: np.ndarray
    U: AffineMatrixFunction
    V: AffineMatrixFunction
    W: AffineMatrixFunction
    X: AffineMatrixFunction
    R: np.ndarray
    L: np.ndarray
    min_eigenvalues: Dict[str, float]
    delta_feas: float
    plant: AffineLpvStateSpace
    solver: str = ""
    regularized: bool = False
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @property
    def P(self) -> np.ndarray:  # noqa: N802
        return np.block([[self.Px, self.Py], [self.Py.T, self.Pz]])

    @property
    def G(self) -> np.ndarray:  # noqa: N802
        n = self.J.shape[0]
        g12 = np.eye(n) + self.S.T - self.Py
        return np.block([[self.J + self.J.T - self.Px, g12], [g12.T, self.N + self.N.T - self.Pz]])

    def margins(self) -> Dict[str, float]:
        """Smallest eigenvalues of ``P``, of ``G`` and of the vertex LMIs."""
        sym = lambda m: (m + m.T) / 2
        return {
            "P": float(np.linalg.eigvalsh(sym(self.P))[0]),
            "G": float(np.linalg.eigvalsh(sym(self.G))[0]),
            "vertex": float(min(self.min_eigenvalues.values())),
        }

    def to_report(self) -> str:
        """Structured plain-text export of the certificate."""
        lines = [
            "# synthesis certificate",
            f"gamma = {format_float(self.gamma)}",
            f"delta_feas = {format_float(self.delta_feas)}",
            f"solver = {self.solver}",
            f"regularized = {self.regularized}",
            f"cond(R) = {format_float(float(np.linalg.cond(self.R)))}",
            "",
            "## margins",
        ]
        lines.extend(f"{name} = {format_float(value)}" for name, value in self.margins().items())
        lines.append("")
        lines.append("## constraint minimum eigenvalues")
        lines.extend(f"{name} = {format_float(value)}" for name, value in self.min_eigenvalues.items())
        lines.append("")
        lines.append("## matrices")
        for name in ("Px", "Py", "Pz", "J", "N", "S", "R", "L"):
            lines.extend(_matrix_text(name, getattr(self, name)))
        for base in "UVWX":
            fn = getattr(self, base)
            for i, term in enumerate(fn.terms()):
                lines.extend(_matrix_text(f"{base}{i}", term))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "gamma": self.gamma,
            "delta_feas": self.delta_feas,
            "solver": self.solver,
            "regularized": self.regularized,
            "margins": self.margins(),
            "min_eigenvalues": dict(self.min_eigenvalues),
            "condition_R": float(np.linalg.cond(self.R)),
        }


def _affine_to_dict(fn: AffineMatrixFunction) -> Dict[str, Any]:
    return {"constant": fn.constant.tolist(), "coefficients": [c.tolist() for c in fn.coefficients]}


def _affine_from_dict(data: Dict[str, Any]) -> AffineMatrixFunction:
    return AffineMatrixFunction(np.array(data["constant"], dtype=float), tuple(np.array(c, dtype=float) for c in data["coefficients"]))


@dataclass(frozen=True, eq=False)
class DifferentialController:
    """Affine LPV controller ``dx_c+ = A dx_c + B du_c``, ``dy_c = C dx_c + D du_c``."""

    A: AffineMatrixFunction
    B: AffineMatrixFunction
    C: AffineMatrixFunction
    D: AffineMatrixFunction
    polytope: SchedulingPolytope
    kind: str = "incremental"
    gamma: Optional[float] = None

    def __post_init__(self) -> None:
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.B.shape[0] != n or self.C.shape[1] != n:
            raise DimensionError("inconsistent controller dimensions")
        if self.D.shape != (self.C.shape[0], self.B.shape[1]):
            raise DimensionError("inconsistent controller feedthrough")
        for fn in (self.A, self.B, self.C, self.D):
            if fn.n_rho != self.polytope.dimension:
                raise DimensionError("controller and polytope scheduling dimensions differ")

    @classmethod
    def zero(cls, n_xc: int, n_y: int, n_u: int, polytope: SchedulingPolytope, kind: str = "zero"):
        z = lambda r, c: AffineMatrixFunction.zeros(r, c, polytope.dimension)
        return cls(z(n_xc, n_xc), z(n_xc, n_y), z(n_u, n_xc), z(n_u, n_y), polytope, kind)

    @property
    def n_xc(self) -> int:
        return self.A.shape[0]

    @property
    def n_in(self) -> int:
        return self.B.shape[1]

    @property
    def n_out(self) -> int:
        return self.C.shape[0]

    @property
    def is_constant(self) -> bool:
        return all(fn.is_constant for fn in (self.A, self.B, self.C, self.D))

    def at(self, rho) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.A.evaluate(rho), self.B.evaluate(rho), self.C.evaluate(rho), self.D.evaluate(rho)

    def as_lpv(self) -> AffineLpvStateSpace:
        return AffineLpvStateSpace(
            self.A,
            self.B,
            self.C,
            self.D,
            self.polytope,
            inputs=(("u_c", self.n_in),),
            outputs=(("y_c", self.n_out),),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "gamma": self.gamma,
            "polytope": self.polytope.vertices.tolist(),
            **{name: _affine_to_dict(getattr(self, name)) for name in "ABCD"},
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DifferentialController":
        try:
            polytope = SchedulingPolytope(np.array(data["polytope"], dtype=float))
            mats = {name: _affine_from_dict(data[name]) for name in "ABCD"}
        except (KeyError, TypeError) as exc:
            raise DimensionError(f"malformed controller data: {exc}") from exc
        return cls(polytope=polytope, kind=data.get("kind", "incremental"), gamma=data.get("gamma"), **mats)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# ---------- reconstruction ----------
def _factorize(s_minus_nj: np.ndarray, how: str) -> Tuple[np.ndarray, np.ndarray]:
    if how == "lu":
        perm, lower, upper = scipy.linalg.lu(s_minus_nj)
        return perm @ lower, upper
    return s_minus_nj, np.eye(s_minus_nj.shape[0])


def _outer_factors(cert_like, pb: _PlantBlocks) -> Tuple[np.ndarray, np.ndarray]:
    n, n_u, n_y = pb.n_x, pb.n_u, pb.n_y
    left = np.block([[cert_like.R, cert_like.N @ pb.B_u], [np.zeros((n_u, n)), np.eye(n_u)]])
    right = np.block([[cert_like.L, np.zeros((n, n_y))], [pb.C_y @ cert_like.J, np.eye(n_y)]])
    return left, right


def _theta_term(cert: SynthesisCertificate, pb: _PlantBlocks, index: int) -> np.ndarray:
    top = cert.U.term(index) - cert.N @ pb.A.term(index) @ cert.J
    return np.block([[top, cert.V.term(index)], [cert.W.term(index), cert.X.term(index)]])


def theta(cert: SynthesisCertificate, rho) -> np.ndarray:
    """``[[U, V], [W, X]](rho) - [[N A(rho) J, 0], [0, 0]]``."""
    pb = plant_blocks(cert.plant)
    rho = as_point(rho, pb.polytope.dimension)
    top = cert.U.evaluate(rho) - cert.N @ pb.A.evaluate(rho) @ cert.J
    return np.block([[top, cert.V.evaluate(rho)], [cert.W.evaluate(rho), cert.X.evaluate(rho)]])


def build_controller(cert: SynthesisCertificate, kind: str = "incremental") -> DifferentialController:
    """Recover the affine controller from a certificate, one coefficient at a time."""
    pb = plant_blocks(cert.plant)
    n = pb.n_x
    left, right = _outer_factors(cert, pb)
    terms = []
    try:
        for index in range(pb.polytope.dimension + 1):
            k = np.linalg.solve(left, _theta_term(cert, pb, index))
            terms.append(np.linalg.solve(right.T, k.T).T)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"controller reconstruction failed: {exc}") from exc
    split = lambda sl: AffineMatrixFunction(terms[0][sl], tuple(t[sl] for t in terms[1:]))
    return DifferentialController(
        A=split(np.s_[:n, :n]),
        B=split(np.s_[:n, n:]),
        C=split(np.s_[n:, :n]),
        D=split(np.s_[n:, n:]),
        polytope=pb.polytope,
        kind=kind,
        gamma=cert.gamma,
    )


def reconstruct_theta(cert: SynthesisCertificate, ctrl: DifferentialController, rho) -> float:
    """Max-norm residual of the reconstruction identity at ``rho``."""
    pb = plant_blocks(cert.plant)
    rho = as_point(rho, pb.polytope.dimension)
    left, right = _outer_factors(cert, pb)
    a_c, b_c, c_c, d_c = ctrl.at(rho)
    k = np.block([[a_c, b_c], [c_c, d_c]])
    return float(np.max(np.abs(left @ k @ right - theta(cert, rho))))


def _certificate(sol: SdpSolution, plant_lpv, options, gamma, regularized) -> SynthesisCertificate:
    pb = plant_blocks(plant_lpv)
    n_rho = pb.polytope.dimension
    s_minus_nj = sol["S"] - sol["N"] @ sol["J"]
    r, l = _factorize(s_minus_nj, options.factorization)
    return SynthesisCertificate(
        gamma=float(gamma),
        Px=sol["Px"],
        Py=sol["Py"],
        Pz=sol["Pz"],
        J=sol["J"],
        N=sol["N"],
        S=sol["S"],
        U=_affine_from_solution(sol, "U", n_rho),
        V=_affine_from_solution(sol, "V", n_rho),
        W=_affine_from_solution(sol, "W", n_rho),
        X=_affine_from_solution(sol, "X", n_rho),
        R=r,
        L=l,
        min_eigenvalues=dict(sol.min_eigenvalues),
        delta_feas=options.delta_feas or get_config().delta_feas,
        plant=plant_lpv,
        solver=sol.solver,
        regularized=regularized,
        diagnostics=dict(sol.diagnostics),
    )


def _conditioning(cert: SynthesisCertificate) -> float:
    return float(max(np.linalg.cond(cert.R), np.linalg.cond(cert.L)))


def synthesize(
    plant_lpv: AffineLpvStateSpace,
    options: Optional[SynthesisOptions] = None,
    kind: str = "incremental",
) -> Tuple[SynthesisCertificate, DifferentialController]:
    """Minimize the gain bound and construct the differential controller.

    Parameters
    ----------
    plant_lpv:
        Generalized plant model with channels ``(w, u)`` and ``(z, y)``.
    options:
        Synthesis options.
    kind:
        Label stored with the controller (``"incremental"`` or ``"standard"``).

    Raises
    ------
    InfeasibleError
        When the LMIs have no solution.
    NumericalFailureError
        When the solver fails or the factor ``R`` stays ill-conditioned.
    """

    options = options or SynthesisOptions()
    limit = options.condition_limit or get_config().condition_limit
    system = assemble_synthesis_lmi(plant_lpv, options)
    sol = system.solve(solver=options.solver).raise_for_status()
    gamma_opt = float(sol["gamma"])
    cert = _certificate(sol, plant_lpv, options, gamma_opt, False)
    cond = _conditioning(cert)
    if not np.isfinite(cond) or cond > limit:
        relaxed = (1 + options.gamma_relaxation) * gamma_opt
        logger.warning(
            "R is ill-conditioned (cond %.3e); re-solving with gamma fixed at %.6g",
            cond,
            relaxed,
        )
        system = assemble_synthesis_lmi(plant_lpv, options, gamma=relaxed)
        sol = system.solve(solver=options.solver).raise_for_status()
        cert = _certificate(sol, plant_lpv, options, relaxed, True)
        cond = _conditioning(cert)
        if not np.isfinite(cond) or cond > limit:
            raise NumericalFailureError(
                f"factor R remains singular after regularization (cond {cond:.3e})",
                {"condition": cond},
            )
    ctrl = build_controller(cert, kind)
    logger.info("Synthesized %s controller: gamma = %.6g, cond(R) = %.3e", kind, cert.gamma, cond)
    return cert, ctrl


__all__ = [
    "DifferentialController",
    "SynthesisCertificate",
    "SynthesisOptions",
    "assemble_synthesis_lmi",
    "build_controller",
    "plant_blocks",
    "reconstruct_theta",
    "synthesize",
    "theta",
]
