"""Linear matrix inequality systems and their solution through cvxpy.

Constraints are registered as *build callables*: functions that take a
mapping ``name -> value`` and return a square block matrix. The same callable
is evaluated with numpy arrays (for probing, SDPA export and residual
checks) and with cvxpy variables (for solving). Use :func:`bmat` to assemble
blocks so both cases work.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import cvxpy as cp
import numpy as np

from lpv_utils import SolutionCache, atomic_write_text, format_float

from .config import get_config
from .errors import AffineClosureError, InfeasibleError, NumericalFailureError, StructureError
from .lpv_model import SchedulingPolytope

logger = logging.getLogger(__name__)

Values = Mapping[str, Any]
Build = Callable[[Values], Any]
Template = Callable[[np.ndarray, Values], Any]

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical-failure"

EIGENVALUE_FLOOR = -1e-7
# solver-side margin multiplier; returned points then clear the declared margin
MARGIN_BUFFER = 2.0
LINEARITY_TOL = 1e-9
SYMMETRY_TOL = 1e-12


def bmat(rows: Sequence[Sequence[Any]]):
    """Block matrix from numpy arrays and/or cvxpy expressions."""
    if any(isinstance(entry, cp.Expression) for row in rows for entry in row):
        return cp.bmat([list(row) for row in rows])
    return np.block([[np.atleast_2d(np.asarray(entry, dtype=float)) for entry in row] for row in rows])


def symmetrize(matrix):
    return (matrix + matrix.T) / 2


def trace(matrix):
    if isinstance(matrix, cp.Expression):
        return cp.trace(matrix)
    return float(np.trace(matrix))


@dataclass(frozen=True)
class VariableSpec:
    """A decision variable: scalar (shape ``()``), symmetric or rectangular matrix."""

    name: str
    shape: Tuple[int, ...]
    symmetric: bool = False

    @property
    def size(self) -> int:
        if not self.shape:
            return 1
        if self.symmetric:
            n = self.shape[0]
            return n * (n + 1) // 2
        return int(np.prod(self.shape))

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def basis(self) -> Iterator[np.ndarray]:
        """Unit directions of the variable, one per scalar degree of freedom."""
        if not self.shape:
            yield np.array(1.0)
            return
        if self.symmetric:
            n = self.shape[0]
            for i in range(n):
                for j in range(i, n):
                    e = np.zeros(self.shape)
                    e[i, j] = e[j, i] = 1.0
                    yield e
            return
        for index in np.ndindex(*self.shape):
            e = np.zeros(self.shape)
            e[index] = 1.0
            yield e

    def random(self, rng: np.random.Generator) -> np.ndarray:
        value = rng.standard_normal(self.shape)
        return symmetrize(value) if self.symmetric else value

    def cvx(self) -> cp.Variable:
        if not self.shape:
            return cp.Variable(name=self.name)
        return cp.Variable(self.shape, symmetric=self.symmetric, name=self.name)

    def from_vector(self, vector) -> np.ndarray:
        return np.asarray(vector, dtype=float).reshape(self.shape)


@dataclass(frozen=True)
class LmiConstraint:
    """``build(values) >= margin * I`` (``margin`` defaults to the system margin)."""

    name: str
    build: Build
    size: int
    margin: Optional[float] = None


@dataclass
class SdpSolution:
    values: Dict[str, np.ndarray]
    objective: Optional[float]
    min_eigenvalues: Dict[str, float]
    status: str
    solver: str
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def raise_for_status(self) -> "SdpSolution":
        if self.status == INFEASIBLE:
            raise InfeasibleError("LMI system is infeasible", self.diagnostics)
        if self.status != OPTIMAL:
            raise NumericalFailureError(
                f"solver {self.solver} failed ({self.diagnostics.get('solver_status')})",
                self.diagnostics,
            )
        return self


def _zero_values(specs: Mapping[str, VariableSpec]) -> Dict[str, np.ndarray]:
    return {name: spec.zeros() for name, spec in specs.items()}


def _as_array(value) -> np.ndarray:
    return np.atleast_2d(np.asarray(value, dtype=float))


def enforce_on_vertices(
    template: Template,
    polytope: SchedulingPolytope,
    variables: Optional[Mapping[str, VariableSpec]] = None,
    name: str = "lmi",
    margin: Optional[float] = None,
    seed: int = 0,
) -> List[LmiConstraint]:
    """One constraint per polytope vertex for a template affine in ``rho``.

    The template is probed at ``rho = 0``, ``+-e_i`` and ``e_i + e_j`` under a
    random variable assignment; curvature or cross terms raise
    :class:`AffineClosureError` carrying the probe residual. Templates that do
    not depend on ``rho`` yield a single constraint.
    """

    variables = variables or {}
    rng = np.random.default_rng(seed)
    values = {key: spec.random(rng) for key, spec in variables.items()}
    n_rho = polytope.dimension
    at = lambda rho: _as_array(template(np.asarray(rho, dtype=float), values))
    base = at(np.zeros(n_rho))
    scale = max(1.0, float(np.max(np.abs(base), initial=0.0)))
    eye = np.eye(n_rho)
    residual = 0.0
    varies = False
    for i in range(n_rho):
        plus, minus = at(eye[i]), at(-eye[i])
        residual = max(residual, float(np.max(np.abs(plus + minus - 2 * base))))
        varies = varies or bool(np.max(np.abs(plus - base)) > LINEARITY_TOL * scale)
        for j in range(i + 1, n_rho):
            cross = at(eye[i] + eye[j]) - plus - at(eye[j]) + base
            residual = max(residual, float(np.max(np.abs(cross))))
    if residual > LINEARITY_TOL * scale:
        raise AffineClosureError(
            f"template '{name}' is not affine in the scheduling (probe residual {residual:.3e})"
        )
    size = base.shape[0]
    if not varies:
        return [LmiConstraint(name, lambda v, t=template: t(np.zeros(n_rho), v), size, margin)]
    return [
        LmiConstraint(f"{name}@v{k}", lambda v, t=template, rho=vertex: t(rho, v), size, margin)
        for k, vertex in enumerate(polytope.vertices)
    ]


class LmiSystem:
    """Registry of decision variables, LMI constraints and a linear objective."""

    def __init__(self, name: str = "lmi", delta_feas: Optional[float] = None) -> None:
        self.name = name
        self.delta_feas = delta_feas if delta_feas is not None else get_config().delta_feas
        self.variables: Dict[str, VariableSpec] = {}
        self.constraints: List[LmiConstraint] = []
        self.objective: Optional[Callable[[Values], Any]] = None

    # ---------- variables ----------
    def _register(self, spec: VariableSpec) -> str:
        if spec.name in self.variables:
            raise ValueError(f"variable '{spec.name}' already registered")
        self.variables[spec.name] = spec
        return spec.name

    def scalar(self, name: str) -> str:
        return self._register(VariableSpec(name, ()))

    def symmetric(self, name: str, n: int) -> str:
        return self._register(VariableSpec(name, (n, n), True))

    def matrix(self, name: str, rows: int, cols: int) -> str:
        return self._register(VariableSpec(name, (rows, cols)))

    @property
    def n_scalars(self) -> int:
        return sum(spec.size for spec in self.variables.values())

    # ---------- constraints ----------
    def add_constraint(self, name: str, build: Build, margin: Optional[float] = None) -> LmiConstraint:
        value = _as_array(build(_zero_values(self.variables)))
        if value.shape[0] != value.shape[1]:
            raise StructureError(f"constraint '{name}' is not square: {value.shape}")
        constraint = LmiConstraint(name, build, value.shape[0], margin)
        self.constraints.append(constraint)
        return constraint

    def add_vertex_constraints(
        self,
        name: str,
        template: Template,
        polytope: SchedulingPolytope,
        margin: Optional[float] = None,
    ) -> List[LmiConstraint]:
        constraints = enforce_on_vertices(template, polytope, self.variables, name, margin)
        self.constraints.extend(constraints)
        return constraints

    def minimize(self, objective: Callable[[Values], Any]) -> None:
        self.objective = objective

    def margin_of(self, constraint: LmiConstraint) -> float:
        return self.delta_feas if constraint.margin is None else constraint.margin

    # ---------- probing ----------
    def evaluate(self, constraint: LmiConstraint, values: Values) -> np.ndarray:
        return _as_array(constraint.build(values))

    def check_linearity(self, seed: int = 0) -> float:
        """Probe every constraint for linearity and symmetry; return the worst residual."""
        rng = np.random.default_rng(seed)
        zero = _zero_values(self.variables)
        x1 = {k: s.random(rng) for k, s in self.variables.items()}
        x2 = {k: s.random(rng) for k, s in self.variables.items()}
        both = {k: x1[k] + x2[k] for k in self.variables}
        worst = 0.0
        for con in self.constraints:
            m0, m1, m2, m12 = (self.evaluate(con, v) for v in (zero, x1, x2, both))
            scale = max(1.0, float(np.max(np.abs(m12))))
            residual = float(np.max(np.abs(m12 - m1 - m2 + m0))) / scale
            if residual > LINEARITY_TOL:
                raise StructureError(
                    f"constraint '{con.name}' is not linear in the decision variables "
                    f"(residual {residual:.3e})"
                )
            asym = float(np.max(np.abs(m1 - m1.T))) / max(1.0, float(np.max(np.abs(m1))))
            if asym > SYMMETRY_TOL:
                raise StructureError(f"constraint '{con.name}' is not symmetric (asymmetry {asym:.3e})")
            worst = max(worst, residual)
        return worst

    def coefficients(self) -> Tuple[List[np.ndarray], List[List[np.ndarray]], np.ndarray]:
        """SDPA data: ``M_0`` and ``M_i`` per constraint, and the objective vector ``c``."""
        zero = _zero_values(self.variables)
        constants = [symmetrize(self.evaluate(con, zero)) for con in self.constraints]
        per_constraint: List[List[np.ndarray]] = [[] for _ in self.constraints]
        c: List[float] = []
        obj0 = float(self.objective(zero)) if self.objective is not None else 0.0
        for name, spec in self.variables.items():
            for direction in spec.basis():
                values = dict(zero)
                values[name] = direction
                for index, con in enumerate(self.constraints):
                    per_constraint[index].append(symmetrize(self.evaluate(con, values)) - constants[index])
                c.append(float(self.objective(values)) - obj0 if self.objective is not None else 0.0)
        return constants, per_constraint, np.asarray(c)

    def fingerprint(self, solver: str = "") -> str:
        constants, per_constraint, c = self.coefficients()
        chunks = [self.name.encode(), solver.encode(), np.float64(self.delta_feas).tobytes(), c.tobytes()]
        for con, m0, terms in zip(self.constraints, constants, per_constraint):
            chunks.append(np.float64(self.margin_of(con)).tobytes())
            chunks.append(np.ascontiguousarray(m0).tobytes())
            chunks.extend(np.ascontiguousarray(t).tobytes() for t in terms)
        return SolutionCache.build_key(chunks)

    def to_sdpa(self, path: Path | str) -> Path:
        """Write the system in SDPA sparse format: ``sum x_i F_i - F_0 >= 0``.

        ``F_0 = margin * I - M_0`` and ``F_i = M_i`` for each scalar decision
        variable, taken in registry order.
        """

        constants, per_constraint, c = self.coefficients()
        lines = [f"* {self.name}", str(len(c)), str(len(self.constraints))]
        lines.append(" ".join(str(con.size) for con in self.constraints))
        lines.append(" ".join(format_float(v) for v in c) if len(c) else "")

        def entries(matno: int, block: int, mat: np.ndarray) -> None:
            rows, cols = np.triu_indices(mat.shape[0])
            for i, j in zip(rows, cols):
                if mat[i, j] != 0.0:
                    lines.append(f"{matno} {block} {i + 1} {j + 1} {format_float(mat[i, j])}")

        for block, (con, m0) in enumerate(zip(self.constraints, constants), start=1):
            entries(0, block, self.margin_of(con) * np.eye(con.size) - m0)
        for block, terms in enumerate(per_constraint, start=1):
            for matno, term in enumerate(terms, start=1):
                entries(matno, block, term)
        target = Path(path)
        atomic_write_text(target, "\n".join(lines) + "\n")
        logger.info("Wrote SDPA dump of %s to %s", self.name, target)
        return target

    # ---------- solving ----------
    def _min_eigenvalues(self, values: Values) -> Dict[str, float]:
        return {
            con.name: float(np.linalg.eigvalsh(symmetrize(self.evaluate(con, values)))[0])
            for con in self.constraints
        }

    def _solution(self, values, objective, status, solver, diagnostics) -> SdpSolution:
        min_eigs = self._min_eigenvalues(values)
        if status == OPTIMAL and min_eigs and min(min_eigs.values()) < EIGENVALUE_FLOOR:
            diagnostics["reason"] = "constraint violated at returned point"
            status = NUMERICAL_FAILURE
        diagnostics["max_violation"] = max(
            [max(0.0, self.margin_of(c) - min_eigs[c.name]) for c in self.constraints if c.name in min_eigs],
            default=0.0,
        )
        return SdpSolution(values, objective, min_eigs, status, solver, diagnostics)

    def solve(
        self,
        solver: Optional[str] = None,
        cache: Optional[SolutionCache] = None,
        **solver_options: Any,
    ) -> SdpSolution:
        """Solve the system; the returned status is never silently wrong.

        Parameters
        ----------
        solver:
            cvxpy solver name; defaults to the configured solver, falling back
            to SCS when it is not installed.
        cache:
            Optional :class:`SolutionCache`; the toolkit cache directory is used
            when configured and no cache is passed.
        """

        solver = resolve_solver(solver)
        owned_cache = None
        if cache is None and get_config().cache_dir is not None:
            cache = owned_cache = SolutionCache(get_config().cache_dir)
        try:
            key = self.fingerprint(solver) if cache is not None else None
            if cache is not None:
                entry = cache.load(key)
                if entry is not None:
                    diagnostics = {"cache": "hit", "solver_status": entry["status"]}
                    values = {k: self.variables[k].from_vector(v) for k, v in entry["values"].items()}
                    return self._solution(values, entry["objective"], entry["status"], entry["solver"], diagnostics)
            solution = self._solve_cvxpy(solver, solver_options)
            if cache is not None and solution.status != NUMERICAL_FAILURE:
                cache.save(key, solution.values, solution.objective, solution.status, solution.solver)
            return solution
        finally:
            if owned_cache is not None:
                owned_cache.close()

    def _solve_cvxpy(self, solver: str, solver_options: Dict[str, Any]) -> SdpSolution:
        variables = {name: spec.cvx() for name, spec in self.variables.items()}
        constraints = []
        for con in self.constraints:
            expr = symmetrize(con.build(variables))
            slack = cp.Variable((con.size, con.size), symmetric=True)
            constraints += [slack == expr, slack >> MARGIN_BUFFER * self.margin_of(con) * np.eye(con.size)]
        objective = self.objective(variables) if self.objective is not None else 0
        problem = cp.Problem(cp.Minimize(objective), constraints)
        logger.info(
            "Solving %s with %s: %d scalars, %d constraints",
            self.name,
            solver,
            self.n_scalars,
            len(self.constraints),
        )
        diagnostics: Dict[str, Any] = {"cache": "miss"}
        try:
            problem.solve(solver=solver, **solver_options)
        except cp.error.SolverError as exc:
            diagnostics.update(solver_status="solver-error", error=str(exc))
            logger.warning("Solver %s failed on %s: %s", solver, self.name, exc)
            return SdpSolution({}, None, {}, NUMERICAL_FAILURE, solver, diagnostics)
        diagnostics["solver_status"] = problem.status
        stats = problem.solver_stats
        if stats is not None:
            diagnostics["solve_time"] = stats.solve_time
            diagnostics["iterations"] = stats.num_iters
        if problem.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            logger.info("%s is infeasible (%s)", self.name, problem.status)
            return SdpSolution({}, None, {}, INFEASIBLE, solver, diagnostics)
        if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            logger.warning("%s ended with solver status %s", self.name, problem.status)
            return SdpSolution({}, None, {}, NUMERICAL_FAILURE, solver, diagnostics)
        values = {
            name: np.asarray(var.value, dtype=float).reshape(self.variables[name].shape)
            for name, var in variables.items()
        }
        for name, spec in self.variables.items():
            if spec.symmetric:
                values[name] = symmetrize(values[name])
        value = None if self.objective is None else float(problem.value)
        solution = self._solution(values, value, OPTIMAL, solver, diagnostics)
        logger.info(
            "%s: status %s, objective %s, min eigenvalue %.3e",
            self.name,
            solution.status,
            "n/a" if value is None else f"{value:.6g}",
            min(solution.min_eigenvalues.values(), default=float("nan")),
        )
        return solution


def resolve_solver(requested: Optional[str] = None) -> str:
    solver = (requested or get_config().solver).upper()
    installed = cp.installed_solvers()
    if solver in installed:
        return solver
    fallback = "SCS" if "SCS" in installed else installed[0]
    logger.warning("Solver %s is not installed, using %s", solver, fallback)
    return fallback


def solve(system: LmiSystem, **kwargs: Any) -> SdpSolution:
    """Solve ``system``; see :meth:`LmiSystem.solve`."""
    return system.solve(**kwargs)


__all__ = [
    "INFEASIBLE",
    "LmiConstraint",
    "LmiSystem",
    "NUMERICAL_FAILURE",
    "OPTIMAL",
    "SdpSolution",
    "VariableSpec",
    "bmat",
    "enforce_on_vertices",
    "resolve_solver",
    "solve",
    "symmetrize",
    "trace",
]
