"""Differential forms of nonlinear plants and validation of their LPV embeddings."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.stats import qmc

from .config import get_config
from .errors import DimensionError, LpvError, RegionError
from .lpv_model import AffineLpvStateSpace, Channels, SchedulingPolytope, _channels

logger = logging.getLogger(__name__)

Vector = np.ndarray
Jacobians = Tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True, eq=False)
class Region:
    """Axis-aligned box, or all of R^n with a declared sampling box.

    Samples come from an unscrambled Halton sequence, so the first ``n``
    points of a larger sample set are exactly the ``n``-point sample set.
    """

    lower: np.ndarray
    upper: np.ndarray
    bounded: bool = True

    def __post_init__(self) -> None:
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise DimensionError("region bounds must be vectors of equal length")
        if np.any(lower >= upper):
            raise DimensionError("region bounds must satisfy lower < upper")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float]) -> "Region":
        return cls(np.asarray(lower, dtype=float), np.asarray(upper, dtype=float), True)

    @classmethod
    def unbounded(cls, sampling_lower: Sequence[float], sampling_upper: Sequence[float]) -> "Region":
        """All of R^n; validation samples are drawn from the given box only."""
        return cls(
            np.asarray(sampling_lower, dtype=float), np.asarray(sampling_upper, dtype=float), False
        )

    @property
    def dimension(self) -> int:
        return int(self.lower.shape[0])

    def contains(self, x) -> bool:
        if not self.bounded:
            return True
        point = np.atleast_1d(np.asarray(x, dtype=float))
        return bool(np.all(point >= self.lower) and np.all(point <= self.upper))

    def samples(self, n: int) -> np.ndarray:
        return halton_box(self.lower, self.upper, n)


def halton_box(lower: np.ndarray, upper: np.ndarray, n: int) -> np.ndarray:
    """Deterministic low-discrepancy points in the box ``[lower, upper]``."""
    if n <= 0:
        raise ValueError("sample count must be positive")
    sampler = qmc.Halton(d=len(lower), scramble=False)
    return qmc.scale(sampler.random(n), lower, upper)


@dataclass(frozen=True, eq=False)
class NonlinearPlant:
    """User-supplied discrete-time plant ``x+ = f(x, v)``, ``out = h(x, v)``.

    ``v`` stacks the input channels in order (for example ``w`` then ``u``).
    The maps must be free of side effects. When a Jacobian map is omitted the
    differential form falls back to central differences. ``scheduling`` and
    ``embedding`` carry the user-proposed LPV embedding of the differential
    form; ``equilibrium(r)`` and ``inversion(r_seq)`` give steady states for
    constant references and reference sequences.
    """

    name: str
    n_x: int
    inputs: Channels
    outputs: Channels
    dynamics: Callable[[Vector, Vector], Vector]
    output: Callable[[Vector, Vector], Vector]
    dynamics_jacobian: Optional[Callable[[Vector, Vector], Jacobians]] = None
    output_jacobian: Optional[Callable[[Vector, Vector], Jacobians]] = None
    region: Optional[Region] = None
    input_region: Optional[Region] = None
    scheduling: Optional["SchedulingMap"] = None
    embedding: Optional[AffineLpvStateSpace] = None
    equilibrium: Optional[Callable[[float], Tuple[Vector, Vector]]] = None
    inversion: Optional[Callable[[Vector], Tuple[np.ndarray, np.ndarray]]] = None

    def __post_init__(self) -> None:
        n_in = sum(size for _, size in self.inputs) if self.inputs else 0
        n_out = sum(size for _, size in self.outputs) if self.outputs else 0
        object.__setattr__(self, "inputs", _channels(self.inputs, n_in, "in"))
        object.__setattr__(self, "outputs", _channels(self.outputs, n_out, "out"))
        if self.region is None:
            object.__setattr__(
                self, "region", Region.unbounded(-np.ones(self.n_x), np.ones(self.n_x))
            )
        if self.region.dimension != self.n_x:
            raise DimensionError("plant region dimension differs from n_x")
        if self.input_region is None and n_in:
            object.__setattr__(self, "input_region", Region.unbounded(-np.ones(n_in), np.ones(n_in)))

    @property
    def n_in(self) -> int:
        return sum(size for _, size in self.inputs)

    @property
    def n_out(self) -> int:
        return sum(size for _, size in self.outputs)

    def step(self, x, v) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.dynamics(_vec(x), _vec(v)), dtype=float))

    def observe(self, x, v) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.output(_vec(x), _vec(v)), dtype=float))


@dataclass(frozen=True, eq=False)
class SchedulingMap:
    """Scheduling map ``psi: x -> rho`` together with its target polytope.

    ``segment_average(x, x_star)`` may return the closed-form mean of ``psi``
    along the straight segment from ``x_star`` to ``x``; realization falls
    back to quadrature otherwise.
    """

    psi: Callable[[Vector], Vector]
    polytope: SchedulingPolytope
    region: Region
    segment_average: Optional[Callable[[Vector, Vector], Vector]] = None
    name: str = "psi"

    def __call__(self, x) -> np.ndarray:
        rho = np.atleast_1d(np.asarray(self.psi(_vec(x)), dtype=float))
        if rho.shape[0] != self.polytope.dimension:
            raise DimensionError(
                f"scheduling map returned {rho.shape[0]} values, polytope has dimension "
                f"{self.polytope.dimension}"
            )
        return rho


class JacobianReport(BaseModel):
    """Outcome of comparing user Jacobians with central differences."""

    samples: int
    step: float
    rtol: float
    max_relative_error: float
    worst_point: List[float] = Field(default_factory=list)
    undefined_points: int = Field(0, description="samples where f, h or a Jacobian is not finite")
    passed: bool


class EmbeddingReport(BaseModel):
    """Outcome of an embedding validation; failures are reported, never raised."""

    kind: str = Field(description="'differential' or 'primal'")
    samples: int
    tolerance: float
    max_a_error: float
    max_b_error: float
    max_c_error: float
    max_d_error: float
    passed: bool
    all_in_polytope: bool
    min_margin: float
    sampling_only: bool = Field(
        description="True when the embedding region is unbounded and only a sampling box was checked"
    )
    worst_point: List[float] = Field(default_factory=list)
    undefined_points: int = Field(0, description="samples where f, h or a Jacobian is not finite")


def _vec(value) -> np.ndarray:
    return np.atleast_1d(np.asarray(value, dtype=float)).ravel()


def finite_difference_jacobians(
    fn: Callable[[Vector, Vector], Vector], x, v, step: Optional[float] = None
) -> Jacobians:
    """Central-difference Jacobians of ``fn`` with respect to ``x`` and ``v``."""
    step = step if step is not None else get_config().jacobian_step
    x, v = _vec(x), _vec(v)
    f0 = _vec(fn(x, v))
    jx = np.zeros((f0.shape[0], x.shape[0]))
    jv = np.zeros((f0.shape[0], v.shape[0]))
    for i in range(x.shape[0]):
        h = step * max(1.0, abs(x[i]))
        dx = np.zeros_like(x)
        dx[i] = h
        jx[:, i] = (_vec(fn(x + dx, v)) - _vec(fn(x - dx, v))) / (2 * h)
    for j in range(v.shape[0]):
        h = step * max(1.0, abs(v[j]))
        dv = np.zeros_like(v)
        dv[j] = h
        jv[:, j] = (_vec(fn(x, v + dv)) - _vec(fn(x, v - dv))) / (2 * h)
    return jx, jv


def _jacobians(plant: NonlinearPlant, x, v) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    x, v = _vec(x), _vec(v)
    if plant.dynamics_jacobian is not None:
        a, b = plant.dynamics_jacobian(x, v)
    else:
        a, b = finite_difference_jacobians(plant.dynamics, x, v)
    if plant.output_jacobian is not None:
        c, d = plant.output_jacobian(x, v)
    else:
        c, d = finite_difference_jacobians(plant.output, x, v)
    shapes = {
        "A": (plant.n_x, plant.n_x),
        "B": (plant.n_x, plant.n_in),
        "C": (plant.n_out, plant.n_x),
        "D": (plant.n_out, plant.n_in),
    }
    mats = {}
    for name, mat in zip("ABCD", (a, b, c, d)):
        mat = np.asarray(mat, dtype=float).reshape(shapes[name])
        mats[name] = mat
    return mats["A"], mats["B"], mats["C"], mats["D"]


def differential_form_at(plant: NonlinearPlant, x, v=None):
    """Return ``(A_d, B_d, C_d, D_d)``, the Jacobians of the plant at ``(x, v)``.

    Parameters
    ----------
    plant:
        The nonlinear plant.
    x:
        State, inside ``plant.region``.
    v:
        Stacked inputs; zeros when omitted.
    """

    x = _vec(x)
    if x.shape[0] != plant.n_x:
        raise DimensionError(f"state has dimension {x.shape[0]}, expected {plant.n_x}")
    if not plant.region.contains(x):
        raise RegionError(f"state {x.tolist()} lies outside the declared region of {plant.name}")
    v = np.zeros(plant.n_in) if v is None else _vec(v)
    if v.shape[0] != plant.n_in:
        raise DimensionError(f"input has dimension {v.shape[0]}, expected {plant.n_in}")
    return _jacobians(plant, x, v)


def _joint_samples(plant: NonlinearPlant, n: int) -> Tuple[np.ndarray, np.ndarray]:
    lower = np.concatenate([plant.region.lower, plant.input_region.lower if plant.n_in else []])
    upper = np.concatenate([plant.region.upper, plant.input_region.upper if plant.n_in else []])
    points = halton_box(lower, upper, n)
    return points[:, : plant.n_x], points[:, plant.n_x :]


def _defined_at(plant: NonlinearPlant, x: Vector, v: Vector) -> bool:
    try:
        values = (_vec(plant.dynamics(x, v)), _vec(plant.output(x, v)))
    except LpvError:
        raise
    except (ArithmeticError, ValueError):
        return False
    return all(bool(np.all(np.isfinite(value))) for value in values)


def check_jacobians(
    plant: NonlinearPlant,
    samples: int = 200,
    step: Optional[float] = None,
    rtol: Optional[float] = None,
) -> JacobianReport:
    """Compare the plant's Jacobian maps with central differences on sampled points.

    A sample where ``f`` or ``h`` (or any of the Jacobians) is not finite
    fails the report and becomes ``worst_point``.
    """
    cfg = get_config()
    step = step if step is not None else cfg.jacobian_step
    rtol = rtol if rtol is not None else cfg.jacobian_rtol
    xs, vs = _joint_samples(plant, samples)
    worst, worst_point, undefined = 0.0, [], 0
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        for x, v in zip(xs, vs):
            point = [*x.tolist(), *v.tolist()]
            user = None
            if _defined_at(plant, x, v):
                try:
                    user = _jacobians(plant, x, v)
                    fd_f = finite_difference_jacobians(plant.dynamics, x, v, step)
                    fd_h = finite_difference_jacobians(plant.output, x, v, step)
                except LpvError:
                    raise
                except (ArithmeticError, ValueError):
                    user = None
            if user is None:
                undefined += 1
                if worst != np.inf:
                    worst, worst_point = np.inf, point
                continue
            for mine, ref in zip(user, (*fd_f, *fd_h)):
                if ref.size == 0:
                    continue
                err = float(np.max(np.abs(mine - ref)) / max(1.0, float(np.max(np.abs(ref)))))
                if not np.isfinite(err):
                    undefined += 1
                    err = np.inf
                if err > worst:
                    worst, worst_point = err, point
    report = JacobianReport(
        samples=samples,
        step=step,
        rtol=rtol,
        max_relative_error=worst,
        worst_point=worst_point,
        undefined_points=undefined,
        passed=undefined == 0 and worst <= rtol,
    )
    if undefined:
        logger.warning("%s is not finite at %d sampled points, first at %s", plant.name, undefined, worst_point)
    logger.info("Jacobian check for %s: max relative error %.3e", plant.name, worst)
    return report


def _embedding_samples(smap: SchedulingMap, samples: Optional[int]) -> np.ndarray:
    return smap.region.samples(samples or get_config().validation_samples)


def _norm(mat: np.ndarray) -> float:
    if mat.size == 0:
        return 0.0
    return float(np.linalg.norm(mat, ord=2)) if mat.ndim == 2 else float(np.linalg.norm(mat))


def _report(kind, smap, points, errors, margins, worst_point, tol) -> EmbeddingReport:
    min_margin = float(min(margins)) if margins else 0.0
    report = EmbeddingReport(
        kind=kind,
        samples=len(points),
        tolerance=tol,
        max_a_error=errors["A"],
        max_b_error=errors["B"],
        max_c_error=errors["C"],
        max_d_error=errors["D"],
        passed=errors["A"] <= tol and errors["C"] <= tol,
        all_in_polytope=min_margin >= -1e-12,
        min_margin=min_margin,
        sampling_only=not smap.region.bounded,
        worst_point=worst_point,
    )
    level = logging.INFO if report.passed and report.all_in_polytope else logging.WARNING
    logger.log(
        level,
        "%s embedding over %d samples: A err %.3e, C err %.3e, margin %.3e",
        kind,
        report.samples,
        report.max_a_error,
        report.max_c_error,
        report.min_margin,
    )
    return report


def validate_embedding(
    plant: NonlinearPlant,
    smap: SchedulingMap,
    candidate: AffineLpvStateSpace,
    samples: Optional[int] = None,
    tol: Optional[float] = None,
) -> EmbeddingReport:
    """Check ``candidate(psi(x))`` against the differential form on sampled states."""
    tol = tol if tol is not None else get_config().embedding_tol
    if candidate.n_x != plant.n_x or candidate.n_in != plant.n_in or candidate.n_out != plant.n_out:
        raise DimensionError("candidate and plant dimensions differ")
    points = _embedding_samples(smap, samples)
    v0 = np.zeros(plant.n_in)
    errors = dict.fromkeys("ABCD", 0.0)
    margins: List[float] = []
    worst_point: List[float] = []
    worst = -1.0
    for x in points:
        rho = smap(x)
        margins.append(smap.polytope.membership_margin(rho))
        exact = _jacobians(plant, x, v0)
        embedded = candidate.at(rho)
        for name, mine, ref in zip("ABCD", embedded, exact):
            errors[name] = max(errors[name], _norm(mine - ref))
        if max(errors["A"], errors["C"]) > worst:
            worst = max(errors["A"], errors["C"])
            worst_point = x.tolist()
    return _report("differential", smap, points, errors, margins, worst_point, tol)


def validate_primal_embedding(
    plant: NonlinearPlant,
    smap: SchedulingMap,
    candidate: AffineLpvStateSpace,
    samples: Optional[int] = None,
    tol: Optional[float] = None,
) -> EmbeddingReport:
    """Check ``f(x, v) = A(psi(x))x + B(psi(x))v`` and the output analogue on samples.

    This is the embedding used by standard LPV designs, which embed the plant
    itself rather than its differential form.
    """

    tol = tol if tol is not None else get_config().embedding_tol
    points = _embedding_samples(smap, samples)
    v_probe = np.ones(plant.n_in)
    errors = dict.fromkeys("ABCD", 0.0)
    margins: List[float] = []
    worst_point: List[float] = []
    worst = -1.0
    for x in points:
        rho = smap(x)
        margins.append(smap.polytope.membership_margin(rho))
        a, b, c, d = candidate.at(rho)
        f0 = plant.step(x, np.zeros(plant.n_in))
        h0 = plant.observe(x, np.zeros(plant.n_in))
        errors["A"] = max(errors["A"], _norm(f0 - a @ x))
        errors["C"] = max(errors["C"], _norm(h0 - c @ x))
        if plant.n_in:
            errors["B"] = max(errors["B"], _norm(plant.step(x, v_probe) - f0 - b @ v_probe))
            errors["D"] = max(errors["D"], _norm(plant.observe(x, v_probe) - h0 - d @ v_probe))
        if max(errors["A"], errors["C"]) > worst:
            worst = max(errors["A"], errors["C"])
            worst_point = x.tolist()
    return _report("primal", smap, points, errors, margins, worst_point, tol)


__all__ = [
    "EmbeddingReport",
    "JacobianReport",
    "NonlinearPlant",
    "Region",
    "SchedulingMap",
    "check_jacobians",
    "differential_form_at",
    "finite_difference_jacobians",
    "halton_box",
    "validate_embedding",
    "validate_primal_embedding",
]
