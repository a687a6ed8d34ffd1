"""Primal realization of a differential controller and steady-state trajectories.

The incremental controller runs in deviation coordinates around a feasible
steady-state trajectory::

    dxc+ = A_c dxc + B_c (u_c - u_c*)
    y_c  = y_c* + C_c dxc + D_c (u_c - u_c*)

where each matrix is the mean of the differential controller's matrix along
the straight segment from ``x*_k`` to ``x_k``. Because the controller is affine
in the scheduling, that mean is the controller evaluated at the mean
scheduling value along the segment; only that vector integral is computed.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np

from lpv_utils import write_csv

from .config import get_config
from .differential import NonlinearPlant, SchedulingMap, _jacobians, _vec
from .errors import ConvergenceError, DimensionError, HorizonError, StructureError
from .synthesis import DifferentialController

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-10
NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 100


@lru_cache(maxsize=None)
def _gauss_legendre(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [0, 1]."""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return (nodes + 1.0) / 2.0, weights / 2.0


def segment_average(
    smap: SchedulingMap,
    x,
    x_star,
    order: Optional[int] = None,
    upto: float = 1.0,
) -> np.ndarray:
    """Mean of ``psi`` along the segment from ``x_star`` to ``x_star + upto (x - x_star)``."""
    x, x_star = _vec(x), _vec(x_star)
    if upto == 1.0 and smap.segment_average is not None:
        return np.atleast_1d(np.asarray(smap.segment_average(x, x_star), dtype=float))
    nodes, weights = _gauss_legendre(order or get_config().quadrature_order)
    diff = x - x_star
    total = np.zeros(smap.polytope.dimension)
    for lam, weight in zip(nodes, weights):
        total += weight * smap(x_star + upto * lam * diff)
    return total


@dataclass(frozen=True, eq=False)
class PathMatrices:
    """Path-averaged controller matrices; unpacks as ``A, B, C, D``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    rho: np.ndarray
    leaves_region: bool = False

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter((self.A, self.B, self.C, self.D))


def _segment_in_region(smap: SchedulingMap, x: np.ndarray, x_star: np.ndarray) -> bool:
    # boxes are convex, so the endpoints decide
    return smap.region.contains(x) and smap.region.contains(x_star)


def path_averaged_matrices(
    ctrl: DifferentialController,
    smap: SchedulingMap,
    x,
    x_star,
    order: Optional[int] = None,
) -> PathMatrices:
    """Controller matrices integrated along the segment from ``x_star`` to ``x``."""
    x, x_star = _vec(x), _vec(x_star)
    if x.shape != x_star.shape:
        raise DimensionError("state and steady state have different dimensions")
    leaves = not _segment_in_region(smap, x, x_star)
    if ctrl.is_constant:
        rho = smap.polytope.midpoint
    else:
        rho = segment_average(smap, x, x_star, order)
    a, b, c, d = ctrl.at(rho)
    return PathMatrices(a, b, c, d, rho, leaves)


def quadrature_matrices(
    ctrl: DifferentialController,
    smap: SchedulingMap,
    x,
    x_star,
    order: int = 64,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Direct Gauss-Legendre quadrature of the matrix-valued path integrals."""
    x, x_star = _vec(x), _vec(x_star)
    nodes, weights = _gauss_legendre(order)
    sums = [np.zeros(fn.shape) for fn in (ctrl.A, ctrl.B, ctrl.C, ctrl.D)]
    for lam, weight in zip(nodes, weights):
        for acc, mat in zip(sums, ctrl.at(smap(x_star + lam * (x - x_star)))):
            acc += weight * mat
    return tuple(sums)


# ---------- steady-state trajectories ----------
@dataclass(eq=False)
class SteadyStateTrajectory:
    """Feasible steady state over ``horizon`` steps.

    ``x`` holds ``horizon + 1`` states; ``u`` (controller output / plant
    input) and ``y`` (controller input) hold one row per step. ``w`` and
    ``z`` are filled for generalized-plant trajectories.
    """

    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    w: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    residual: float = 0.0
    meta: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.u = np.asarray(self.u, dtype=float).reshape(len(self.u), -1)
        self.y = np.asarray(self.y, dtype=float).reshape(len(self.y), -1)
        if self.x.shape[0] != self.u.shape[0] + 1 or self.y.shape[0] != self.u.shape[0]:
            raise DimensionError(
                f"trajectory needs horizon + 1 states and horizon inputs/outputs, got "
                f"{self.x.shape[0]}, {self.u.shape[0]}, {self.y.shape[0]}"
            )

    @property
    def horizon(self) -> int:
        return int(self.u.shape[0])

    def check_index(self, k: int) -> None:
        if not 0 <= k < self.horizon:
            raise HorizonError(f"step {k} is outside the steady-state horizon {self.horizon}")

    def feasibility_residual(self, step: Callable[[np.ndarray, int], np.ndarray]) -> float:
        """``max_k |x*_{k+1} - step(x*_k, k)|``."""
        worst = 0.0
        for k in range(self.horizon):
            worst = max(worst, float(np.max(np.abs(self.x[k + 1] - step(self.x[k], k)), initial=0.0)))
        return worst

    def to_csv(self, path: Path | str) -> Path:
        n_x, n_u, n_y = self.x.shape[1], self.u.shape[1], self.y.shape[1]
        header = ["k"]
        header += [f"x{i + 1}" for i in range(n_x)]
        header += [f"u{i + 1}" for i in range(n_u)]
        header += [f"y{i + 1}" for i in range(n_y)]
        rows: List[list] = []
        for k in range(self.horizon + 1):
            row: list = [k, *map(float, self.x[k])]
            if k < self.horizon:
                row += [*map(float, self.u[k]), *map(float, self.y[k])]
            else:
                row += [""] * (n_u + n_y)
            rows.append(row)
        return write_csv(path, header, rows)

    @classmethod
    def from_csv(cls, path: Path | str) -> "SteadyStateTrajectory":
        with Path(path).open(encoding="utf-8", newline="") as handle:
            reader = csv.reader(handle)
            header = next(reader)
            rows = list(reader)
        cols = lambda prefix: [i for i, name in enumerate(header) if name.startswith(prefix)]
        xs, us, ys = cols("x"), cols("u"), cols("y")
        x = np.array([[float(row[i]) for i in xs] for row in rows])
        u = np.array([[float(row[i]) for i in us] for row in rows[:-1]])
        y = np.array([[float(row[i]) for i in ys] for row in rows[:-1]])
        return cls(x, u.reshape(len(rows) - 1, len(us)), y.reshape(len(rows) - 1, len(ys)))


def _plant_residual(plant: NonlinearPlant, traj: SteadyStateTrajectory) -> float:
    return traj.feasibility_residual(lambda x, k: plant.step(x, traj.u[k]))


def _newton_equilibrium(plant: NonlinearPlant, r: np.ndarray, guess: Optional[np.ndarray]):
    n_x, n_u = plant.n_x, plant.n_in
    z = np.zeros(n_x + n_u) if guess is None else _vec(guess).copy()
    if z.shape[0] != n_x + n_u:
        raise DimensionError(f"initial guess needs {n_x + n_u} entries (state, input)")

    def residual(z):
        x, u = z[:n_x], z[n_x:]
        return np.concatenate([plant.step(x, u) - x, plant.observe(x, u) - r])

    res = residual(z)
    for iteration in range(NEWTON_MAX_ITER):
        if np.max(np.abs(res)) <= NEWTON_TOL:
            logger.debug("Newton equilibrium converged in %d iterations", iteration)
            return z[:n_x], z[n_x:]
        a, b, c, d = _jacobians(plant, z[:n_x], z[n_x:])
        jac = np.block([[a - np.eye(n_x), b], [c, d]])
        step = np.linalg.lstsq(jac, -res, rcond=None)[0]
        alpha, norm = 1.0, np.linalg.norm(res)
        while alpha > 1e-8:
            trial = residual(z + alpha * step)
            if np.linalg.norm(trial) < norm:
                break
            alpha /= 2
        z, res = z + alpha * step, trial
    raise ConvergenceError(
        f"equilibrium Newton iteration for {plant.name} did not converge in {NEWTON_MAX_ITER} iterations "
        f"(residual {np.max(np.abs(res)):.3e})"
    )


def steady_state_for_constant_reference(
    plant: NonlinearPlant,
    r,
    horizon: int,
    initial_guess=None,
) -> SteadyStateTrajectory:
    """Constant steady state with output ``r`` held for ``horizon`` steps.

    Uses the plant's equilibrium map when it has one and a damped Newton
    iteration on ``f(x, u) = x``, ``h(x, u) = r`` otherwise.
    """

    if horizon < 1:
        raise HorizonError("horizon must be at least 1")
    r = _vec(r)
    if plant.equilibrium is not None:
        x_star, u_star = plant.equilibrium(float(r[0]) if r.size == 1 else r)
    else:
        x_star, u_star = _newton_equilibrium(plant, r, initial_guess)
    x_star, u_star = _vec(x_star), _vec(u_star)
    y_star = plant.observe(x_star, u_star)
    traj = SteadyStateTrajectory(
        np.tile(x_star, (horizon + 1, 1)),
        np.tile(u_star, (horizon, 1)),
        np.tile(y_star, (horizon, 1)),
        w=np.tile(r, (horizon, 1)),
        meta={"reference": "constant"},
    )
    traj.residual = _plant_residual(plant, traj)
    return traj


def steady_state_for_reference_sequence(plant: NonlinearPlant, r, horizon: int) -> SteadyStateTrajectory:
    """Steady state following the reference sequence ``r``.

    The plant's inversion map needs the reference two steps ahead, so ``r``
    must hold at least ``horizon + 2`` samples.
    """

    r = np.asarray(r, dtype=float)
    r = r.reshape(len(r), -1)
    if horizon < 1:
        raise HorizonError("horizon must be at least 1")
    if r.shape[0] < horizon + 2:
        raise HorizonError(
            f"reference has {r.shape[0]} samples; {horizon + 2} are needed for horizon {horizon}"
        )
    r = r[: horizon + 2]
    if plant.inversion is None:
        if np.all(r == r[0]):
            return steady_state_for_constant_reference(plant, r[0], horizon)
        raise StructureError(f"plant {plant.name} has no inversion map for reference sequences")
    xs, us = plant.inversion(r[:, 0] if r.shape[1] == 1 else r)
    xs = np.asarray(xs, dtype=float)[: horizon + 1]
    us = np.asarray(us, dtype=float).reshape(-1, plant.n_in)[:horizon]
    ys = np.array([plant.observe(x, u) for x, u in zip(xs[:horizon], us)])
    traj = SteadyStateTrajectory(xs, us, ys, w=r[:horizon], meta={"reference": "sequence"})
    traj.residual = _plant_residual(plant, traj)
    if traj.residual > FEASIBILITY_TOL:
        logger.warning(
            "Steady-state trajectory of %s violates the dynamics by %.3e", plant.name, traj.residual
        )
    return traj


def lift_steady_state(gp, trajectory: SteadyStateTrajectory, reference=None) -> SteadyStateTrajectory:
    """Extend a plant-level steady state to generalized-plant coordinates.

    Weight states start at rest, ``w* = r`` and the controller input is the
    measured tracking error ``r - y*``.
    """

    horizon = trajectory.horizon
    if reference is None:
        reference = trajectory.w if trajectory.w is not None else trajectory.y
    w = np.asarray(reference, dtype=float).reshape(-1, gp.n_w)
    if w.shape[0] < horizon:
        raise HorizonError(f"reference covers {w.shape[0]} steps, trajectory has {horizon}")
    w = w[:horizon]
    x = np.zeros((horizon + 1, gp.n_x))
    x[:, : gp.n_xp] = trajectory.x
    for k in range(horizon):
        x[k + 1, gp.n_xp :] = gp.step(x[k], w[k], trajectory.u[k])[gp.n_xp :]
    y = np.array([gp.measurement(x[k], w[k]) for k in range(horizon)])
    z = np.array([gp.performance(x[k], w[k], trajectory.u[k]) for k in range(horizon)])
    lifted = SteadyStateTrajectory(x, trajectory.u, y, w=w, z=z, meta=dict(trajectory.meta))
    lifted.residual = lifted.feasibility_residual(lambda xk, k: gp.step(xk, w[k], trajectory.u[k]))
    return lifted


# ---------- runtime ----------
class IncrementalControllerRuntime:
    """Runnable primal controller around a generalized-plant steady state."""

    kind = "incremental"

    def __init__(
        self,
        controller: DifferentialController,
        scheduling: SchedulingMap,
        trajectory: SteadyStateTrajectory,
        order: Optional[int] = None,
        initial_state=None,
    ) -> None:
        if trajectory.u.shape[1] != controller.n_out or trajectory.y.shape[1] != controller.n_in:
            raise DimensionError("steady-state trajectory does not match the controller channels")
        self.controller = controller
        self.scheduling = scheduling
        self.trajectory = trajectory
        self.order = order or get_config().quadrature_order
        self._initial = (
            np.zeros(controller.n_xc) if initial_state is None else _vec(initial_state).copy()
        )
        self.state = self._initial.copy()
        self.region_exits = 0

    def reset(self) -> None:
        self.state = self._initial.copy()
        self.region_exits = 0

    def matrices(self, k: int, x) -> PathMatrices:
        self.trajectory.check_index(k)
        return path_averaged_matrices(self.controller, self.scheduling, x, self.trajectory.x[k], self.order)

    def step(self, k: int, u_c, x) -> np.ndarray:
        mats = self.matrices(k, x)
        if mats.leaves_region:
            self.region_exits += 1
        du = _vec(u_c) - self.trajectory.y[k]
        y_c = self.trajectory.u[k] + mats.C @ self.state + mats.D @ du
        self.state = mats.A @ self.state + mats.B @ du
        return y_c

    def path_output(self, k: int, lam: float, u_c, x) -> np.ndarray:
        """Controller output along the segment, integrated from 0 to ``lam``.

        At ``lam = 1`` this is the output :meth:`step` emits; its derivative
        in ``lam`` at ``lam = 1`` is the differential controller's output at
        ``psi(x)``. The controller state is not advanced.
        """

        self.trajectory.check_index(k)
        x_star = self.trajectory.x[k]
        du = _vec(u_c) - self.trajectory.y[k]
        if lam == 0.0:
            return self.trajectory.u[k].copy()
        rho = segment_average(self.scheduling, x, x_star, self.order, upto=lam)
        c, d = self.controller.C.evaluate(rho), self.controller.D.evaluate(rho)
        return self.trajectory.u[k] + lam * (c @ self.state + d @ du)


def controller_step(rt: IncrementalControllerRuntime, k: int, u_c, x) -> np.ndarray:
    """Emit ``y_c`` at step ``k`` and advance the controller state."""
    return rt.step(k, u_c, x)


__all__ = [
    "IncrementalControllerRuntime",
    "PathMatrices",
    "SteadyStateTrajectory",
    "controller_step",
    "lift_steady_state",
    "path_averaged_matrices",
    "quadrature_matrices",
    "segment_average",
    "steady_state_for_constant_reference",
    "steady_state_for_reference_sequence",
]
