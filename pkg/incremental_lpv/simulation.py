"""Closed-loop simulation of generalized plants under controller runtimes."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Protocol, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from lpv_utils import atomic_write_text, write_csv

from .differential import NonlinearPlant, SchedulingMap, _vec
from .errors import DimensionError, HorizonError
from .genplant import GeneralizedPlant
from .synthesis import DifferentialController

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e12
CONVERGENCE_TOL = 1e-3
CONVERGENCE_WINDOW = 50
LIMIT_CYCLE_FRACTION = 0.25
LIMIT_CYCLE_AMPLITUDE = 0.05
LIMIT_CYCLE_OFFSET = 0.01


class ReferenceGenerator(BaseModel):
    """Reference signal ``r_k``.

    ``sinusoid`` yields ``amplitude * sin(frequency * k + phase) + offset``.
    """

    model_config = ConfigDict(extra="forbid")

    kind: Literal["constant", "sinusoid", "sequence"] = "constant"
    level: float = 1.0
    amplitude: float = 1.0
    frequency: float = Field(default=math.pi / 8, description="Radians per step")
    phase: float = 0.0
    offset: float = 0.0
    values: Optional[List[float]] = None
    horizon: Optional[int] = Field(default=None, ge=1)

    @classmethod
    def constant(cls, level: float, horizon: Optional[int] = None) -> "ReferenceGenerator":
        return cls(kind="constant", level=level, horizon=horizon)

    @classmethod
    def sinusoid(cls, amplitude: float = 1.0, frequency: float = math.pi / 8, offset: float = 2.5, horizon=None):
        return cls(kind="sinusoid", amplitude=amplitude, frequency=frequency, offset=offset, horizon=horizon)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def sequence(self, n: Optional[int] = None) -> np.ndarray:
        n = n if n is not None else self.horizon
        if n is None:
            raise HorizonError("reference length is undefined; pass n or set horizon")
        k = np.arange(n, dtype=float)
        if self.kind == "constant":
            return np.full(n, float(self.level))
        if self.kind == "sinusoid":
            return self.amplitude * np.sin(self.frequency * k + self.phase) + self.offset
        values = np.asarray(self.values or [], dtype=float)
        if values.shape[0] < n:
            raise HorizonError(f"reference sequence has {values.shape[0]} samples, {n} requested")
        return values[:n]

    def label(self) -> str:
        if self.kind == "constant":
            return f"r={self.level:g}"
        if self.kind == "sinusoid":
            return f"r={self.amplitude:g}sin({self.frequency:.4g}k)+{self.offset:g}"
        return "r=sequence"


class ControllerRuntime(Protocol):
    kind: str
    state: np.ndarray

    def step(self, k: int, u_c, x) -> np.ndarray:
        ...

    def reset(self) -> None:
        ...


class StandardLpvRuntime:
    """LPV controller scheduled on ``psi_s(x_k)`` without deviation coordinates."""

    kind = "standard"

    def __init__(
        self,
        controller: DifferentialController,
        scheduling: SchedulingMap,
        feedforward: Optional[np.ndarray] = None,
        initial_state=None,
    ) -> None:
        self.controller = controller
        self.scheduling = scheduling
        self.feedforward = None if feedforward is None else np.asarray(feedforward, dtype=float).reshape(
            -1, controller.n_out
        )
        self._initial = np.zeros(controller.n_xc) if initial_state is None else _vec(initial_state).copy()
        self.state = self._initial.copy()
        self.violations = 0

    def reset(self) -> None:
        self.state = self._initial.copy()
        self.violations = 0

    def schedule(self, x) -> np.ndarray:
        rho = self.scheduling(x)
        polytope = self.controller.polytope
        if not polytope.contains(rho):
            if self.violations == 0:
                logger.warning("Scheduling %s left the polytope; clamping", rho.tolist())
            self.violations += 1
            rho = polytope.project(rho)
        return rho

    def step(self, k: int, u_c, x) -> np.ndarray:
        a, b, c, d = self.controller.at(self.schedule(x))
        u_c = _vec(u_c)
        y_c = c @ self.state + d @ u_c
        if self.feedforward is not None:
            if k >= self.feedforward.shape[0]:
                raise HorizonError(f"feedforward covers {self.feedforward.shape[0]} steps, step {k} requested")
            y_c = y_c + self.feedforward[k]
        self.state = a @ self.state + b @ u_c
        return y_c


def standard_lpv_runtime(
    ctrl: DifferentialController,
    smap: SchedulingMap,
    feedforward: Optional[np.ndarray] = None,
) -> StandardLpvRuntime:
    return StandardLpvRuntime(ctrl, smap, feedforward)


class _NonlinearLoop:
    """Generic plant with inputs ``(w, u)`` and outputs ``(z, y)`` in loop form."""

    def __init__(self, plant: NonlinearPlant) -> None:
        names_in = [name for name, _ in plant.inputs]
        names_out = [name for name, _ in plant.outputs]
        if names_in != ["w", "u"] or names_out != ["z", "y"]:
            raise DimensionError("plants for simulation need inputs (w, u) and outputs (z, y)")
        self.plant = plant
        self.n_x = plant.n_x
        self.n_w = plant.inputs[0][1]
        self.n_u = plant.inputs[1][1]
        self.n_z = plant.outputs[0][1]

    def _v(self, w, u) -> np.ndarray:
        return np.concatenate([np.atleast_1d(w), np.atleast_1d(u)]).astype(float)

    def step(self, x, w, u) -> np.ndarray:
        return self.plant.step(x, self._v(w, u))

    def measurement(self, x, w) -> np.ndarray:
        return self.plant.observe(x, self._v(w, np.zeros(self.n_u)))[self.n_z :]

    def performance(self, x, w, u) -> np.ndarray:
        return self.plant.observe(x, self._v(w, u))[: self.n_z]

    def plant_output(self, x) -> np.ndarray:
        return self.measurement(x, np.zeros(self.n_w))


@dataclass(eq=False)
class SimTrace:
    x: np.ndarray
    xc: np.ndarray
    u: np.ndarray
    y: np.ndarray
    r: np.ndarray
    z: np.ndarray
    y_meas: np.ndarray
    diverged: bool = False
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return int(self.u.shape[0])

    def tracking_error(self) -> np.ndarray:
        return np.abs(self.y - self.r).max(axis=1) if self.steps else np.zeros(0)

    def header(self) -> List[str]:
        parts = [("x", self.x), ("xc", self.xc), ("u", self.u), ("y", self.y), ("r", self.r), ("z", self.z)]
        return ["k"] + [f"{prefix}{i + 1}" for prefix, arr in parts for i in range(arr.shape[1])]

    def rows(self):
        for k in range(self.steps):
            yield [
                k,
                *map(float, self.x[k]),
                *map(float, self.xc[k]),
                *map(float, self.u[k]),
                *map(float, self.y[k]),
                *map(float, self.r[k]),
                *map(float, self.z[k]),
            ]

    def to_csv(self, path: Path | str) -> Path:
        """Write the trace and a ``.meta.json`` sidecar next to it."""
        path = Path(path)
        write_csv(path, self.header(), self.rows())
        meta = {**self.metadata, "steps": self.steps, "diverged": self.diverged}
        atomic_write_text(path.with_suffix(".meta.json"), json.dumps(meta, indent=2, sort_keys=True, default=str))
        return path

    def replay_residual(self, plant: Union[GeneralizedPlant, NonlinearPlant]) -> float:
        """Largest deviation of the recorded states from the plant equations."""
        loop = _loop(plant)
        worst = 0.0
        for k in range(self.steps):
            predicted = loop.step(self.x[k], self.r[k], self.u[k])
            worst = max(worst, float(np.max(np.abs(self.x[k + 1] - predicted))))
        return worst


def _loop(plant):
    if isinstance(plant, GeneralizedPlant):
        return plant
    return _NonlinearLoop(plant)


def simulate(
    plant: Union[GeneralizedPlant, NonlinearPlant],
    controller: ControllerRuntime,
    reference: Union[ReferenceGenerator, np.ndarray],
    x0=None,
    horizon: Optional[int] = None,
    metadata: Optional[Dict[str, Any]] = None,
) -> SimTrace:
    """Run the loop ``u_c = y_meas``, ``u = y_c`` for ``horizon`` steps.

    Parameters
    ----------
    plant:
        Generalized plant, or a generic plant with inputs ``(w, u)`` and
        outputs ``(z, y)``.
    controller:
        Runtime; it is stepped as is, so reset it between runs.
    reference:
        Reference generator or explicit sequence of ``w`` values.
    x0:
        Initial state (zero by default).
    horizon:
        Number of steps; defaults to the reference horizon.

    A non-finite or exploding state truncates the trace and sets ``diverged``.
    """

    loop = _loop(plant)
    if isinstance(reference, ReferenceGenerator):
        horizon = horizon or reference.horizon
        ref = reference.sequence(horizon)
    else:
        ref = np.asarray(reference, dtype=float)
        horizon = horizon or ref.shape[0]
        if ref.shape[0] < horizon:
            raise HorizonError(f"reference has {ref.shape[0]} samples, horizon is {horizon}")
        ref = ref[:horizon]
    if horizon is None or horizon < 1:
        raise HorizonError("horizon must be at least 1")
    ref = ref.reshape(horizon, -1)
    if ref.shape[1] != loop.n_w:
        raise DimensionError(f"reference has {ref.shape[1]} channels, plant expects {loop.n_w}")
    x = np.zeros(loop.n_x) if x0 is None else _vec(x0).copy()
    if x.shape[0] != loop.n_x:
        raise DimensionError(f"initial state has dimension {x.shape[0]}, expected {loop.n_x}")

    xs, xcs, us, ys, zs, meas = [x], [np.array(controller.state, copy=True)], [], [], [], []
    diverged = False
    for k in range(horizon):
        w = ref[k]
        y_meas = loop.measurement(x, w)
        u = np.atleast_1d(controller.step(k, y_meas, x))
        z = loop.performance(x, w, u)
        x_next = loop.step(x, w, u)
        us.append(u)
        ys.append(loop.plant_output(x))
        zs.append(z)
        meas.append(y_meas)
        if not np.all(np.isfinite(x_next)) or np.max(np.abs(x_next)) > DIVERGENCE_LIMIT:
            diverged = True
            logger.warning("Simulation diverged at step %d", k)
            for record in (us, ys, zs, meas):
                record.pop()
            break
        x = x_next
        xs.append(x)
        xcs.append(np.array(controller.state, copy=True))

    steps = len(us)
    empty = lambda n: np.zeros((0, n))
    trace = SimTrace(
        x=np.array(xs),
        xc=np.array(xcs),
        u=np.array(us) if steps else empty(loop.n_u),
        y=np.array(ys) if steps else empty(ref.shape[1]),
        r=ref[:steps],
        z=np.array(zs) if steps else empty(loop.n_z),
        y_meas=np.array(meas) if steps else empty(ref.shape[1]),
        diverged=diverged,
        metadata={"controller": getattr(controller, "kind", "unknown"), **(metadata or {})},
    )
    logger.debug("Simulated %d steps with %s controller", steps, trace.metadata["controller"])
    return trace


def converged(trace: SimTrace, tol: float = CONVERGENCE_TOL, window: int = CONVERGENCE_WINDOW) -> bool:
    """True when ``|y_k - r_k| <= tol`` over the trailing ``window`` steps."""
    if trace.diverged or trace.steps < window:
        return False
    return bool(np.max(trace.tracking_error()[-window:]) <= tol)


def limit_cycle(
    trace: SimTrace,
    fraction: float = LIMIT_CYCLE_FRACTION,
    amplitude: float = LIMIT_CYCLE_AMPLITUDE,
    offset: float = LIMIT_CYCLE_OFFSET,
) -> bool:
    """Sustained oscillation over the trailing ``fraction`` of the trace that misses the reference."""
    if trace.diverged or trace.steps == 0:
        return False
    start = int(math.floor(trace.steps * (1 - fraction)))
    tail_y = trace.y[start:]
    oscillation = float(np.max(tail_y.max(axis=0) - tail_y.min(axis=0)))
    mean_error = float(np.mean(np.abs(tail_y - trace.r[start:])))
    return oscillation > amplitude and mean_error > offset


__all__ = [
    "ControllerRuntime",
    "ReferenceGenerator",
    "SimTrace",
    "StandardLpvRuntime",
    "converged",
    "limit_cycle",
    "simulate",
    "standard_lpv_runtime",
]
