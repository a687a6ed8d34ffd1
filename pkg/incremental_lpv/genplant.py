"""Generalized plants: a nonlinear plant wrapped in LTI weighting filters.

Topology (two-block mixed sensitivity)::

    e  = r - y_plant
    z1 = [W_e M] e          z2 = W_u u          y_meas = e

Only the plant carries nonlinearity; its dynamics must be affine in ``u`` and
its output linear in the state, so that the assembled plant has constant
input and measurement matrices.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

import control
import numpy as np

from .differential import (
    EmbeddingReport,
    NonlinearPlant,
    Region,
    SchedulingMap,
    _jacobians,
    halton_box,
    validate_embedding,
)
from .errors import DimensionError, StructureError
from .lpv_model import AffineLpvStateSpace, affine_block, affine_product

logger = logging.getLogger(__name__)

TOPOLOGY = "mixed-sensitivity: z1=[We*M](r-y), z2=Wu*u, y_meas=r-y"
WeightLike = Union[control.TransferFunction, control.StateSpace, float, int]


def _as_tf(weight: WeightLike) -> control.TransferFunction:
    if isinstance(weight, control.TransferFunction):
        return weight
    if isinstance(weight, control.StateSpace):
        return control.ss2tf(weight)
    return control.tf([float(weight)], [1.0], True)


def _coefficients(tf: control.TransferFunction) -> Tuple[np.ndarray, np.ndarray]:
    num, den = control.tfdata(tf)
    num = np.trim_zeros(np.atleast_1d(np.asarray(num[0][0], dtype=float)), "f")
    den = np.trim_zeros(np.atleast_1d(np.asarray(den[0][0], dtype=float)), "f")
    return (num if num.size else np.zeros(1)), den


@dataclass(frozen=True)
class WeightingScheme:
    """LTI weights of the tracking design.

    ``epsilon`` is the radial distance by which unit-circle poles are moved
    inward before synthesis.
    """

    error_weight: WeightLike
    reference_model: WeightLike
    control_weight: WeightLike
    epsilon: float = 1e-4

    @classmethod
    def defaults(
        cls,
        alpha: float = 1 / math.pi,
        epsilon: float = 1e-4,
        error_gain: float = 0.2,
        error_zero: float = 0.5,
        control_gain: float = 0.2,
    ) -> "WeightingScheme":
        """``W_e = g(q - z)/(q + alpha)``, ``M = (q + alpha)/(q - 1)``, static ``W_u``."""
        w_e = control.tf([error_gain, -error_gain * error_zero], [1.0, alpha], True)
        m = control.tf([1.0, alpha], [1.0, -1.0], True)
        return cls(w_e, m, control_gain, epsilon)

    @classmethod
    def unit(cls) -> "WeightingScheme":
        return cls(1.0, 1.0, 1.0, 0.0)


def _trim(poly: np.ndarray, tol: float) -> np.ndarray:
    nonzero = np.flatnonzero(np.abs(poly) > tol)
    return poly[nonzero[0] :] if nonzero.size else np.zeros(0)


def poly_gcd(a, b, tol: float = 1e-10) -> np.ndarray:
    """Monic greatest common divisor of two coefficient vectors (Euclid on ``np.polydiv``)."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = tol * max(1.0, float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)))
    a, b = _trim(a, scale), _trim(b, scale)
    if not a.size or not b.size:
        return np.ones(1)
    while b.size:
        _, remainder = np.polydiv(a, b)
        a, b = b, _trim(np.atleast_1d(remainder), scale)
    return a / a[0]


def _divide(poly: np.ndarray, factor: np.ndarray) -> np.ndarray:
    quotient, _ = np.polydiv(poly, factor)
    return np.atleast_1d(quotient)


def weight_cascade(error_weight: WeightLike, reference_model: WeightLike, tol: float = 1e-10):
    """``W_e * M`` with the factors shared across the two weights divided out.

    The cancellation runs on the coefficient vectors before the product is
    formed, so a ``(q + alpha)`` common to ``W_e``'s denominator and ``M``'s
    numerator never reaches the realization.
    """
    n_e, d_e = _coefficients(_as_tf(error_weight))
    n_m, d_m = _coefficients(_as_tf(reference_model))
    g_em, g_me = poly_gcd(n_e, d_m, tol), poly_gcd(n_m, d_e, tol)
    num = np.polymul(_divide(n_e, g_em), _divide(n_m, g_me))
    den = np.polymul(_divide(d_e, g_me), _divide(d_m, g_em))
    if g_em.size > 1 or g_me.size > 1:
        logger.debug("Cancelled common factors %s and %s in the weight cascade", g_em.tolist(), g_me.tolist())
    return control.tf(num, den, True)


def perturb_unit_circle_poles(
    tf: control.TransferFunction, epsilon: float, tol: float = 1e-9
) -> Tuple[control.TransferFunction, List[Tuple[complex, complex]]]:
    """Move poles on the unit circle radially inward by ``epsilon``.

    Returns the new transfer function and the ``(old, new)`` pole pairs.
    """

    num, den = _coefficients(tf)
    if den.size == 1 or epsilon == 0:
        return tf, []
    poles = np.roots(den)
    moved: List[Tuple[complex, complex]] = []
    new_poles = []
    for pole in poles:
        if abs(abs(pole) - 1.0) < tol:
            new = pole * (1.0 - epsilon) / abs(pole)
            moved.append((complex(pole), complex(new)))
            new_poles.append(new)
        else:
            new_poles.append(pole)
    if not moved:
        return tf, []
    new_den = den[0] * np.poly(new_poles)
    new_den = np.real_if_close(new_den, tol=1000)
    return control.tf(num, np.real(new_den), True), moved


def unit_circle_poles(tf: control.TransferFunction, tol: float = 1e-9) -> List[complex]:
    _, den = _coefficients(tf)
    if den.size == 1:
        return []
    return [complex(p) for p in np.roots(den) if abs(abs(p) - 1.0) < tol]


def realize(weight: WeightLike, channels: int = 1):
    """State-space matrices of a SISO weight, repeated on ``channels`` channels."""
    tf = _as_tf(weight)
    num, den = _coefficients(tf)
    if num.size > den.size:
        raise DimensionError("weight is not proper")
    if den.size == 1:
        a = np.zeros((0, 0))
        b = np.zeros((0, 1))
        c = np.zeros((1, 0))
        d = np.array([[num[0] / den[0]]])
    else:
        ss = control.tf2ss(tf)
        a, b, c, d = (np.asarray(m, dtype=float) for m in (ss.A, ss.B, ss.C, ss.D))
    eye = np.eye(channels)
    return np.kron(eye, a), np.kron(eye, b), np.kron(eye, c), np.kron(eye, d)


@dataclass(frozen=True, eq=False)
class _WeightMatrices:
    a_e: np.ndarray
    b_e: np.ndarray
    c_e: np.ndarray
    d_e: np.ndarray
    a_u: np.ndarray
    b_u: np.ndarray
    c_u: np.ndarray
    d_u: np.ndarray
    cascade: control.TransferFunction
    moved: List[Tuple[complex, complex]]
    warnings: List[str]


def _realize_weights(weights: WeightingScheme, n_y: int, n_u: int) -> _WeightMatrices:
    warnings: List[str] = []
    cascade = weight_cascade(weights.error_weight, weights.reference_model)
    cascade, moved = perturb_unit_circle_poles(cascade, weights.epsilon)
    remaining = unit_circle_poles(cascade)
    if remaining:
        msg = f"error weight keeps poles on the unit circle: {remaining}"
        warnings.append(msg)
        logger.warning("%s", msg)
    control_tf = _as_tf(weights.control_weight)
    control_tf, moved_u = perturb_unit_circle_poles(control_tf, weights.epsilon)
    a_e, b_e, c_e, d_e = realize(cascade, n_y)
    a_u, b_u, c_u, d_u = realize(control_tf, n_u)
    return _WeightMatrices(a_e, b_e, c_e, d_e, a_u, b_u, c_u, d_u, cascade, moved + moved_u, warnings)


def generalized_lpv_model(
    plant_lpv: AffineLpvStateSpace,
    weights: WeightingScheme,
    input_name: str = "u",
    output_name: str = "y",
) -> AffineLpvStateSpace:
    """Weighted LPV model with channels ``(w, u)`` and ``(z, y)``.

    ``plant_lpv`` may embed either the differential or the primal plant; its
    ``input_name`` channel is the control input and its ``output_name``
    channel the tracked output.
    """

    n_u = plant_lpv.channel_size(input_name)
    n_y = plant_lpv.channel_size(output_name)
    if plant_lpv.n_in != n_u:
        raise StructureError("plant models for weighting may only have the control input")
    d_p = plant_lpv.block("D", output_name, input_name)
    if not d_p.is_constant or np.any(d_p.constant):
        raise StructureError("plant output has direct feedthrough from u")
    wm = _realize_weights(weights, n_y, n_u)
    return _assemble(plant_lpv.A, plant_lpv.B, plant_lpv.block("C", output_name), wm, plant_lpv)


def _assemble(a_p, b_p, c_p, wm: _WeightMatrices, plant_lpv: AffineLpvStateSpace) -> AffineLpvStateSpace:
    n_rho = plant_lpv.n_rho
    n_p, n_e, n_w = plant_lpv.n_x, wm.a_e.shape[0], wm.a_u.shape[0]
    n_y, n_u = c_p.shape[0], b_p.shape[1]
    n_z1, n_z2 = wm.c_e.shape[0], wm.c_u.shape[0]
    z = np.zeros
    A = affine_block(
        [
            [a_p, z((n_p, n_e)), z((n_p, n_w))],
            [affine_product(-wm.b_e, c_p), wm.a_e, z((n_e, n_w))],
            [z((n_w, n_p)), z((n_w, n_e)), wm.a_u],
        ],
        n_rho,
    )
    B = affine_block(
        [
            [z((n_p, n_y)), b_p],
            [wm.b_e, z((n_e, n_u))],
            [z((n_w, n_y)), wm.b_u],
        ],
        n_rho,
    )
    C = affine_block(
        [
            [affine_product(-wm.d_e, c_p), wm.c_e, z((n_z1, n_w))],
            [z((n_z2, n_p)), z((n_z2, n_e)), wm.c_u],
            [-c_p, z((n_y, n_e)), z((n_y, n_w))],
        ],
        n_rho,
    )
    D = affine_block(
        [
            [wm.d_e, z((n_z1, n_u))],
            [z((n_z2, n_y)), wm.d_u],
            [np.eye(n_y), z((n_y, n_u))],
        ],
        n_rho,
    )
    return AffineLpvStateSpace(
        A,
        B,
        C,
        D,
        plant_lpv.polytope,
        inputs=(("w", n_y), ("u", n_u)),
        outputs=(("z", n_z1 + n_z2), ("y", n_y)),
    )


def _linear_structure(plant: NonlinearPlant, samples: int = 64, tol: float = 1e-9):
    """Extract ``B_u`` and ``C_p`` and check ``f(x,u) = f(x,0) + B_u u``, ``h(x,u) = C_p x``."""
    if len(plant.inputs) != 1 or len(plant.outputs) != 1 or plant.n_in == 0:
        raise StructureError("plants for weighting need one input channel u and one output channel y")
    n_x, n_u, n_y = plant.n_x, plant.n_in, plant.n_out
    zero_x, zero_u = np.zeros(n_x), np.zeros(n_u)
    f00 = plant.step(zero_x, zero_u)
    b_u = np.column_stack([plant.step(zero_x, e) - f00 for e in np.eye(n_u)]).reshape(n_x, n_u)
    c_p = np.column_stack([plant.observe(e, zero_u) for e in np.eye(n_x)]).reshape(n_y, n_x)
    lower = np.concatenate([plant.region.lower, plant.input_region.lower])
    upper = np.concatenate([plant.region.upper, plant.input_region.upper])
    for point in halton_box(lower, upper, samples):
        x, u = point[:n_x], point[n_x:]
        fx0 = plant.step(x, zero_u)
        scale = max(1.0, float(np.max(np.abs(fx0))))
        if np.max(np.abs(plant.step(x, u) - fx0 - b_u @ u)) > tol * scale:
            raise StructureError(f"dynamics of {plant.name} are not affine in u with a constant input matrix")
        if np.max(np.abs(plant.observe(x, u) - c_p @ x)) > tol * max(1.0, float(np.max(np.abs(x)))):
            raise StructureError(f"output map of {plant.name} is not linear in the state")
    return b_u, c_p


@dataclass(frozen=True, eq=False)
class GeneralizedPlant:
    """Weighted nonlinear plant ``x+ = f(x) + B_w w + B_u u``.

    State ordering is ``(x_plant, x_error_weight, x_control_weight)``. The
    exogenous input ``w`` is the reference ``r``.
    """

    plant: NonlinearPlant
    weights: WeightingScheme
    b_u_plant: np.ndarray
    c_plant: np.ndarray
    matrices: _WeightMatrices
    lpv: AffineLpvStateSpace
    embedding_report: Optional[EmbeddingReport] = None
    provenance: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_xp(self) -> int:
        return self.plant.n_x

    @property
    def n_x(self) -> int:
        return self.lpv.n_x

    @property
    def n_w(self) -> int:
        return self.lpv.channel_size("w")

    @property
    def n_u(self) -> int:
        return self.lpv.channel_size("u")

    @property
    def n_z(self) -> int:
        return self.lpv.channel_size("z")

    @property
    def n_y(self) -> int:
        return self.lpv.channel_size("y")

    def _const(self, matrix: str, out: Optional[str] = None, inp: Optional[str] = None) -> np.ndarray:
        return self.lpv.block(matrix, out, inp).constant

    @property
    def B_w(self) -> np.ndarray:  # noqa: N802
        return self._const("B", inp="w")

    @property
    def B_u(self) -> np.ndarray:  # noqa: N802
        return self._const("B", inp="u")

    @property
    def C_y(self) -> np.ndarray:  # noqa: N802
        return self._const("C", out="y")

    @property
    def D_yw(self) -> np.ndarray:  # noqa: N802
        return self._const("D", "y", "w")

    @property
    def D_zw(self) -> np.ndarray:  # noqa: N802
        return self._const("D", "z", "w")

    @property
    def D_zu(self) -> np.ndarray:  # noqa: N802
        return self._const("D", "z", "u")

    def split(self, x) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        n_e = self.matrices.a_e.shape[0]
        return x[: self.n_xp], x[self.n_xp : self.n_xp + n_e], x[self.n_xp + n_e :]

    def drift(self, x) -> np.ndarray:
        """Nonlinear part ``f(x)`` of the state update."""
        xp, xe, xu = self.split(x)
        fp = self.plant.step(xp, np.zeros(self.n_u))
        fe = self.matrices.a_e @ xe - self.matrices.b_e @ (self.c_plant @ xp)
        fu = self.matrices.a_u @ xu
        return np.concatenate([fp, fe, fu])

    def step(self, x, w, u) -> np.ndarray:
        return self.drift(x) + self.B_w @ np.atleast_1d(w) + self.B_u @ np.atleast_1d(u)

    def performance(self, x, w, u) -> np.ndarray:
        xp, xe, xu = self.split(x)
        z1 = self.matrices.c_e @ xe - self.matrices.d_e @ (self.c_plant @ xp)
        z2 = self.matrices.c_u @ xu
        return np.concatenate([z1, z2]) + self.D_zw @ np.atleast_1d(w) + self.D_zu @ np.atleast_1d(u)

    def measurement(self, x, w) -> np.ndarray:
        return self.C_y @ np.asarray(x, dtype=float) + self.D_yw @ np.atleast_1d(w)

    def plant_output(self, x) -> np.ndarray:
        return self.c_plant @ self.split(x)[0]

    def scheduling_map(self, smap: Optional[SchedulingMap] = None) -> SchedulingMap:
        """A plant-state scheduling map (the plant's own by default) lifted to the generalized state."""
        smap = smap or self.plant.scheduling
        if smap is None:
            raise StructureError(f"plant {self.plant.name} has no scheduling map")
        n_xp, n_extra = self.n_xp, self.n_x - self.n_xp
        region = Region(
            np.concatenate([smap.region.lower, -np.ones(n_extra)]),
            np.concatenate([smap.region.upper, np.ones(n_extra)]),
            smap.region.bounded,
        )
        average = None
        if smap.segment_average is not None:
            average = lambda x, xs: smap.segment_average(x[:n_xp], xs[:n_xp])
        return SchedulingMap(lambda x: smap.psi(x[:n_xp]), smap.polytope, region, average, smap.name)

    def as_nonlinear_plant(self) -> NonlinearPlant:
        """The generalized plant as a generic plant with inputs ``(w, u)``."""
        n_w, n_u = self.n_w, self.n_u

        def dynamics(x, v):
            return self.step(x, v[:n_w], v[n_w:])

        def output(x, v):
            return np.concatenate([self.performance(x, v[:n_w], v[n_w:]), self.measurement(x, v[:n_w])])

        def dynamics_jacobian(x, v):
            a_p = _jacobians(self.plant, self.split(x)[0], np.zeros(n_u))[0]
            a = np.array(self.lpv.A.constant, copy=True)
            a[: self.n_xp, : self.n_xp] = a_p
            return a, self.lpv.B.constant

        def output_jacobian(x, v):
            return self.lpv.C.constant, self.lpv.D.constant

        region = self.scheduling_map().region if self.plant.scheduling else None
        return NonlinearPlant(
            name=f"{self.plant.name}-generalized",
            n_x=self.n_x,
            inputs=self.lpv.inputs,
            outputs=self.lpv.outputs,
            dynamics=dynamics,
            output=output,
            dynamics_jacobian=dynamics_jacobian,
            output_jacobian=output_jacobian,
            region=region,
            scheduling=self.scheduling_map() if self.plant.scheduling else None,
            embedding=self.lpv,
        )


def build_generalized_plant(
    plant: NonlinearPlant,
    weights: WeightingScheme,
    validation_samples: Optional[int] = None,
) -> GeneralizedPlant:
    """Wrap ``plant`` in ``weights`` and embed the differential form.

    Parameters
    ----------
    plant:
        Nonlinear plant with a single input channel (the control input) and a
        single output channel. It must carry ``scheduling`` and ``embedding``.
    weights:
        LTI weighting filters.
    validation_samples:
        Samples for the embedding validation (toolkit default when omitted).
    """

    if plant.scheduling is None or plant.embedding is None:
        raise StructureError(f"plant {plant.name} carries no LPV embedding of its differential form")
    b_u, c_p = _linear_structure(plant)
    report = validate_embedding(plant, plant.scheduling, plant.embedding, validation_samples)
    if not report.passed:
        raise StructureError(
            f"embedding of {plant.name} fails validation: A error {report.max_a_error:.3e}, "
            f"C error {report.max_c_error:.3e}"
        )
    wm = _realize_weights(weights, c_p.shape[0], b_u.shape[1])
    embedding = plant.embedding
    lpv = _assemble(embedding.A, embedding.B, embedding.C, wm, embedding)
    provenance = {
        "topology": TOPOLOGY,
        "epsilon": weights.epsilon,
        "moved_poles": [[str(old), str(new)] for old, new in wm.moved],
        "cascade": {
            "num": _coefficients(wm.cascade)[0].tolist(),
            "den": _coefficients(wm.cascade)[1].tolist(),
        },
        "warnings": list(wm.warnings),
        "states": {"plant": plant.n_x, "error_weight": wm.a_e.shape[0], "control_weight": wm.a_u.shape[0]},
    }
    logger.info(
        "Generalized plant for %s: %d states (%d plant + %d weight)",
        plant.name,
        lpv.n_x,
        plant.n_x,
        lpv.n_x - plant.n_x,
    )
    return GeneralizedPlant(plant, weights, b_u, c_p, wm, lpv, report, provenance)


def differential_generalized_plant(gp: GeneralizedPlant) -> AffineLpvStateSpace:
    """Affine LPV embedding of the generalized plant's differential form."""
    return gp.lpv


__all__ = [
    "GeneralizedPlant",
    "TOPOLOGY",
    "WeightingScheme",
    "build_generalized_plant",
    "differential_generalized_plant",
    "generalized_lpv_model",
    "perturb_unit_circle_poles",
    "realize",
    "unit_circle_poles",
    "poly_gcd",
    "weight_cascade",
]
