"""Built-in second-order example plant.

    x1+ = 0.1 x1 - x2
    x2+ = 0.9 sin(x1) + x2 + u
    y   = x1

The differential form is scheduled on ``cos(x1)`` over ``[-1, 1]``. The
standard comparator embeds the plant itself, writing ``sin(x1) = sinc(x1) x1``
with ``sinc(a) = sin(a)/a`` (``sinc(0) = 1``) over ``[-0.22, 1]``.
"""
from __future__ import annotations

import numpy as np

from .differential import NonlinearPlant, Region, SchedulingMap
from .lpv_model import AffineLpvStateSpace, AffineMatrixFunction, SchedulingPolytope

SIN_GAIN = 0.9
SINC_LOWER = -0.22
# sampling box of the unbounded state space used for validations
SAMPLING_BOX = 2 * np.pi

A_NOMINAL = np.array([[0.1, -1.0], [0.0, 1.0]])
A_SCHEDULED = np.array([[0.0, 0.0], [SIN_GAIN, 0.0]])
B_PLANT = np.array([[0.0], [1.0]])
C_PLANT = np.array([[1.0, 0.0]])
D_PLANT = np.zeros((1, 1))


def sinc(a):
    """Unnormalized sinc, ``sin(a)/a`` with the removable singularity filled."""
    return np.sinc(np.asarray(a, dtype=float) / np.pi)


def dynamics(x, u):
    x1, x2 = x
    return np.array([0.1 * x1 - x2, SIN_GAIN * np.sin(x1) + x2 + u[0]])


def output(x, u):
    return np.array([x[0]])


def dynamics_jacobian(x, u):
    a = A_NOMINAL + np.cos(x[0]) * A_SCHEDULED
    return a, B_PLANT.copy()


def output_jacobian(x, u):
    return C_PLANT.copy(), D_PLANT.copy()


def cos_segment_average(x, x_star):
    """Mean of ``cos(x1)`` along the segment from ``x_star`` to ``x``."""
    a, b = float(x[0]), float(x_star[0])
    return np.array([np.cos((a + b) / 2) * sinc((a - b) / 2)])


def equilibrium(r):
    """Constant steady state with ``y = r``: ``x* = (r, -0.9 r)``, ``u* = -0.9 sin(r)``."""
    r = float(r)
    return np.array([r, (0.1 - 1.0) * r]), np.array([-SIN_GAIN * np.sin(r)])


def inversion(r):
    """Exact steady state for a reference known two steps ahead.

    Returns ``len(r) - 1`` states and ``len(r) - 2`` inputs.
    """

    r = np.asarray(r, dtype=float).ravel()
    x1 = r[:-1]
    x2 = 0.1 * r[:-1] - r[1:]
    xs = np.column_stack([x1, x2])
    us = x2[1:] - x2[:-1] - SIN_GAIN * np.sin(x1[:-1])
    return xs, us.reshape(-1, 1)


def differential_polytope() -> SchedulingPolytope:
    return SchedulingPolytope.interval(-1.0, 1.0)


def standard_polytope() -> SchedulingPolytope:
    return SchedulingPolytope.interval(SINC_LOWER, 1.0)


def _region() -> Region:
    return Region.unbounded(-SAMPLING_BOX * np.ones(2), SAMPLING_BOX * np.ones(2))


def _embedding(polytope: SchedulingPolytope) -> AffineLpvStateSpace:
    return AffineLpvStateSpace(
        AffineMatrixFunction(A_NOMINAL, (A_SCHEDULED,)),
        AffineMatrixFunction.constant_of(B_PLANT),
        AffineMatrixFunction.constant_of(C_PLANT),
        AffineMatrixFunction.constant_of(D_PLANT),
        polytope,
        inputs=(("u", 1),),
        outputs=(("y", 1),),
    )


def differential_scheduling(polytope: SchedulingPolytope | None = None) -> SchedulingMap:
    return SchedulingMap(
        lambda x: np.array([np.cos(x[0])]),
        polytope or differential_polytope(),
        _region(),
        cos_segment_average,
        name="cos(x1)",
    )


def standard_scheduling(polytope: SchedulingPolytope | None = None) -> SchedulingMap:
    return SchedulingMap(
        lambda x: np.atleast_1d(sinc(x[0])),
        polytope or standard_polytope(),
        _region(),
        name="sinc(x1)",
    )


def differential_embedding(polytope: SchedulingPolytope | None = None) -> AffineLpvStateSpace:
    """``A(rho) = A_0 + rho A_1`` with ``rho = cos(x1)``."""
    return _embedding(polytope or differential_polytope())


def standard_embedding(polytope: SchedulingPolytope | None = None) -> AffineLpvStateSpace:
    """Primal embedding ``f(x, u) = A(rho_s) x + B u`` with ``rho_s = sinc(x1)``."""
    return _embedding(polytope or standard_polytope())


def example_plant(polytope: SchedulingPolytope | None = None) -> NonlinearPlant:
    """The example plant with its differential embedding attached."""
    polytope = polytope or differential_polytope()
    return NonlinearPlant(
        name="example",
        n_x=2,
        inputs=(("u", 1),),
        outputs=(("y", 1),),
        dynamics=dynamics,
        output=output,
        dynamics_jacobian=dynamics_jacobian,
        output_jacobian=output_jacobian,
        region=_region(),
        input_region=Region.unbounded([-SAMPLING_BOX], [SAMPLING_BOX]),
        scheduling=differential_scheduling(polytope),
        embedding=differential_embedding(polytope),
        equilibrium=equilibrium,
        inversion=inversion,
    )


__all__ = [
    "cos_segment_average",
    "differential_embedding",
    "differential_scheduling",
    "equilibrium",
    "example_plant",
    "inversion",
    "sinc",
    "standard_embedding",
    "standard_scheduling",
]
