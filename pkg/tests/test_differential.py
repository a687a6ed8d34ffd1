"""Tests for differential forms, Jacobian checks and embedding validation."""
from __future__ import annotations

import numpy as np
import pytest

from incremental_lpv.differential import (
    NonlinearPlant,
    Region,
    SchedulingMap,
    check_jacobians,
    differential_form_at,
    finite_difference_jacobians,
    halton_box,
    validate_embedding,
    validate_primal_embedding,
)
from incremental_lpv.errors import DimensionError, RegionError
from incremental_lpv import example
from incremental_lpv.lpv_model import AffineLpvStateSpace, AffineMatrixFunction, SchedulingPolytope


def test_differential_form_of_example(plant):
    a, b, c, d = differential_form_at(plant, [0.0, 0.0], [0.0])
    assert np.allclose(a, [[0.1, -1.0], [0.9, 1.0]])
    assert np.allclose(b, [[0.0], [1.0]])
    assert np.allclose(c, [[1.0, 0.0]])
    assert np.allclose(d, [[0.0]])

    a_pi, _, _, _ = differential_form_at(plant, [np.pi, 0.0])
    assert np.allclose(a_pi, [[0.1, -1.0], [-0.9, 1.0]])


def test_differential_form_dimension_checked(plant):
    with pytest.raises(DimensionError):
        differential_form_at(plant, [0.0, 0.0, 0.0])


def test_bounded_region_enforced():
    plant = NonlinearPlant(
        name="scalar",
        n_x=1,
        inputs=(("u", 1),),
        outputs=(("y", 1),),
        dynamics=lambda x, u: 0.5 * x + u,
        output=lambda x, u: x,
        region=Region.box([-1.0], [1.0]),
    )
    with pytest.raises(RegionError):
        differential_form_at(plant, [2.0])


def test_finite_differences_without_supplied_jacobians():
    plant = NonlinearPlant(
        name="cubic",
        n_x=1,
        inputs=(("u", 1),),
        outputs=(("y", 1),),
        dynamics=lambda x, u: np.array([x[0] ** 3 + 2 * u[0]]),
        output=lambda x, u: np.array([x[0]]),
    )
    a, b, _, _ = differential_form_at(plant, [0.5], [0.0])
    assert a[0, 0] == pytest.approx(0.75, rel=1e-6)
    assert b[0, 0] == pytest.approx(2.0, rel=1e-9)


def test_finite_difference_jacobians_of_linear_map():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    jx, jv = finite_difference_jacobians(lambda x, v: m @ x + v, [0.3, -0.2], [1.0, 1.0])
    assert np.allclose(jx, m)
    assert np.allclose(jv, np.eye(2))


def test_supplied_jacobians_match_finite_differences(plant):
    report = check_jacobians(plant, samples=1000)
    assert report.passed
    assert report.max_relative_error <= 1e-5


def test_wrong_jacobian_detected():
    wrong = NonlinearPlant(
        name="wrong",
        n_x=2,
        inputs=(("u", 1),),
        outputs=(("y", 1),),
        dynamics=example.dynamics,
        output=example.output,
        dynamics_jacobian=lambda x, u: (example.A_NOMINAL, example.B_PLANT),
        output_jacobian=example.output_jacobian,
        region=Region.unbounded([-3.0, -3.0], [3.0, 3.0]),
    )
    report = check_jacobians(wrong, samples=50)
    assert not report.passed
    assert report.worst_point
    assert report.undefined_points == 0


def test_undefined_plant_detected():
    sqrt_plant = NonlinearPlant(
        name="sqrt",
        n_x=1,
        inputs=(("u", 1),),
        outputs=(("y", 1),),
        dynamics=lambda x, u: np.array([np.sqrt(x[0]) + u[0]]),
        output=lambda x, u: np.array([x[0]]),
        dynamics_jacobian=lambda x, u: (np.array([[0.5]]), np.array([[1.0]])),
        region=Region.box([-3.0], [3.0]),
    )
    report = check_jacobians(sqrt_plant, samples=50)
    assert not report.passed
    assert report.undefined_points > 0
    assert report.max_relative_error == np.inf
    assert report.worst_point[0] < 0


def test_raising_plant_counts_as_undefined():
    def dynamics(x, u):
        if x[0] > 2.0:
            raise ValueError("outside the model")
        return np.array([0.5 * x[0] + u[0]])

    plant = NonlinearPlant(
        name="partial",
        n_x=1,
        inputs=(("u", 1),),
        outputs=(("y", 1),),
        dynamics=dynamics,
        output=lambda x, u: np.array([x[0]]),
        region=Region.box([-3.0], [3.0]),
    )
    report = check_jacobians(plant, samples=50)
    assert not report.passed
    assert report.worst_point[0] > 1.99


def test_differential_embedding_is_exact(plant):
    report = validate_embedding(plant, plant.scheduling, plant.embedding, samples=1000)
    assert report.passed
    assert report.all_in_polytope
    assert report.sampling_only
    assert max(report.max_a_error, report.max_c_error) <= 1e-12


def test_too_small_polytope_flagged(plant):
    narrow = example.differential_scheduling(SchedulingPolytope.interval(-0.5, 0.5))
    report = validate_embedding(plant, narrow, plant.embedding, samples=500)
    assert not report.all_in_polytope
    assert report.min_margin < 0


def test_wrong_embedding_fails(plant):
    wrong = AffineLpvStateSpace(
        AffineMatrixFunction(example.A_NOMINAL, (np.zeros((2, 2)),)),
        example.B_PLANT,
        example.C_PLANT,
        example.D_PLANT,
        example.differential_polytope(),
        inputs=(("u", 1),),
        outputs=(("y", 1),),
    )
    report = validate_embedding(plant, plant.scheduling, wrong, samples=200)
    assert not report.passed
    assert report.max_a_error > 0.5


def test_primal_embedding_of_comparator(plant):
    smap = example.standard_scheduling()
    report = validate_primal_embedding(plant, smap, example.standard_embedding(), samples=2000)
    assert report.passed
    assert report.all_in_polytope
    assert report.max_b_error <= 1e-12


def test_scheduling_map_dimension_checked():
    smap = SchedulingMap(lambda x: x, SchedulingPolytope.interval(0.0, 1.0), Region.box([0.0, 0.0], [1.0, 1.0]))
    with pytest.raises(DimensionError):
        smap([0.5, 0.5])


def test_halton_prefix_property():
    lower, upper = np.array([-1.0, 0.0]), np.array([1.0, 2.0])
    big = halton_box(lower, upper, 100)
    small = halton_box(lower, upper, 10)
    assert np.array_equal(big[:10], small)
    assert np.all(big >= lower) and np.all(big <= upper)


def test_region_rejects_inverted_bounds():
    with pytest.raises(DimensionError):
        Region.box([1.0], [0.0])
