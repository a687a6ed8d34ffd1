"""Tests for weighting filters and generalized plants."""
from __future__ import annotations

import control
import numpy as np
import pytest

from incremental_lpv import example
from incremental_lpv.differential import NonlinearPlant, Region, SchedulingMap, check_jacobians, validate_embedding
from incremental_lpv.errors import StructureError
from incremental_lpv.genplant import (
    TOPOLOGY,
    WeightingScheme,
    build_generalized_plant,
    generalized_lpv_model,
    perturb_unit_circle_poles,
    poly_gcd,
    realize,
    unit_circle_poles,
    weight_cascade,
)
from incremental_lpv.lpv_model import AffineLpvStateSpace, AffineMatrixFunction


def test_cascade_cancels_common_factor(weights):
    cascade = weight_cascade(weights.error_weight, weights.reference_model)
    num, den = control.tfdata(cascade)
    assert len(np.atleast_1d(np.squeeze(den[0][0]))) == 2
    poles = unit_circle_poles(cascade)
    assert len(poles) == 1
    assert abs(poles[0] - 1.0) < 1e-9


def test_cascade_cancellation_is_exact_on_coefficients(weights):
    num, den = control.tfdata(weight_cascade(weights.error_weight, weights.reference_model))
    assert np.allclose(np.squeeze(num[0][0]), [0.2, -0.1], rtol=0, atol=1e-15)
    assert np.allclose(np.squeeze(den[0][0]), [1.0, -1.0], rtol=0, atol=1e-15)


def test_gcd_finds_shared_quadratic_factor():
    shared = [1.0, 0.0, 0.25]
    gcd = poly_gcd(np.polymul(shared, [1.0, -0.5]), np.polymul(shared, [1.0, 2.0]))
    assert np.allclose(gcd, shared)
    assert np.array_equal(poly_gcd([1.0, -1.0], [1.0, 2.0]), [1.0])
    assert np.array_equal(poly_gcd([0.0], [1.0, 2.0]), [1.0])


def test_cascade_without_common_factor_keeps_all_poles():
    cascade = weight_cascade(control.tf([1.0, -0.5], [1.0, 0.3], True), control.tf([1.0], [1.0, -1.0], True))
    _, den = control.tfdata(cascade)
    assert np.allclose(np.squeeze(den[0][0]), np.polymul([1.0, 0.3], [1.0, -1.0]))


def test_unit_circle_pole_moved_inward(weights):
    cascade = weight_cascade(weights.error_weight, weights.reference_model)
    moved, pairs = perturb_unit_circle_poles(cascade, 1e-4)
    assert len(pairs) == 1
    old, new = pairs[0]
    assert abs(old) == pytest.approx(1.0)
    assert abs(new) == pytest.approx(1.0 - 1e-4, abs=1e-12)
    assert unit_circle_poles(moved) == []


def test_zero_epsilon_keeps_weight(weights):
    cascade = weight_cascade(weights.error_weight, weights.reference_model)
    same, pairs = perturb_unit_circle_poles(cascade, 0.0)
    assert same is cascade
    assert pairs == []


def test_static_weight_has_no_states():
    a, b, c, d = realize(0.2, channels=2)
    assert a.shape == (0, 0)
    assert b.shape == (0, 2)
    assert c.shape == (2, 0)
    assert np.allclose(d, 0.2 * np.eye(2))


def test_generalized_plant_dimensions(gp):
    assert gp.n_xp == 2
    assert gp.n_x == 3
    assert (gp.n_w, gp.n_u, gp.n_z, gp.n_y) == (1, 1, 2, 1)
    assert gp.provenance["topology"] == TOPOLOGY
    assert len(gp.provenance["moved_poles"]) == 1


def test_measurement_is_tracking_error(gp):
    x = np.array([0.7, -0.3, 0.1])
    assert np.allclose(gp.measurement(x, [2.0]), [2.0 - 0.7])
    assert np.allclose(gp.plant_output(x), [0.7])


def test_inputs_enter_affinely(gp):
    x = np.array([1.2, -0.4, 0.3])
    base = gp.step(x, [0.0], [0.0])
    assert np.allclose(gp.step(x, [1.5], [-0.5]) - base, gp.B_w @ [1.5] + gp.B_u @ [-0.5])
    assert np.allclose(gp.step(x, [0.0], [0.0])[:2], example.dynamics(x[:2], [0.0]))


def test_constant_channel_matrices(gp):
    for name in ("B", "C", "D"):
        assert getattr(gp.lpv, name).is_constant
    assert not gp.lpv.A.is_constant
    assert np.allclose(gp.D_yw, [[1.0]])
    assert np.allclose(gp.D_zu, [[0.0], [0.2]])


def test_generalized_jacobians_and_embedding(gp):
    generic = gp.as_nonlinear_plant()
    assert check_jacobians(generic, samples=100).passed
    report = validate_embedding(generic, gp.scheduling_map(), gp.lpv, samples=300)
    assert report.passed
    assert report.all_in_polytope


def test_lpv_model_matches_generalized_plant(gp, weights):
    model = generalized_lpv_model(example.differential_embedding(), weights)
    rho = [0.3]
    for mine, theirs in zip(model.at(rho), gp.lpv.at(rho)):
        assert np.allclose(mine, theirs)


def test_lifted_scheduling_map(gp):
    smap = gp.scheduling_map(example.standard_scheduling())
    assert smap.region.dimension == 3
    assert np.allclose(smap([0.0, 5.0, 9.0]), [1.0])
    lifted = gp.scheduling_map()
    assert lifted.segment_average is not None
    assert np.allclose(lifted.segment_average(np.array([1.0, 0, 0]), np.array([1.0, 2, 2])), [np.cos(1.0)])


def _scalar_plant(dynamics, with_embedding=True):
    model = AffineLpvStateSpace.from_lti(
        [[0.5]], [[1.0]], [[1.0]], [[0.0]], inputs=(("u", 1),), outputs=(("y", 1),)
    )
    smap = SchedulingMap(lambda x: np.zeros(1), model.polytope, Region.unbounded([-1.0], [1.0]))
    return NonlinearPlant(
        name="scalar",
        n_x=1,
        inputs=(("u", 1),),
        outputs=(("y", 1),),
        dynamics=dynamics,
        output=lambda x, u: np.array([x[0]]),
        scheduling=smap if with_embedding else None,
        embedding=model if with_embedding else None,
    )


def test_plant_without_embedding_rejected(weights):
    plant = _scalar_plant(lambda x, u: 0.5 * x + u, with_embedding=False)
    with pytest.raises(StructureError):
        build_generalized_plant(plant, weights)


def test_nonaffine_input_rejected(weights):
    plant = _scalar_plant(lambda x, u: np.array([0.5 * x[0] + np.tanh(u[0])]))
    with pytest.raises(StructureError, match="not affine in u"):
        build_generalized_plant(plant, weights)


def test_scalar_plant_accepted(weights):
    plant = _scalar_plant(lambda x, u: 0.5 * x + u)
    generalized = build_generalized_plant(plant, weights, validation_samples=64)
    assert generalized.n_x == 2
    assert generalized.lpv.is_constant


def test_feedthrough_plant_rejected(weights):
    model = AffineLpvStateSpace.from_lti(
        np.eye(1) * 0.5, np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1)),
        inputs=(("u", 1),), outputs=(("y", 1),),
    )
    with pytest.raises(StructureError):
        generalized_lpv_model(model, weights)


def test_unit_weights_give_plain_tracking_plant():
    model = AffineLpvStateSpace(
        AffineMatrixFunction(example.A_NOMINAL, (example.A_SCHEDULED,)),
        example.B_PLANT,
        example.C_PLANT,
        example.D_PLANT,
        example.differential_polytope(),
        inputs=(("u", 1),),
        outputs=(("y", 1),),
    )
    generalized = generalized_lpv_model(model, WeightingScheme.unit())
    assert generalized.n_x == 2
    assert generalized.channel_size("z") == 2
