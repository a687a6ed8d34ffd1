"""Tests for path integrals, steady states and the incremental controller runtime."""
from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from incremental_lpv import example
from incremental_lpv.errors import DimensionError, HorizonError, StructureError
from incremental_lpv.lpv_model import AffineMatrixFunction
from incremental_lpv.realization import (
    IncrementalControllerRuntime,
    SteadyStateTrajectory,
    controller_step,
    lift_steady_state,
    path_averaged_matrices,
    quadrature_matrices,
    segment_average,
    steady_state_for_constant_reference,
    steady_state_for_reference_sequence,
)
from incremental_lpv.simulation import ReferenceGenerator
from incremental_lpv.synthesis import DifferentialController

HORIZON = 60


def test_closed_form_average_matches_quadrature(plant):
    smap = plant.scheduling
    plain = dataclasses.replace(smap, segment_average=None)
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        x, x_star = rng.uniform(-2 * np.pi, 2 * np.pi, (2, 2))
        closed = segment_average(smap, x, x_star)
        numeric = segment_average(plain, x, x_star, order=64)
        worst = max(worst, float(np.max(np.abs(closed - numeric))))
    assert worst <= 1e-10


def test_zero_length_segment_gives_point_value(plant):
    x = np.array([0.7, 3.0])
    assert np.allclose(segment_average(plant.scheduling, x, x), [np.cos(0.7)])


def test_partial_segment_average(plant):
    plain = dataclasses.replace(plant.scheduling, segment_average=None)
    x, x_star = np.array([2.0, 0.0]), np.array([-1.0, 0.0])
    half = segment_average(plain, x, x_star, order=64, upto=0.5)
    midpoint = x_star + 0.5 * (x - x_star)
    assert np.allclose(half, example.cos_segment_average(midpoint, x_star), atol=1e-12)


def test_lti_controller_matrices_are_constant(plant):
    polytope = plant.scheduling.polytope
    lti = DifferentialController(
        *(AffineMatrixFunction.constant_of(m) for m in ([[0.5]], [[1.0]], [[2.0]], [[0.1]])),
        polytope=polytope,
        kind="lti",
    )
    first = path_averaged_matrices(lti, plant.scheduling, [0.3, -1.0], [2.0, 0.5])
    second = path_averaged_matrices(lti, plant.scheduling, [-4.0, 1.0], [0.0, 0.0])
    for m1, m2 in zip(first, second):
        assert np.array_equal(m1, m2)


def test_path_average_equals_matrix_quadrature(gp, incremental_design):
    _, ctrl = incremental_design
    smap = gp.scheduling_map()
    x, x_star = np.array([1.5, -0.3, 0.2]), np.array([-0.4, 0.8, 0.0])
    averaged = path_averaged_matrices(ctrl, smap, x, x_star)
    direct = quadrature_matrices(ctrl, smap, x, x_star, order=64)
    for mine, theirs in zip(averaged, direct):
        assert np.max(np.abs(mine - theirs)) <= 1e-9 * max(1.0, float(np.max(np.abs(theirs))))


def test_path_average_dimension_checked(gp, incremental_design):
    _, ctrl = incremental_design
    with pytest.raises(DimensionError):
        path_averaged_matrices(ctrl, gp.scheduling_map(), [0.0, 0.0, 0.0], [0.0, 0.0])


@pytest.mark.parametrize("level", [0.0, 1.0, 2.0])
def test_constant_steady_state(plant, level):
    traj = steady_state_for_constant_reference(plant, level, HORIZON)
    assert traj.residual <= 1e-10
    assert np.allclose(traj.x[0], [level, -0.9 * level])
    assert np.allclose(traj.u[0], [-0.9 * np.sin(level)])
    assert np.allclose(traj.y, level)


def test_newton_equilibrium_without_closed_form(plant):
    generic = dataclasses.replace(plant, equilibrium=None)
    traj = steady_state_for_constant_reference(generic, 1.3, 5)
    x_star, u_star = example.equilibrium(1.3)
    assert np.allclose(traj.x[0], x_star, atol=1e-10)
    assert np.allclose(traj.u[0], u_star, atol=1e-10)
    assert traj.residual <= 1e-10


def test_sinusoidal_steady_state(plant):
    r = ReferenceGenerator.sinusoid().sequence(HORIZON + 2)
    traj = steady_state_for_reference_sequence(plant, r, HORIZON)
    assert traj.horizon == HORIZON
    assert traj.residual <= 1e-10
    assert np.allclose(traj.y[:, 0], r[:HORIZON])


def test_short_reference_rejected(plant):
    with pytest.raises(HorizonError):
        steady_state_for_reference_sequence(plant, np.ones(HORIZON + 1), HORIZON)


def test_sequence_without_inversion(plant):
    generic = dataclasses.replace(plant, inversion=None)
    traj = steady_state_for_reference_sequence(generic, np.full(HORIZON + 2, 1.0), HORIZON)
    assert traj.meta["reference"] == "constant"
    with pytest.raises(StructureError):
        steady_state_for_reference_sequence(generic, np.linspace(0, 1, HORIZON + 2), HORIZON)


def test_trajectory_csv(tmp_path, plant):
    traj = steady_state_for_constant_reference(plant, 1.0, 4)
    path = traj.to_csv(tmp_path / "steady.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "k,x1,x2,u1,y1"
    assert len(lines) == 6
    restored = SteadyStateTrajectory.from_csv(path)
    assert np.array_equal(restored.x, traj.x)
    assert np.array_equal(restored.u, traj.u)


def _runtime(gp, plant, ctrl, level=2.0, order=None):
    traj = steady_state_for_constant_reference(plant, level, HORIZON)
    lifted = lift_steady_state(gp, traj, np.full(HORIZON, level))
    return IncrementalControllerRuntime(ctrl, gp.scheduling_map(), lifted, order)


def test_lifted_trajectory_is_feasible(gp, plant):
    traj = steady_state_for_constant_reference(plant, 2.0, HORIZON)
    lifted = lift_steady_state(gp, traj, np.full(HORIZON, 2.0))
    assert lifted.residual <= 1e-10
    assert lifted.x.shape == (HORIZON + 1, gp.n_x)
    assert np.allclose(lifted.y, 0.0)


def test_runtime_at_steady_state_emits_feedforward(gp, plant, incremental_design):
    _, ctrl = incremental_design
    rt = _runtime(gp, plant, ctrl)
    x_star = rt.trajectory.x[3]
    out = rt.step(3, rt.trajectory.y[3], x_star)
    assert np.allclose(out, rt.trajectory.u[3])
    assert np.allclose(rt.state, 0.0)


def test_runtime_horizon_checked(gp, plant, incremental_design):
    _, ctrl = incremental_design
    rt = _runtime(gp, plant, ctrl)
    with pytest.raises(HorizonError):
        rt.step(HORIZON, [0.0], rt.trajectory.x[-1])


def test_path_output_end_points(gp, plant, incremental_design):
    _, ctrl = incremental_design
    rt = _runtime(gp, plant, ctrl, order=64)
    rt.state = np.array([0.1, -0.2, 0.05])
    x = rt.trajectory.x[5] + np.array([0.4, -0.3, 0.1])
    u_c = np.array([0.25])
    assert np.allclose(rt.path_output(5, 0.0, u_c, x), rt.trajectory.u[5])
    full = rt.path_output(5, 1.0, u_c, x)
    state = rt.state.copy()
    assert np.allclose(controller_step(rt, 5, u_c, x), full)
    assert not np.allclose(rt.state, state)


def test_path_output_derivative_is_differential_output(gp, plant, incremental_design):
    _, ctrl = incremental_design
    rt = _runtime(gp, plant, ctrl, order=64)
    rt.state = np.array([0.1, -0.2, 0.05])
    x = rt.trajectory.x[5] + np.array([0.4, -0.3, 0.1])
    u_c = np.array([0.25])
    h = 1e-5
    slope = (rt.path_output(5, 1.0 + h, u_c, x) - rt.path_output(5, 1.0 - h, u_c, x)) / (2 * h)
    _, _, c, d = ctrl.at(gp.scheduling_map()(x))
    expected = c @ rt.state + d @ (u_c - rt.trajectory.y[5])
    assert np.max(np.abs(slope - expected)) <= 1e-5
    # dropping the state increment must show up at this tolerance
    assert np.max(np.abs(slope - d @ (u_c - rt.trajectory.y[5]))) > 1e-5


def test_reset_restores_initial_state(gp, plant, incremental_design):
    _, ctrl = incremental_design
    rt = _runtime(gp, plant, ctrl)
    rt.step(0, [0.5], rt.trajectory.x[0] + 0.1)
    rt.reset()
    assert np.array_equal(rt.state, np.zeros(ctrl.n_xc))
    assert rt.region_exits == 0
