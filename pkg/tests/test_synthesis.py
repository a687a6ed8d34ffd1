"""Tests for the synthesis LMI, certificates and controller reconstruction."""
from __future__ import annotations

import json

import numpy as np
import pytest

from incremental_lpv.errors import StructureError
from incremental_lpv.lpv_model import AffineLpvStateSpace, AffineMatrixFunction, SchedulingPolytope
from incremental_lpv.synthesis import (
    DifferentialController,
    SynthesisOptions,
    assemble_synthesis_lmi,
    reconstruct_theta,
    synthesize,
)

CHANNELS = {"inputs": (("w", 1), ("u", 1)), "outputs": (("z", 1), ("y", 1))}


def _scalar_plant(a: float = 0.5) -> AffineLpvStateSpace:
    """``x+ = a x + w + u``, ``z = x``, ``y = x``."""
    return AffineLpvStateSpace.from_lti(
        [[a]], [[1.0, 1.0]], [[1.0], [1.0]], [[0.0, 0.0], [0.0, 0.0]], **CHANNELS
    )


def test_lti_synthesis_beats_open_loop():
    cert, ctrl = synthesize(_scalar_plant(0.5))
    # open-loop gain of 1/(q - 0.5) is 2
    assert cert.gamma <= 2.0 + 1e-4
    assert ctrl.is_constant
    assert ctrl.n_xc == 1
    assert reconstruct_theta(cert, ctrl, [0.0]) <= 1e-8


def test_unstable_plant_is_stabilized():
    cert, _ = synthesize(_scalar_plant(1.5))
    assert np.isfinite(cert.gamma)
    assert cert.margins()["P"] > 0


def test_lu_factorization_reconstructs():
    cert, ctrl = synthesize(_scalar_plant(0.8), SynthesisOptions(factorization="lu"))
    assert reconstruct_theta(cert, ctrl, [0.0]) <= 1e-8


def test_varying_input_matrix_rejected():
    polytope = SchedulingPolytope.interval(-1.0, 1.0)
    plant = AffineLpvStateSpace(
        AffineMatrixFunction.constant_of([[0.5]]),
        AffineMatrixFunction(np.array([[1.0, 1.0]]), (np.array([[0.0, 0.3]]),)),
        [[1.0], [1.0]],
        [[0.0, 0.0], [0.0, 0.0]],
        polytope,
        **CHANNELS,
    )
    with pytest.raises(StructureError):
        assemble_synthesis_lmi(plant)


def test_missing_channels_rejected():
    plant = AffineLpvStateSpace.from_lti([[0.5]], [[1.0]], [[1.0]], [[0.0]])
    with pytest.raises(StructureError):
        assemble_synthesis_lmi(plant)


def test_measurement_feedthrough_rejected():
    plant = AffineLpvStateSpace.from_lti(
        [[0.5]], [[1.0, 1.0]], [[1.0], [1.0]], [[0.0, 0.0], [0.0, 1.0]], **CHANNELS
    )
    with pytest.raises(StructureError):
        assemble_synthesis_lmi(plant)


def test_synthesis_lmi_is_linear(gp):
    system = assemble_synthesis_lmi(gp.lpv)
    assert system.check_linearity() <= 1e-9
    # storage plus one constraint per vertex
    assert len(system.constraints) == 1 + gp.lpv.polytope.n_vertices


def test_example_gain_in_expected_band(incremental_design):
    cert, ctrl = incremental_design
    assert 0.8 <= cert.gamma <= 1.5
    assert ctrl.gamma == cert.gamma
    assert ctrl.kind == "incremental"
    assert not ctrl.is_constant


def test_certificate_margins(incremental_design):
    cert, _ = incremental_design
    margins = cert.margins()
    assert margins["P"] > 0
    assert margins["G"] > 0
    assert margins["vertex"] >= cert.delta_feas - 1e-9


def test_reconstruction_identity(incremental_design):
    cert, ctrl = incremental_design
    rng = np.random.default_rng(0)
    points = [*ctrl.polytope.vertices, *ctrl.polytope.sample(10, rng), ctrl.polytope.midpoint]
    assert max(reconstruct_theta(cert, ctrl, rho) for rho in points) <= 1e-8


def test_reconstruction_detects_wrong_controller(incremental_design):
    cert, ctrl = incremental_design
    broken = DifferentialController(
        AffineMatrixFunction.zeros(ctrl.n_xc, ctrl.n_xc, ctrl.polytope.dimension),
        ctrl.B,
        ctrl.C,
        ctrl.D,
        ctrl.polytope,
    )
    assert reconstruct_theta(cert, broken, ctrl.polytope.midpoint) > 1e-6


def test_controller_is_affine(incremental_design):
    _, ctrl = incremental_design
    lam = np.array([0.3, 0.7])
    rho = ctrl.polytope.vertices.T @ lam
    mixed = [lam[0] * m0 + lam[1] * m1 for m0, m1 in zip(ctrl.at(ctrl.polytope.vertices[0]), ctrl.at(ctrl.polytope.vertices[1]))]
    for mine, theirs in zip(ctrl.at(rho), mixed):
        assert np.max(np.abs(mine - theirs)) <= 1e-12 * max(1.0, np.max(np.abs(theirs)))


def test_controller_json_round_trip(incremental_design):
    _, ctrl = incremental_design
    restored = DifferentialController.from_dict(json.loads(ctrl.to_json()))
    assert restored.kind == ctrl.kind
    assert restored.gamma == ctrl.gamma
    for mine, theirs in zip(restored.at([0.2]), ctrl.at([0.2])):
        assert np.array_equal(mine, theirs)


def test_certificate_report(incremental_design):
    cert, _ = incremental_design
    report = cert.to_report()
    assert report.startswith("# synthesis certificate")
    assert "gamma = " in report
    assert "U1 (3x3):" in report
    summary = cert.to_dict()
    assert summary["gamma"] == cert.gamma
    assert set(summary["margins"]) == {"P", "G", "vertex"}


def test_comparator_gain_in_expected_band(standard_design):
    cert, ctrl = standard_design
    assert 0.6 <= cert.gamma <= 1.1
    assert ctrl.kind == "standard"


def test_larger_polytope_never_lowers_gain(gp, incremental_design):
    cert, _ = incremental_design
    narrow = gp.lpv.with_polytope(SchedulingPolytope.interval(-0.5, 0.5))
    narrow_cert, _ = synthesize(narrow)
    assert cert.gamma >= narrow_cert.gamma - 1e-6
