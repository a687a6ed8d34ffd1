"""Tests for LMI assembly, vertex enforcement and SDP solving."""
from __future__ import annotations

import numpy as np
import pytest

from incremental_lpv.errors import AffineClosureError, InfeasibleError, StructureError
from incremental_lpv.lpv_model import SchedulingPolytope
from incremental_lpv.sdp import (
    INFEASIBLE,
    OPTIMAL,
    LmiSystem,
    VariableSpec,
    enforce_on_vertices,
)
from lpv_utils import SolutionCache

SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])


def _gamma_system() -> LmiSystem:
    system = LmiSystem("two-by-two")
    system.scalar("gamma")
    system.add_constraint("gain", lambda v: v["gamma"] * np.eye(2) + SWAP)
    system.minimize(lambda v: v["gamma"])
    return system


def _lyapunov_system(a: float) -> LmiSystem:
    system = LmiSystem("lyapunov")
    system.symmetric("P", 1)
    system.add_constraint("storage", lambda v: v["P"])
    system.add_constraint("decrease", lambda v: v["P"] - a * a * v["P"])
    return system


def test_minimize_scalar_bound():
    sol = _gamma_system().solve()
    assert sol.status == OPTIMAL
    assert float(sol["gamma"]) == pytest.approx(1.0, abs=1e-5)
    assert min(sol.min_eigenvalues.values()) >= -1e-7


def test_stable_scalar_has_lyapunov_certificate():
    sol = _lyapunov_system(0.5).solve()
    assert sol.status == OPTIMAL
    assert sol["P"][0, 0] > 0


def test_unstable_scalar_is_infeasible():
    sol = _lyapunov_system(1.1).solve()
    assert sol.status == INFEASIBLE
    with pytest.raises(InfeasibleError):
        sol.raise_for_status()


def test_vertex_enforcement_counts_vertices():
    polytope = SchedulingPolytope.box([-1.0, -1.0], [1.0, 1.0])
    spec = {"P": VariableSpec("P", (2, 2), True)}
    constraints = enforce_on_vertices(lambda rho, v: v["P"] + rho[0] * np.eye(2), polytope, spec)
    assert len(constraints) == 4


def test_scheduling_free_template_gives_one_constraint():
    polytope = SchedulingPolytope.interval(-1.0, 1.0)
    spec = {"P": VariableSpec("P", (2, 2), True)}
    assert len(enforce_on_vertices(lambda rho, v: v["P"], polytope, spec)) == 1


def test_curved_template_rejected():
    polytope = SchedulingPolytope.interval(-1.0, 1.0)
    spec = {"P": VariableSpec("P", (1, 1), True)}
    with pytest.raises(AffineClosureError):
        enforce_on_vertices(lambda rho, v: v["P"] + rho[0] ** 2 * np.eye(1), polytope, spec)


def test_cross_terms_rejected():
    polytope = SchedulingPolytope.box([-1.0, -1.0], [1.0, 1.0])
    with pytest.raises(AffineClosureError):
        enforce_on_vertices(lambda rho, v: rho[0] * rho[1] * np.eye(1), polytope)


def test_nonlinear_constraint_detected():
    system = LmiSystem("quadratic")
    system.symmetric("P", 2)
    system.add_constraint("square", lambda v: v["P"] @ v["P"])
    with pytest.raises(StructureError):
        system.check_linearity()


def test_asymmetric_constraint_detected():
    system = LmiSystem("asymmetric")
    system.matrix("X", 2, 2)
    system.add_constraint("raw", lambda v: v["X"])
    with pytest.raises(StructureError):
        system.check_linearity()


def test_linear_system_passes_probe():
    assert _gamma_system().check_linearity() <= 1e-9


def test_sdpa_export(tmp_path):
    path = _gamma_system().to_sdpa(tmp_path / "gain.dat-s")
    lines = path.read_text().splitlines()
    assert lines[0] == "* two-by-two"
    assert lines[1] == "1"
    assert lines[2] == "1"
    assert lines[3] == "2"
    assert lines[4] == "1"
    assert "0 1 1 2 -1" in lines
    assert "1 1 1 1 1" in lines
    assert "1 1 2 2 1" in lines


def test_fingerprint_is_deterministic():
    assert _gamma_system().fingerprint("SCS") == _gamma_system().fingerprint("SCS")
    assert _gamma_system().fingerprint("SCS") != _lyapunov_system(0.5).fingerprint("SCS")


def test_cached_solution_reused(tmp_path):
    cache = SolutionCache(tmp_path / "cache")
    try:
        first = _gamma_system().solve(cache=cache)
        second = _gamma_system().solve(cache=cache)
    finally:
        cache.close()
    assert first.diagnostics["cache"] == "miss"
    assert second.diagnostics["cache"] == "hit"
    assert float(second["gamma"]) == pytest.approx(float(first["gamma"]))
    assert cache.hits == 1
