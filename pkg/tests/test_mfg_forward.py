from __future__ import annotations

import numpy as np
import pytest

from mfgcip.grid import Field, GridSpec
from mfgcip.mfg_forward import (
    CipData,
    CornerMismatchError,
    DivergedError,
    LateralData,
    MfgSolution,
    SolverConfig,
    check_corners,
    fp_residual,
    generate_cip_data,
    hjb_residual,
    normal_derivative,
    picard_solve,
)
from mfgcip.mms import ManufacturedProblem, convergence_orders, endpoint_floor, mms_grid

# frozen oracle values of the manufactured problem
MMS_FLOOR = {21: 8.453050858e-3, 51: 1.396587023e-3, 101: 3.502175362e-4}
MMS_ERR_51 = {"u": 2.536252143e-4, "m": 1.216402085e-4}


def test_mms_orders():
    rep = convergence_orders((21, 41, 81))
    for key in ("u", "m"):
        assert min(rep["orders"][key]) >= 1.9


@pytest.mark.parametrize("N", sorted(MMS_FLOOR))
def test_mms_floor_frozen(N):
    assert endpoint_floor(N) == pytest.approx(MMS_FLOOR[N], rel=1e-6)


def test_mms_errors_frozen():
    errs = ManufacturedProblem(mms_grid(51)).errors()
    for k, v in MMS_ERR_51.items():
        assert errs[k] == pytest.approx(v, rel=1e-6)


def test_mms_rejects_other_domains():
    with pytest.raises(ValueError):
        ManufacturedProblem(GridSpec([2.0], 1.0, [11], 11, 1.0))


def test_picard_converges_and_satisfies_schemes(small_instance):
    inst = small_instance
    sol = inst.truth
    assert sol.picard_residuals[-1] <= inst.solver_config.tol
    co = inst.coefficients(inst.b_true)
    assert np.max(np.abs(hjb_residual(co, sol.u, sol.m))) < 1e-9
    assert np.max(np.abs(fp_residual(co, sol.u, sol.m))) < 1e-9


def test_solution_matches_boundary_data(small_instance):
    inst = small_instance
    q, F, du, dm = inst.boundary
    sol = inst.truth
    assert np.allclose(sol.m.at_time(0).values, q.values)
    assert np.allclose(sol.u.at_time(-1 % inst.spec.Nt).values, F.values)
    for key, vals in du.faces.items():
        assert np.allclose(sol.u.face(*key).values, vals)


def test_corner_mismatch_raises(small_instance):
    q, F, du, dm = small_instance.boundary
    with pytest.raises(CornerMismatchError):
        check_corners(q + 0.1, F, du, dm)
    with pytest.raises(CornerMismatchError):
        picard_solve(small_instance.coefficients(small_instance.b_true), q, F + 0.1, du, dm)


def test_zero_damping_is_reported(small_instance):
    inst = small_instance
    q, F, du, dm = inst.boundary
    with pytest.raises(DivergedError):
        picard_solve(inst.coefficients(inst.b_true), q, F, du, dm, SolverConfig(theta=0.0))


def test_solver_config_rejects_neumann():
    with pytest.raises(ValueError):
        SolverConfig(bc_type="neumann")


def test_lateral_level():
    spec = GridSpec([1.0], 1.0, [5], 3, 1.0)
    lat = LateralData.constant(spec, 2.0)
    out = lat.level(spec, 1, np.zeros(5))
    assert out.tolist() == [2.0, 0.0, 0.0, 0.0, 2.0]


def test_normal_derivative_is_outward():
    spec = GridSpec([1.0], 1.0, [11], 3, 1.0)
    u = Field.from_function(spec, lambda t, x: x**2 + 0 * t)
    assert normal_derivative(u, 0, 1).values == pytest.approx(2.0)
    assert normal_derivative(u, 0, -1).values == pytest.approx(2.0)


def test_cip_data_modes_and_io(small_instance, tmp_path):
    sol = small_instance.truth
    full = generate_cip_data(sol, "complete")
    part = generate_cip_data(sol, "incomplete")
    assert full.faces() == [(0, -1), (0, 1)]
    assert part.faces() == [(0, 1)]
    with pytest.raises(ValueError):
        generate_cip_data(sol, "partial")
    part.save(tmp_path / "d")
    back = CipData.load(tmp_path / "d")
    assert back.mode == "incomplete"
    assert np.array_equal(back.g1[(0, 1)].values, part.g1[(0, 1)].values)
    assert np.array_equal(back.p.values, part.p.values)


def test_solution_io(small_instance, tmp_path):
    sol = small_instance.truth
    sol.save(tmp_path / "s")
    back = MfgSolution.load(tmp_path / "s")
    assert np.array_equal(back.u.values, sol.u.values)
    assert back.picard_residuals == sol.picard_residuals
