from __future__ import annotations

import warnings

import numpy as np
import pytest

from mfgcip.grid import Field, GridSpec
from mfgcip.instances import standard_instance
from mfgcip.inversion import (
    InverseProblemSpec,
    RBoundViolation,
    SingularSystemError,
    ReconstructionResult,
    UnidentifiableError,
    _gamma_minus_rows,
    assemble_system,
    consistency_residual,
    error_report,
    extract_b_from_v,
    oracle_recover,
    region_rms,
    solve_outer,
)
from mfgcip.mfg_forward import generate_cip_data

LAM = 0.074


def _ips(inst, mode="complete", sol=None, **kw):
    sol = sol or inst.truth
    return InverseProblemSpec(generate_cip_data(sol, mode), inst.reference,
                              inst.coefficients(inst.b_reference), lam=kw.pop("lam", LAM), **kw)


def _rel(inst, err):
    w = np.full(inst.spec.Nx[0], inst.spec.h[0])
    w[[0, -1]] *= 0.5
    return err / np.sqrt(np.sum(w * inst.b_true.values**2))


@pytest.fixture(scope="module")
def complete_result(small_instance):
    return solve_outer(_ips(small_instance), small_instance.b_true)


def test_spec_validation(small_instance):
    for kw in (dict(eps=-1.0), dict(lam=-1.0), dict(solver="qr")):
        with pytest.raises(ValueError):
            _ips(small_instance, **kw)
    with pytest.raises(RBoundViolation):
        _ips(small_instance, c=1e6)


def test_system_layout(small_instance):
    sys_ = assemble_system(_ips(small_instance))
    spec = small_instance.spec
    Ns, Nt = spec.Nx[0], spec.Nt
    assert sys_.shape[1] == 2 * Ns * Nt + Ns
    rows = np.concatenate([sys_.block_rows(k) for k in sys_.blocks])
    assert np.array_equal(np.sort(rows), np.arange(sys_.shape[0]))
    assert sys_.block_rows("hjb").size == (Nt - 1) * (Ns - 2)
    assert sys_.block_rows("data_endpoint").size == 4 * Ns


def test_incomplete_drops_gamma_minus_rows(small_instance):
    full = assemble_system(_ips(small_instance, "complete"))
    part = assemble_system(_ips(small_instance, "incomplete"))
    assert full.shape[0] - part.shape[0] == _gamma_minus_rows(small_instance.spec)
    assert "data_lateral_gamma_minus" not in part.blocks


def test_consistency_at_exact_difference(small_instance):
    ips = _ips(small_instance)
    assert consistency_residual(ips, small_instance.truth, small_instance.b_true) < 1e-5


def test_identical_data_returns_reference(small_instance):
    inst = small_instance
    res = solve_outer(_ips(inst, sol=inst.reference), inst.b_reference)
    assert res.b_hat.max_abs() > 0
    assert np.max(np.abs((res.b_hat - inst.b_reference).values)) < 1e-10
    assert res.converged


def test_noiseless_complete_recovery(small_instance, complete_result):
    res = complete_result
    assert res.converged and not res.warnings
    assert _rel(small_instance, res.error_full) < 1e-6
    assert np.max(np.abs((res.u_hat - small_instance.truth.u).values)) < 1e-6


def test_noiseless_incomplete_recovery_is_localized(small_instance):
    inst = small_instance
    res = solve_outer(_ips(inst, "incomplete"), inst.b_true)
    assert _rel(inst, res.error_full) < 0.05
    rms = region_rms(res.b_hat, inst.b_true)
    assert rms["gamma"] < rms["complement"]


def test_direct_and_auto_agree():
    inst = standard_instance(Nx=11, Nt=11)
    out = [solve_outer(_ips(inst, solver=s), inst.b_true).b_hat.values for s in ("direct", "auto")]
    assert np.max(np.abs(out[0] - out[1])) < 1e-6


def test_unweighted_recovery(small_instance):
    inst = small_instance
    res = solve_outer(_ips(inst, lam=0.0), inst.b_true)
    assert _rel(inst, res.error_full) < 1e-6


def test_boundary_amplitude_needs_regularization(small_instance):
    # b at x1 = +-A_1 enters no interior equation
    with pytest.raises(SingularSystemError):
        solve_outer(_ips(small_instance, eps=0.0))


def test_oracle_second_order():
    errs = []
    for N in (31, 61):
        inst = standard_instance(Nx=N, Nt=N)
        sol = inst.truth
        errs.append(error_report(oracle_recover(sol.u, sol.m, inst.coefficients(inst.b_true)),
                                 inst.b_true)["L2_full"])
    assert np.log2(errs[0] / errs[1]) > 1.8


def test_oracle_unidentifiable(small_instance):
    inst = small_instance
    zero = inst.truth.m * 0.0
    with pytest.raises(UnidentifiableError):
        oracle_recover(inst.truth.u, zero, inst.coefficients(inst.b_true))


def test_extract_b_from_v():
    spec = GridSpec([1.0], 1.0, [11], 11, 1.0)
    x = spec.axis(0)
    v = Field.from_function(spec, lambda t, x: -(1.0 + x) + 0 * t)
    b, flags = extract_b_from_v(v)
    assert b.values == pytest.approx(1.0 + x) and flags == []
    v_bad = Field.from_function(spec, lambda t, x: t + 0 * x)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        _, flags = extract_b_from_v(v_bad)
    assert flags and caught


def test_error_report_regions():
    spec = GridSpec([1.0], 1.0, [21], 3, 1.0)
    x = spec.axis(0)
    zero = Field.space(spec, np.zeros(21))
    err = Field.space(spec, np.where(x < 0, 1.0, 0.0))
    rep = error_report(err, zero)
    assert rep["L2_gamma"] == 0.0 and rep["Linf"] == 1.0
    assert error_report(err, zero, gamma=0.0)["L2_gamma"] == rep["L2_full"]
    with pytest.raises(ValueError):
        error_report(err, zero, gamma=3.0)
    rms = region_rms(err, zero)
    assert rms["gamma"] == 0.0 and rms["complement"] > 0.9


def test_result_io(complete_result, tmp_path):
    complete_result.save(tmp_path / "r")
    back = ReconstructionResult.load(tmp_path / "r")
    assert np.array_equal(back.b_hat.values, complete_result.b_hat.values)
    assert back.residual_history == complete_result.residual_history
    assert back.info == complete_result.info


def test_result_metrics_keys(complete_result):
    m = complete_result.metrics()
    assert {"residual_history", "error_L2_gamma", "error_full", "converged"} <= set(m)
