from __future__ import annotations

import numpy as np
import pytest

from mfgcip.instances import DEFAULTS, Instance, standard_instance
from mfgcip.mfg_forward import check_corners, generate_cip_data, hjb_residual


def test_unknown_parameter():
    with pytest.raises(KeyError):
        Instance({"nope": 1})


def test_defaults_and_overrides():
    inst = standard_instance(Nx=21)
    assert inst.params["Nx"] == 21 and inst.params["Nt"] == DEFAULTS["Nt"]


def test_corner_compatibility():
    inst = standard_instance(Nx=21, Nt=21)
    check_corners(*inst.boundary, atol=1e-12)


def test_bump_and_drift_vanish_on_boundary():
    inst = standard_instance(Nx=21, Nt=5)
    assert inst.bump.values[[0, -1]] == pytest.approx(0.0, abs=1e-15)
    assert inst.a.values[[0, -1]] == pytest.approx(0.0, abs=1e-15)
    assert np.all(inst.b_true.values >= inst.b_reference.values)


def test_kernel_tail_vanishes_at_faces():
    inst = standard_instance(Nx=21, Nt=5)
    _, K2 = inst.kernel_shape
    assert np.all(K2[0] == 0.0) and np.all(K2[:, -1] == 0.0)


def test_two_dimensional_smoke():
    inst = standard_instance(n=2, Nx=13, Nt=13)
    sol = inst.truth
    assert sol.picard_residuals[-1] <= inst.solver_config.tol
    assert np.max(np.abs(hjb_residual(inst.coefficients(inst.b_true), sol.u, sol.m))) < 1e-8
    assert np.all(sol.m.values > 0)
    data = generate_cip_data(sol, "incomplete")
    assert (0, -1) not in data.faces() and len(data.faces()) == 3
