from __future__ import annotations

import numpy as np
import pytest

from mfgcip.grid import Field, GridSpec
from mfgcip.mfg_forward import generate_cip_data
from mfgcip.mms import endpoint_floor
from mfgcip.transform import (
    RBoundError,
    TransformedFields,
    calibrate_C1,
    ramp,
    residual_bounds,
    transform,
)


def _transform(inst, c=1e-8):
    co = inst.coefficients(inst.b_reference)
    return transform(inst.truth, inst.reference, inst.b_true, inst.b_reference, co,
                     generate_cip_data(inst.truth), generate_cip_data(inst.reference), c)


@pytest.fixture(scope="module")
def tf(mid_instance):
    return _transform(mid_instance)


def test_endpoint_identities_within_floor(tf):
    floor = endpoint_floor(51)
    d = tf.endpoint_defects()
    assert d["w0"] + d["wT"] <= 5 * floor
    assert d["v0_plus_b"] <= 5 * floor
    assert d["vT_plus_b"] <= 5 * floor
    assert d["v0_minus_vT"] <= 5 * floor


def test_zero_difference_gives_zero_fields(small_instance):
    inst = small_instance
    co = inst.coefficients(inst.b_reference)
    data = generate_cip_data(inst.reference)
    out = transform(inst.reference, inst.reference, inst.b_reference, inst.b_reference, co, data, data)
    for name in ("u_tilde", "m_tilde", "v", "w", "b_tilde"):
        assert getattr(out, name).max_abs() == 0.0
    assert out.data_norm == 0.0


def test_R_guard(small_instance):
    with pytest.raises(RBoundError):
        _transform(small_instance, c=1e6)


def test_ramp_interpolates():
    spec = GridSpec([1.0], 2.0, [5], 5, 1.0)
    f0, fT = Field.space(spec, np.zeros(5)), Field.space(spec, np.ones(5))
    r = ramp(spec, f0, fT)
    assert r.values[:, 0] == pytest.approx(spec.t / 2.0)


def test_save_load(tf, tmp_path):
    tf.save(tmp_path / "t")
    back = TransformedFields.load(tmp_path / "t")
    assert np.array_equal(back.v.values, tf.v.values)
    assert len(back.P) == len(tf.P)
    assert back.endpoint_defects() == tf.endpoint_defects()


def test_inequalities_with_calibrated_constant(tf):
    C1 = calibrate_C1(tf)
    assert np.isfinite(C1) and C1 > 0
    lhs1, rhs1, lhs2, rhs2 = residual_bounds(tf, C1)
    inner = (slice(1, -1), slice(1, -1))
    assert np.mean(lhs1.values[inner] <= rhs1.values[inner] * (1 + 1e-12)) >= 0.99
    assert np.mean(lhs2.values[inner] <= rhs2.values[inner] * (1 + 1e-12)) >= 0.99
    # larger constants only relax the bounds
    r1_big = residual_bounds(tf, 2 * C1)[1]
    assert np.all(r1_big.values >= rhs1.values)
