from __future__ import annotations

import numpy as np
import pytest

from mfgcip.grid import DomainMismatchError, Field, GridSpec
from mfgcip.kernel import (
    KernelSpec,
    apply_interaction,
    check_R_bound,
    compute_R,
    gaussian_kernel,
    interaction_matrix,
)

SPEC = GridSpec([1.0], 1.0, [21], 5, 1.0)
SPEC2 = GridSpec([1.0, 0.5], 1.0, [11, 7], 5, 1.0)


def _ones(spec):
    return Field.space(spec, np.ones(spec.space_shape))


def test_bracket_of_constant_density_1d():
    K1, K2 = 0.8, 0.3
    L = interaction_matrix(SPEC, K1, np.full((21, 21), K2))
    x = SPEC.axis(0)
    assert L @ np.ones(21) == pytest.approx(K1 + K2 * (1.0 - x), abs=1e-12)


def test_bracket_of_constant_density_2d():
    K1 = np.ones((7, 7))
    L = interaction_matrix(SPEC2, K1, np.zeros((11, 7, 11, 7)))
    # slice integral over x2 in [-0.5, 0.5]
    assert L @ np.ones(77) == pytest.approx(np.ones(77))


def test_apply_interaction_scales_with_b():
    b = Field.space(SPEC, 2.0 + SPEC.axis(0))
    k = KernelSpec(SPEC, 1.0, 0.0, b, 10.0)
    m = Field.spacetime(SPEC, np.ones(SPEC.spacetime_shape))
    assert apply_interaction(k, m).values == pytest.approx(np.broadcast_to(b.values, (5, 21)))
    assert compute_R(k, m).values == pytest.approx(-np.ones((5, 21)))


def test_kernel_validation():
    b = _ones(SPEC)
    with pytest.raises(ValueError):
        KernelSpec(SPEC, np.ones(2), 0.0, b, 10.0)
    with pytest.raises(ValueError):
        KernelSpec(SPEC, 1.0, np.ones((3, 3)), b, 10.0)
    with pytest.raises(ValueError):
        KernelSpec(SPEC, 20.0, 0.0, b, 10.0)
    with pytest.raises(DomainMismatchError):
        KernelSpec(SPEC, 1.0, 0.0, _ones(SPEC2), 10.0)


def test_R_bound():
    R = Field.space(SPEC, np.linspace(0.1, 1.0, 21))
    assert check_R_bound(R, 0.05) == (True, pytest.approx(0.1))
    assert check_R_bound(R, 0.5)[0] is False


def test_gaussian_kernel_normalization():
    k = gaussian_kernel(SPEC, 0.3)
    assert float(k.K1) == 1.0
    x = SPEC.axis(0)
    assert k.K2[10, 10] == pytest.approx(1.0 / (2 * np.pi * 0.3))
    assert k.K2[0, 20] == pytest.approx(np.exp(-4 / 0.18) / (2 * np.pi * 0.3))
    assert x.size == 21
    with pytest.raises(ValueError):
        gaussian_kernel(SPEC, -1.0)


def test_kernel_save_load(tmp_path):
    k = gaussian_kernel(SPEC2, [0.3, 0.2])
    k.save(tmp_path / "k")
    k2 = KernelSpec.load(tmp_path / "k")
    assert np.array_equal(k2.K2, k.K2) and np.array_equal(k2.K1, k.K1) and k2.M == k.M
