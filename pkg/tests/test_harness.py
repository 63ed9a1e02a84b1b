from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfgcip.harness import (
    CHANNELS,
    CSV_HEADER,
    ConfigError,
    Experiment,
    FitError,
    NoiseSpec,
    add_noise,
    fit_slope,
    load_config,
    noise_norms,
    parse_config_text,
    run_sweep,
)
from mfgcip.mfg_forward import generate_cip_data


@pytest.fixture(scope="module")
def clean(small_instance):
    return generate_cip_data(small_instance.truth, "complete")


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(1.0)
    with pytest.raises(ValueError):
        NoiseSpec(0.1, channels=("p", "zz"))


def test_zero_noise_is_identity(clean):
    out = add_noise(clean, NoiseSpec(0.0))
    for name in ("p", "q", "F", "G"):
        assert np.array_equal(getattr(out, name).values, getattr(clean, name).values)


@pytest.mark.parametrize("delta", [1e-4, 1e-2])
def test_noise_levels(clean, delta):
    rep = noise_norms(clean, add_noise(clean, NoiseSpec(delta, seed=3)))
    assert set(rep) == set(CHANNELS)
    for name, r in rep.items():
        assert 0.99 * delta <= r["norm"] <= delta, name


def test_noise_binding_constraint_recorded(clean):
    rep = noise_norms(clean, add_noise(clean, NoiseSpec(1e-3)))
    for name in ("f0", "f1", "g0", "g1"):
        assert rep[name]["binding"] in ("trace", "dt")
        assert max(rep[name]["trace"], rep[name]["dt"]) == pytest.approx(rep[name]["norm"])


def test_noise_deterministic_and_seeded(clean):
    a = add_noise(clean, NoiseSpec(1e-3, seed=1))
    b = add_noise(clean, NoiseSpec(1e-3, seed=1))
    c = add_noise(clean, NoiseSpec(1e-3, seed=2))
    assert np.array_equal(a.p.values, b.p.values)
    assert not np.array_equal(a.p.values, c.p.values)


def test_noise_channel_selection_keeps_stream(clean):
    full = add_noise(clean, NoiseSpec(1e-3, seed=1))
    only_g = add_noise(clean, NoiseSpec(1e-3, seed=1, channels=("G",)))
    assert np.array_equal(only_g.p.values, clean.p.values)
    assert np.array_equal(only_g.G.values, full.G.values)


def test_noise_is_corner_compatible(clean):
    noisy = add_noise(clean, NoiseSpec(1e-2, seed=5))
    for name in ("p", "q", "F", "G"):
        d = (getattr(noisy, name) - getattr(clean, name)).values
        assert d[0] == pytest.approx(0.0, abs=1e-15) and d[-1] == pytest.approx(0.0, abs=1e-15)
    for key in clean.faces():
        d = (noisy.f0[key] - clean.f0[key]).values
        assert abs(d[0]) < 1e-15 and abs(d[-1]) < 1e-15


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 2.0), st.floats(0.01, 100.0))
def test_fit_slope_exact_power_law(alpha, B):
    d = np.array([1e-4, 3e-4, 1e-3, 3e-3, 1e-2])
    fit = fit_slope(d, B * d**alpha)
    assert fit["alpha_hat"] == pytest.approx(alpha, abs=1e-9)
    assert fit["B_hat"] == pytest.approx(B, rel=1e-8)
    assert fit["r2"] == pytest.approx(1.0)


def test_fit_slope_baseline_and_repeats():
    d = np.array([1e-3, 1e-2, 1e-1])
    base = 1e-4
    err = np.sqrt((2 * d) ** 2 + base**2)
    fit = fit_slope(np.repeat(d, 2), np.repeat(err, 2), baseline=base)
    assert fit["alpha_hat"] == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(FitError):
        fit_slope([1e-3, 1e-2], [1.0, 2.0])


def test_config_parsing():
    cfg = parse_config_text("""
[instance]
Nx = 41   # comment
[inversion]
lambda = none
solver = direct
[sweep]
deltas = [1e-3, 1e-2]
""")
    assert cfg["instance"]["Nx"] == 41
    assert cfg["inversion"] == {"lambda": None, "solver": "direct"}
    assert cfg["sweep"]["deltas"] == [1e-3, 1e-2]
    assert parse_config_text("[a.b]\nc = true") == {"a": {"b": {"c": True}}}


def test_config_merge_and_errors(tmp_path):
    cfg = load_config(text="[instance]\nNx = 41")
    assert cfg["instance"]["Nx"] == 41 and cfg["instance"]["Nt"] == 101
    with pytest.raises(ConfigError):
        load_config(text="[instance]\nbogus = 1")
    with pytest.raises(ConfigError):
        load_config(text="instance = 3")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")
    with pytest.raises(ConfigError):
        load_config(text="[broken")


def _experiment(N=21, **inv):
    cfg = load_config(text=f"[instance]\nNx = {N}\nNt = {N}")
    cfg["inversion"].update(inv)
    return Experiment(cfg)


def test_lambda_selection():
    exp = _experiment()
    lam_c = exp.lambda_for(1e-2, "complete", [1e-4, 1e-2])
    assert lam_c == exp.lambda_for(1e-4, "incomplete", [1e-4])
    assert exp.lambda_for(1e-2, "incomplete", [1e-4, 1e-2]) < lam_c
    fixed = _experiment(**{"lambda": 0.3})
    assert fixed.lambda_for(1e-2, "complete", [1e-2]) == 0.3
    assert fixed.lambda_for(0.0, "incomplete", [1e-2]) == 0.3
    assert fixed.lambda_for(1e-2, "incomplete", [1e-2]) != 0.3


def test_sweep_rows_csv_and_threads():
    exp = _experiment()
    res1 = run_sweep(exp, [1e-3, 3e-3, 1e-2], [0], "complete", threads=1)
    res2 = run_sweep(_experiment(), [1e-3, 3e-3, 1e-2], [0], "complete", threads=2)
    assert res1.to_csv() == res2.to_csv()
    lines = res1.to_csv().splitlines()
    assert lines[0] == CSV_HEADER and len(lines) == 4
    payload = json.loads(res1.to_json())
    assert payload["schema_version"] == 1
    assert {"alpha_predicted", "full", "gamma"} <= set(payload["fitted"])
    assert res1.baseline.delta == 0.0
    means = res1.seed_means("error_full")
    assert list(means) == [1e-3, 3e-3, 1e-2]


def test_sweep_rejects_bad_mode():
    with pytest.raises(ConfigError):
        run_sweep(_experiment(), [1e-3], [0], "partial")


def test_experiment_rejects_unknown_instance_key():
    cfg = load_config()
    cfg["instance"]["bogus"] = 1
    with pytest.raises(ConfigError):
        Experiment(cfg)
