from __future__ import annotations

import json

import pytest

from mfgcip.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from mfgcip.harness import CSV_HEADER

SMALL = """
[instance]
Nx = 21
Nt = 21
[sweep]
deltas = [1e-3, 3e-3, 1e-2]
seeds = [0]
[carleman]
Nx = 41
Nt = 21
count = 3
lambda_grid = [2.0, 4.0]
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "cfg.ini"
    p.write_text(SMALL)
    return p


def _run(cfg, out, *cmd):
    return main(["--config", str(cfg), "--out", str(out), *cmd])


def test_forward_and_make_data(cfg, tmp_path):
    assert _run(cfg, tmp_path, "forward") == EXIT_OK
    meta = json.loads((tmp_path / "forward" / "forward.json").read_text())
    assert meta["schema_version"] == 1 and set(meta["solutions"]) == {"reference", "truth"}
    assert main(["make-data", "--config", str(cfg), "--out", str(tmp_path), "--seed", "4"]) == EXIT_OK
    noise = json.loads((tmp_path / "data" / "noise.json").read_text())
    assert noise["seed"] == 4


def test_invert_from_saved_data(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(SMALL + f"\n[data]\nmode = incomplete\n[invert]\ndata = {tmp_path / 'data'}\n")
    assert _run(cfg, tmp_path, "make-data") == EXIT_OK
    assert _run(cfg, tmp_path, "invert") == EXIT_OK
    metrics = json.loads((tmp_path / "invert" / "metrics.json").read_text())
    assert metrics["converged"]


def test_sweep_and_report(cfg, tmp_path):
    assert _run(cfg, tmp_path, "sweep") == EXIT_OK
    csv = (tmp_path / "sweep" / "sweep.csv").read_text()
    assert csv.splitlines()[0] == CSV_HEADER and len(csv.splitlines()) == 4
    assert _run(cfg, tmp_path, "report") == EXIT_OK
    assert (tmp_path / "report.csv").read_text() == csv
    rep = json.loads((tmp_path / "report.json").read_text())
    assert len(rep["seed_means"]) == 3


def test_report_without_sweep(cfg, tmp_path):
    assert _run(cfg, tmp_path, "report") == EXIT_CONFIG


def test_verify_carleman(cfg, tmp_path):
    assert _run(cfg, tmp_path, "verify-carleman") == EXIT_OK
    rep = json.loads((tmp_path / "carleman" / "report.json").read_text())
    assert rep["pass"] and rep["reflection_gap"] <= 1e-12
    assert len(rep["records"]) == 4


def test_transform_check(cfg, tmp_path):
    code = _run(cfg, tmp_path, "transform-check")
    check = json.loads((tmp_path / "transform" / "check.json").read_text())
    assert code == (EXIT_OK if all(check["checks"].values()) else EXIT_NUMERIC)
    assert check["floor"] > 0


@pytest.mark.parametrize("text", ["[instance]\nbogus = 1", "[forward]\nq_shift = 0.5", "[data]\nmode = partial"])
def test_config_errors(tmp_path, text):
    p = tmp_path / "bad.ini"
    p.write_text(SMALL + "\n" + text)
    cmd = "make-data" if "mode" in text else "forward"
    assert _run(p, tmp_path, cmd) == EXIT_CONFIG


def test_argument_errors(tmp_path):
    assert main(["nonsense"]) == EXIT_CONFIG
    assert main(["--threads", "0", "--out", str(tmp_path), "report"]) == EXIT_CONFIG
    assert main(["--config", str(tmp_path / "nope.ini"), "forward"]) == EXIT_CONFIG


def test_numerical_failure_code(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text(SMALL + "\n[inversion]\nc = 1e6\n")
    assert _run(p, tmp_path, "invert") == EXIT_NUMERIC
