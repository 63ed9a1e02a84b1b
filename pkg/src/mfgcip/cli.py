"""
Command-line entry point.

    mfgcip [--config PATH] [--out DIR] [--threads N] [--seed S] <command>

Commands: forward, make-data, verify-carleman, transform-check, invert,
sweep, report.  Exit codes: 0 success, 2 configuration error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import carleman as cm
from .grid import GridSpec
from .harness import (
    CSV_HEADER,
    SCHEMA_VERSION,
    SweepRow,
    ConfigError,
    Experiment,
    NoiseSpec,
    add_noise,
    load_config,
    noise_norms,
    run_sweep,
)
from .inversion import (
    InversionDivergedError,
    RBoundViolation,
    SingularSystemError,
    UnidentifiableError,
)
from .mfg_forward import (
    CipData,
    CornerMismatchError,
    DivergedError,
    SolverError,
    generate_cip_data,
    picard_solve,
)
from .mms import endpoint_floor
from .transform import RBoundError, transform

logger = logging.getLogger("mfgcip")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
NUMERIC_ERRORS = (SolverError, DivergedError, InversionDivergedError, SingularSystemError,
                  RBoundViolation, RBoundError, UnidentifiableError, FloatingPointError,
                  np.linalg.LinAlgError)


class CheckFailed(RuntimeError):
    """A verification command ran but its verdict is negative."""


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"schema_version": SCHEMA_VERSION, **obj}, indent=1, sort_keys=True) + "\n")


def _experiment(args) -> Experiment:
    return Experiment(args.cfg)


# commands --------------------------------------------------------------------


def cmd_forward(args) -> None:
    exp = _experiment(args)
    inst = exp.instance
    fw = args.cfg["forward"]
    q, F, du, dm = inst.boundary
    q = q + float(fw["q_shift"])
    F = F + float(fw["F_shift"])
    summary = {}
    for name, b in (("reference", inst.b_reference), ("truth", inst.b_true)):
        sol = picard_solve(inst.coefficients(b), q, F, du, dm, inst.solver_config)
        sol.save(args.out / "forward" / name)
        b.save(args.out / "forward" / name / "b.field")
        summary[name] = {"picard_iters": len(sol.picard_residuals), "last_gap": sol.picard_residuals[-1]}
    _write_json(args.out / "forward" / "forward.json", {"grid": inst.spec.to_dict(), "solutions": summary})


def cmd_make_data(args) -> None:
    exp = _experiment(args).prepare()
    dcfg = args.cfg["data"]
    clean = exp.clean_data(dcfg["mode"])
    delta = float(dcfg["delta"])
    seed = int(args.seed if args.seed is not None else dcfg["seed"])
    data = add_noise(clean, NoiseSpec(delta, seed, tuple(args.cfg["sweep"]["channels"])))
    data.save(args.out / "data")
    rep = noise_norms(clean, data) if delta > 0 else {}
    _write_json(args.out / "data" / "noise.json", {"delta": delta, "seed": seed, "mode": data.mode,
                                                   "norms": rep})


def cmd_verify_carleman(args) -> None:
    c = args.cfg["carleman"]
    inst_cfg = args.cfg["instance"]
    spec = GridSpec([float(inst_cfg["A"])], float(inst_cfg["T"]), [int(c["Nx"])], int(c["Nt"]),
                    float(inst_cfg["gamma"]))
    seed = int(args.seed if args.seed is not None else c["seed"])
    battery = cm.periodic_battery(spec, int(c["count"]), seed)
    base = cm.CarlemanParams(1.0 + 1e-9, float(c["nu"]), spec.gamma)
    lam0 = cm.calibrate_lambda0(battery, base, float(c["C_req"]), window=float(c["window"]))
    grid = c["lambda_grid"] or list(np.linspace(lam0, lam0 + float(c["window"]), 6))
    records = []
    for lam in grid:
        params = base.with_lambda(float(lam))
        for sign in ("-", "+"):
            reps = [cm.check_integral(u, params, sign) for u in battery]
            records.append({"lambda": float(lam), "sign": sign,
                            "admissible_C": min(r.admissible_C for r in reps)})
    refl = max(float(np.max(np.abs(cm.reflect_time(cm.reflect_time(u)).values - u.values))) for u in battery)
    ok = all(r["admissible_C"] > 0 for r in records)
    out = args.out / "carleman"
    _write_json(out / "report.json", {"lambda0": lam0, "records": records, "reflection_gap": refl,
                                      "grid": spec.to_dict(), "pass": ok})
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "sign", "admissible_C"])
        for r in records:
            w.writerow([f"{r['lambda']:.6f}", r["sign"], f"{r['admissible_C']:.6e}"])
    if not ok:
        raise CheckFailed("admissible C is not positive on the whole lambda window")


def cmd_transform_check(args) -> None:
    exp = _experiment(args).prepare()
    inst = exp.instance
    tcfg = args.cfg["transform"]
    coeffs = inst.coefficients(inst.b_reference)
    d1_ = exp.clean_data("complete")
    d2_ = generate_cip_data(inst.reference, "complete")
    tf = transform(inst.truth, inst.reference, inst.b_true, inst.b_reference, coeffs, d1_, d2_,
                   float(tcfg["c"]))
    tf.save(args.out / "transform")
    spec = inst.spec
    floor = endpoint_floor(spec.Nx[0], spec.Nt) if spec.n == 1 else float(tcfg["tol"] or 0.0)
    defects = tf.endpoint_defects()
    limit = float(tcfg["factor"]) * floor
    checks = {"w": defects["w0"] + defects["wT"] <= limit,
              "v0": defects["v0_plus_b"] <= limit, "vT": defects["vT_plus_b"] <= limit,
              "v0_vs_vT": defects["v0_minus_vT"] <= limit}
    _write_json(args.out / "transform" / "check.json", {"defects": defects, "floor": floor,
                                                        "limit": limit, "checks": checks})
    if not all(checks.values()):
        raise CheckFailed(f"endpoint identities exceed {limit:.3e}: {defects}")


def cmd_invert(args) -> None:
    exp = _experiment(args).prepare()
    icfg = args.cfg["invert"]
    if icfg["data"]:
        data = CipData.load(icfg["data"])
    else:
        data = exp.clean_data(args.cfg["data"]["mode"])
    delta = float(args.cfg["data"]["delta"])
    lam = exp.lambda_for(delta, data.mode, [delta] if delta > 0 else [])
    res = exp.invert(data, lam)
    res.save(args.out / "invert")


def cmd_sweep(args) -> None:
    exp = _experiment(args)
    s = args.cfg["sweep"]
    seeds = [int(x) for x in s["seeds"]]
    if args.seed is not None:
        seeds = [args.seed + i for i in range(len(seeds))]
    res = run_sweep(exp, s["deltas"], seeds, s["mode"], args.threads)
    out = args.out / "sweep"
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(res.to_csv())
    (out / "sweep.json").write_text(res.to_json() + "\n")


def cmd_report(args) -> None:
    src = args.out / "sweep" / "sweep.json"
    if not src.exists():
        raise ConfigError(f"no sweep results under {args.out}")
    payload = json.loads(src.read_text())
    rows = payload["rows"]
    lines = [CSV_HEADER] + [SweepRow(**r).csv() for r in rows]
    (args.out / "report.csv").write_text("\n".join(lines) + "\n")
    means: dict = {}
    for r in rows:
        means.setdefault(r["delta"], []).append(r)
    summary = [{"delta": d, "err_gamma": float(np.mean([r["error_L2_gamma"] for r in rs])),
                "err_full": float(np.mean([r["error_full"] for r in rs]))} for d, rs in sorted(means.items())]
    _write_json(args.out / "report.json", {"fitted": payload["fitted"], "baseline": payload["baseline"],
                                           "seed_means": summary})


COMMANDS = {
    "forward": cmd_forward,
    "make-data": cmd_make_data,
    "verify-carleman": cmd_verify_carleman,
    "transform-check": cmd_transform_check,
    "invert": cmd_invert,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="experiment config file")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker processes")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="base random seed")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="mfgcip", parents=[common],
                                description="Mean field games coefficient inverse problem laboratory")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return p


def main(argv=None) -> int:
    try:
        ns = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    args = argparse.Namespace(config=None, out=Path("out"), threads=1, seed=None, verbose=False)
    vars(args).update(vars(ns))
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        args.cfg = load_config(args.config)
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args)
    except (ConfigError, CornerMismatchError, KeyError, ValueError) as exc:
        if isinstance(exc, NUMERIC_ERRORS):
            print(f"mfgcip: numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"mfgcip: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckFailed, *NUMERIC_ERRORS) as exc:
        print(f"mfgcip: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
