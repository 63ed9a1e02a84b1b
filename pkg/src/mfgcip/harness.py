"""
Noise injection, delta sweeps, stability-exponent fitting and experiment
configuration.

Noise is band-limited: each data channel receives a low-order cosine series
with random coefficients, rescaled so that its norm in the matching family
(``H^4`` for ``p, F``, ``H^3`` for ``q, G``, ``H^{2,1}`` for the lateral
Dirichlet traces, ``H^{1,0}`` for the Neumann traces) equals
``delta (1 - 1e-6)``.  Lateral channels are scaled so that the larger of the
trace norm and the norm of its time derivative hits that level.

The noise of two data sets of admissible triples is itself the trace data of
a smooth function, so the traces agree at the space-time corners.  The
perturbations therefore carry envelopes that vanish to second order where
two channels meet: ``(1 - (x_i/A_i)^2)^3`` for the endpoint channels and
``(t (T - t))^3`` for the lateral ones.
"""

from __future__ import annotations

import configparser
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import multiprocessing as mp
import numpy as np

from .carleman import holder_exponent, lambda_of_delta
from .grid import Field, GridSpec, d1, norm_H10_lateral, norm_H21_lateral, norm_Hk_space
from .instances import DEFAULTS as INSTANCE_DEFAULTS
from .instances import Instance
from .inversion import InverseProblemSpec, error_report, region_rms, solve_outer
from .mfg_forward import CipData, generate_cip_data

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CHANNELS = ("p", "q", "F", "G", "f0", "f1", "g0", "g1")
SPACE_ORDER = {"p": 4, "F": 4, "q": 3, "G": 3}
LATERAL_NORM = {"f0": norm_H21_lateral, "g0": norm_H21_lateral,
                "f1": norm_H10_lateral, "g1": norm_H10_lateral}
CSV_HEADER = "delta,seed,mode,lambda,err_gamma,err_full"
NOISE_MODES = 6


# noise -----------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    delta: float
    seed: int = 0
    channels: tuple = CHANNELS
    stream: int = 0

    def __post_init__(self):
        if not 0.0 <= self.delta < 1.0:
            raise ValueError("delta must lie in [0, 1)")
        bad = set(self.channels) - set(CHANNELS)
        if bad:
            raise ValueError(f"unknown noise channels: {sorted(bad)}")


def _envelope(coords: list[np.ndarray], kinds: list[str]) -> np.ndarray:
    out = np.ones(tuple(c.size for c in coords))
    for ax, (c, kind) in enumerate(zip(coords, kinds)):
        if kind == "space":
            half = 0.5 * (c[-1] - c[0])
            mid = 0.5 * (c[-1] + c[0])
            e = (1.0 - ((c - mid) / half) ** 2) ** 3
        else:
            T = c[-1] - c[0]
            e = ((c - c[0]) * (c[-1] - c) / (0.25 * T * T)) ** 3
        out = out * e.reshape([-1 if i == ax else 1 for i in range(len(coords))])
    return out


def _cosine_series(rng: np.random.Generator, coords: list[np.ndarray], lengths: list[float]) -> np.ndarray:
    """Random tensor-product cosine series on a tensor grid, coefficients decaying like 1/(1+j)^2."""
    J = NOISE_MODES
    shape = tuple(c.size for c in coords)
    coef = rng.standard_normal((J,) * len(coords))
    for ax in range(len(coords)):
        decay = 1.0 / (1.0 + np.arange(J)) ** 2
        coef = coef * decay.reshape([-1 if i == ax else 1 for i in range(len(coords))])
    basis = [np.cos(np.pi * np.outer(np.arange(J), c - c[0]) / L) for c, L in zip(coords, lengths)]
    out = coef
    for B in basis:
        out = np.tensordot(out, B, axes=([0], [0]))
    return out.reshape(shape)


def _face_coords(spec: GridSpec, axis: int) -> tuple[list[np.ndarray], list[float]]:
    coords = [spec.t] + [spec.axis(j) for j in range(spec.n) if j != axis]
    lengths = [spec.T] + [2.0 * spec.A[j] for j in range(spec.n) if j != axis]
    return coords, lengths


def _dt_face(f: Field) -> Field:
    return f.like(d1(f.values, f.spec.tau, 0))


def lateral_channel_norms(faces: dict, norm) -> tuple[float, float]:
    """Combined (trace, time-derivative) norms of one lateral channel over its faces."""
    tr = math.sqrt(sum(norm(f) ** 2 for f in faces.values()))
    td = math.sqrt(sum(norm(_dt_face(f)) ** 2 for f in faces.values()))
    return tr, td


def add_noise(data: CipData, spec: NoiseSpec) -> CipData:
    """Perturbed copy of ``data``; each selected channel sits at norm distance ``delta (1 - 1e-6)``."""
    if spec.delta == 0.0:
        return data.replace()
    g = data.spec
    level = spec.delta * (1.0 - 1e-6)
    rng = np.random.default_rng([spec.seed, spec.stream])
    out = {}
    space_coords = [g.axis(i) for i in range(g.n)]
    space_len = [2.0 * A for A in g.A]
    for name in CHANNELS:
        # draw every channel so that the stream does not depend on the selection
        if name in SPACE_ORDER:
            e = Field.space(g, _cosine_series(rng, space_coords, space_len)
                            * _envelope(space_coords, ["space"] * g.n))
            if name in spec.channels:
                e = e * (level / norm_Hk_space(e, SPACE_ORDER[name]))
                out[name] = getattr(data, name) + e
            continue
        faces = getattr(data, name)
        pert = {}
        for key in sorted(faces):
            coords, lengths = _face_coords(g, key[0])
            env = _envelope(coords, ["time"] + ["space"] * (g.n - 1))
            pert[key] = faces[key].like(_cosine_series(rng, coords, lengths) * env)
        if name in spec.channels and pert:
            scale = level / max(lateral_channel_norms(pert, LATERAL_NORM[name]))
            out[name] = {k: faces[k] + pert[k] * scale for k in faces}
    return data.replace(**out)


def noise_norms(clean: CipData, noisy: CipData) -> dict[str, dict]:
    """Re-measured distances per channel; lateral channels report trace and time-derivative norms."""
    rep = {}
    for name in CHANNELS:
        if name in SPACE_ORDER:
            d = getattr(noisy, name) - getattr(clean, name)
            rep[name] = {"norm": norm_Hk_space(d, SPACE_ORDER[name])}
            continue
        a, b = getattr(clean, name), getattr(noisy, name)
        diff = {k: b[k] - a[k] for k in a}
        if not diff:
            continue
        tr, td = lateral_channel_norms(diff, LATERAL_NORM[name])
        rep[name] = {"norm": max(tr, td), "trace": tr, "dt": td, "binding": "dt" if td >= tr else "trace"}
    return rep


# slope fitting ---------------------------------------------------------------


class FitError(ValueError):
    pass


def fit_slope(deltas, errors, baseline: float = 0.0) -> dict[str, float]:
    """Log-log least squares of ``error ~ B delta^alpha`` after removing ``baseline`` in quadrature.

    Repeated deltas are averaged first.
    """
    deltas = np.asarray(deltas, dtype=float)
    errors = np.asarray(errors, dtype=float)
    grid = np.unique(deltas)
    mean = np.array([errors[deltas == d].mean() for d in grid])
    adj2 = mean**2 - baseline**2
    keep = (grid > 0) & (adj2 > 0)
    if keep.sum() < 3:
        raise FitError("need at least 3 distinct deltas with errors above the baseline")
    X, Y = np.log(grid[keep]), 0.5 * np.log(adj2[keep])
    alpha, logB = np.polyfit(X, Y, 1)
    pred = logB + alpha * X
    ss_res = float(np.sum((Y - pred) ** 2))
    ss_tot = float(np.sum((Y - Y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return {"alpha_hat": float(alpha), "B_hat": float(math.exp(logB)), "r2": r2}


# configuration ---------------------------------------------------------------


CONFIG_DEFAULTS: dict = {
    "instance": dict(INSTANCE_DEFAULTS),
    "forward": {"q_shift": 0.0, "F_shift": 0.0},
    "data": {"mode": "complete", "delta": 0.0, "seed": 0},
    "inversion": {"lambda": None, "nu": 3.0, "eps": 1e-6, "outer_iters": 20, "outer_tol": 1e-6,
                  "solver": "auto", "c": 1e-8},
    "invert": {"data": None},
    "sweep": {"deltas": [1e-4, 3e-4, 1e-3, 3e-3, 1e-2], "seeds": [0, 1, 2], "mode": "complete",
              "channels": list(CHANNELS)},
    "carleman": {"nu": 3.0, "lambda_grid": None, "count": 20, "seed": 0, "Nx": 201, "Nt": 101,
                 "C_req": 1.0, "window": 10.0},
    "transform": {"c": 1e-8, "factor": 5.0, "tol": None},
}
"""Every tunable parameter with its default; config files override these keys only."""


class ConfigError(ValueError):
    pass


def _parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("none", "null", ""):
        return None
    if low in ("true", "false"):
        return low == "true"
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text.strip("'\"")


def parse_config_text(text: str) -> dict:
    """``key = value`` lines grouped in ``[table]`` / ``[table.sub]`` sections; values are JSON or bare words."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string("[__root__]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    out: dict = {}
    for section in cp.sections():
        node = out
        if section != "__root__":
            for part in section.split("."):
                node = node.setdefault(part, {})
                if not isinstance(node, dict):
                    raise ConfigError(f"table [{section}] collides with a key")
        for key, val in cp.items(section):
            node[key] = _parse_value(val)
    return out


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in base.items()}
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{path + k!r} must be a table")
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


def load_config(path=None, text: str | None = None) -> dict:
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    over = parse_config_text(text or "")
    return _merge(CONFIG_DEFAULTS, over)


# experiments -----------------------------------------------------------------


@dataclass
class Experiment:
    """A truth/reference pair on the configured instance plus inversion settings."""

    config: dict

    def __post_init__(self):
        try:
            self.instance = Instance(dict(self.config["instance"]))
        except KeyError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def spec(self) -> GridSpec:
        return self.instance.spec

    def prepare(self) -> "Experiment":
        self.instance.reference, self.instance.truth  # noqa: B018 (solve and cache)
        return self

    def clean_data(self, mode: str) -> CipData:
        return generate_cip_data(self.instance.truth, mode)

    def lambda_for(self, delta: float, mode: str, deltas) -> float:
        inv = self.config["inversion"]
        spec = self.spec
        pos = [d for d in deltas if d > 0]
        if mode == "complete" or delta <= 0:
            if inv["lambda"] is not None:
                return float(inv["lambda"])
            delta = min(pos) if pos else 1e-4
        return lambda_of_delta(delta, spec.gamma, spec.A[0], inv["nu"])

    def invert(self, data: CipData, lam: float):
        inv = self.config["inversion"]
        inst = self.instance
        ips = InverseProblemSpec(data, inst.reference, inst.coefficients(inst.b_reference), lam=lam,
                                 nu=inv["nu"], eps=inv["eps"], outer_iters=int(inv["outer_iters"]),
                                 outer_tol=inv["outer_tol"], solver=inv["solver"], c=inv["c"])
        return solve_outer(ips, inst.b_true)


@dataclass
class SweepRow:
    delta: float
    seed: int
    mode: str
    lambda_used: float
    error_L2_gamma: float
    error_full: float
    residual: float
    rms_gamma: float = float("nan")
    rms_complement: float = float("nan")
    error: str = ""

    def csv(self) -> str:
        return (f"{self.delta:.6e},{self.seed},{self.mode},{self.lambda_used:.10e},"
                f"{self.error_L2_gamma:.10e},{self.error_full:.10e}")


@dataclass
class SweepResult:
    rows: list[SweepRow]
    baseline: SweepRow
    fitted: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        return "\n".join([CSV_HEADER] + [r.csv() for r in self.rows]) + "\n"

    def to_json(self) -> str:
        return json.dumps({"schema_version": SCHEMA_VERSION, "rows": [asdict(r) for r in self.rows],
                           "baseline": asdict(self.baseline), "fitted": self.fitted},
                          indent=1, sort_keys=True)

    def seed_means(self, key: str = "error_L2_gamma") -> dict[float, float]:
        out = {}
        for d in sorted({r.delta for r in self.rows}):
            vals = [getattr(r, key) for r in self.rows if r.delta == d and not r.error]
            out[d] = float(np.mean(vals)) if vals else float("nan")
        return out


_WORKER: dict = {}


def _run_point(args) -> SweepRow:
    delta, d_index, seed, mode, deltas = args
    exp: Experiment = _WORKER["experiment"]
    lam = exp.lambda_for(delta, mode, deltas)
    channels = tuple(exp.config["sweep"]["channels"])
    try:
        data = exp.clean_data(mode)
        if delta > 0:
            data = add_noise(data, NoiseSpec(delta, int(seed), channels, stream=int(d_index)))
        res = exp.invert(data, lam)
        rms = region_rms(res.b_hat, exp.instance.b_true)
        return SweepRow(delta, int(seed), mode, lam, res.error_L2_gamma, res.error_full,
                        res.residual_history[-1], rms["gamma"], rms["complement"])
    except Exception as exc:  # noqa: BLE001 - recorded per row, sweep continues
        logger.warning("sweep point delta=%g seed=%d failed: %s", delta, seed, exc)
        nan = float("nan")
        return SweepRow(delta, int(seed), mode, lam, nan, nan, nan, error=f"{type(exc).__name__}: {exc}")


def run_sweep(experiment: Experiment, deltas, seeds, mode: str = "complete", threads: int = 1) -> SweepResult:
    """Noise, invert and score every ``(delta, seed)``; results come back in grid order."""
    if mode not in ("complete", "incomplete"):
        raise ConfigError("mode must be 'complete' or 'incomplete'")
    experiment.prepare()
    deltas = [float(d) for d in deltas]
    tasks = [(d, i, s, mode, tuple(deltas)) for i, d in enumerate(deltas) for s in seeds]
    tasks.append((0.0, -1, 0, mode, tuple(deltas)))
    _WORKER["experiment"] = experiment
    if threads <= 1:
        rows = [_run_point(t) for t in tasks]
    else:
        ctx = mp.get_context("fork")
        with ProcessPoolExecutor(max_workers=threads, mp_context=ctx) as pool:
            rows = list(pool.map(_run_point, tasks))
    baseline = rows.pop()
    result = SweepResult(rows, baseline)
    spec = experiment.spec
    fitted: dict = {"alpha_predicted": holder_exponent(spec.gamma, spec.A[0],
                                                       experiment.config["inversion"]["nu"])}
    ok = [r for r in rows if not r.error]
    for key, name in (("error_full", "full"), ("error_L2_gamma", "gamma")):
        base = getattr(baseline, key) if not baseline.error else 0.0
        try:
            fit = fit_slope([r.delta for r in ok], [getattr(r, key) for r in ok], base)
        except FitError as exc:
            fit = {"alpha_hat": float("nan"), "B_hat": float("nan"), "r2": float("nan"), "flag": str(exc)}
        fitted[name] = fit
    result.fitted = fitted
    return result
