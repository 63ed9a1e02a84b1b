"""
Carleman weight machinery with a time-independent weight.

``psi(x) = x1 + A_1 + 2`` and ``phi = exp(2 lambda psi^nu)``.  ``phi`` itself
overflows double precision long before the interesting lambda range ends, so
every weighted quantity is computed with the max-normalized weight
``exp(2 lambda psi^nu - 2 lambda (2A_1 + 2)^nu)``.  All estimates checked
here are homogeneous of degree one in the weight, so the normalization never
changes a verdict.

The functions ``eval_V``/``eval_U`` evaluate the exact potential ``V`` and
flux ``U`` of the pointwise estimate; their time derivative and divergence
are then taken with the grid stencils.  The operator ``d_t + Lap`` is
handled by the reflection ``t -> T - t``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .grid import (
    DomainMismatchError,
    Field,
    GridSpec,
    boundary_flux,
    d1,
    d2,
    divergence,
    dt,
    integrate,
    lateral_norms_from_spacetime,
)


@dataclass(frozen=True)
class CarlemanParams:
    lam: float
    nu: float = 3.0
    gamma: float = 1.0
    lambda0: float | None = None

    def __post_init__(self):
        if not self.lam > 1.0:
            raise ValueError("lambda must exceed 1")
        if not self.nu > 2.0:
            raise ValueError("nu must exceed 2")
        if not self.gamma > 0.0:
            raise ValueError("gamma must be positive")

    def with_lambda(self, lam: float) -> "CarlemanParams":
        return CarlemanParams(lam, self.nu, self.gamma, self.lambda0)


# weights -------------------------------------------------------------------


def psi(x1, A1: float):
    x1 = np.asarray(x1, dtype=float)
    if np.any(x1 < -A1 - 1e-12) or np.any(x1 > A1 + 1e-12):
        raise ValueError("x1 outside [-A_1, A_1]")
    out = x1 + A1 + 2.0
    return float(out) if out.ndim == 0 else out


def log_cwf(x1, A1: float, lam: float, nu: float):
    return 2.0 * lam * np.power(psi(x1, A1), nu)


def cwf_scaled(x1, A1: float, lam: float, nu: float):
    """``phi / max phi``, in (0, 1]."""
    return np.exp(log_cwf(x1, A1, lam, nu) - 2.0 * lam * (2.0 * A1 + 2.0) ** nu)


def lambda_of_delta(delta: float, gamma: float, A1: float, nu0: float) -> float:
    """Carleman parameter balancing data error against the weight ratio."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    d = 1.5 * ((gamma + 2.0) ** nu0 - 2.0**nu0 + (2.0 * A1 + 2.0) ** nu0)
    return math.log(1.0 / delta) / d


def holder_exponent(gamma: float, A1: float, nu0: float) -> float:
    if not 0.0 < gamma < 2.0 * A1:
        raise ValueError("gamma must lie in (0, 2*A_1)")
    num = (gamma + 2.0) ** nu0 - 2.0**nu0
    return num / (num + (2.0 * A1 + 2.0) ** nu0)


# V and U -------------------------------------------------------------------


class _Derivs:
    """Grid derivatives of a spacetime array, computed once."""

    def __init__(self, spec: GridSpec, u: np.ndarray):
        self.spec = spec
        self.u = u
        self.ut = d1(u, spec.tau, 0)
        self.ux = [d1(u, h, i + 1) for i, h in enumerate(spec.h)]
        n = spec.n
        self.uxx = [[None] * n for _ in range(n)]
        for i in range(n):
            self.uxx[i][i] = d2(u, spec.h[i], i + 1)
            for j in range(i + 1, n):
                mixed = d1(self.ux[i], spec.h[j], j + 1)
                self.uxx[i][j] = self.uxx[j][i] = mixed

    @property
    def lap(self):
        return sum(self.uxx[i][i] for i in range(self.spec.n))


def _weights(spec: GridSpec, p: CarlemanParams):
    x1 = spec.spacetime_mesh()[1]
    ps = psi(x1, spec.A[0])
    phi = cwf_scaled(x1, spec.A[0], p.lam, p.nu)
    return ps, phi


def _v_terms(d: _Derivs, p: CarlemanParams) -> dict[str, np.ndarray]:
    spec = d.spec
    lam, nu = p.lam, p.nu
    ps, phi = _weights(spec, p)
    u = d.u
    c1 = 2.0 * lam / (2.0 * lam + 1.0)
    z = d.ux[0] + lam * nu * ps ** (nu - 1.0) * u
    tang = sum(d.ux[i] ** 2 for i in range(1, spec.n)) if spec.n > 1 else 0.0
    corr = 1.0 - 2.0 * ps ** (-nu) * (nu - 1.0) / (lam * nu)
    grad2 = sum(g**2 for g in d.ux)
    return {
        "V1": c1 * (z**2 + tang) * ps ** (1.0 - nu) * phi,
        "V2": c1 * (-(lam**2) * nu**2 * ps ** (nu - 1.0) * corr * u**2 * phi),
        "V3": (lam**2 / (2.0 * lam + 1.0)) * u**2 * phi + grad2 * phi / (2.0 * lam + 1.0),
    }


def _u_terms(d: _Derivs, p: CarlemanParams) -> dict[str, list[np.ndarray]]:
    """Flux brackets, each returned as a full vector (one array per axis)."""
    spec = d.spec
    n = spec.n
    lam, nu = p.lam, p.nu
    ps, phi = _weights(spec, p)
    u, ut, ux, uxx = d.u, d.ut, d.ux, d.uxx
    c1 = 2.0 * lam / (2.0 * lam + 1.0)
    c2 = 1.0 / (2.0 * lam + 1.0)
    z = ux[0] + lam * nu * ps ** (nu - 1.0) * u
    corr = 1.0 - 2.0 * ps ** (-nu) * (nu - 1.0) / (lam * nu)
    zero = np.zeros_like(u)

    def e1(arr):
        return [arr] + [zero] * (n - 1)

    tang = sum(ux[i] ** 2 for i in range(1, n)) if n > 1 else zero
    out = {
        "U1": e1(c1 * (-2.0 * ut * z * phi * ps ** (1.0 - nu))),
        "U2": e1(c1 * (-2.0 * lam * nu * z**2 * phi + 2.0 * lam * nu * tang * phi)),
        "U3": e1(c1 * (-2.0 * lam**3 * nu**3 * ps ** (2.0 * nu - 2.0) * corr * u**2 * phi)),
        "U5": e1(c1 * (-lam * ux[0] * u * phi + lam**2 * nu * ps ** (nu - 1.0) * u**2 * phi)),
        "U7": [c2 * (-2.0 * ut * ux[i] * phi) for i in range(n)],
    }
    if n > 1:
        def ei(i, arr):
            v = [zero] * n
            v[i] = arr
            return v

        def vsum(vs):
            return [sum(c[k] for c in vs) for k in range(n)]

        out["U4"] = vsum([ei(i, c1 * (-4.0 * lam * nu * z * ux[i] * phi
                                       - 2.0 * ut * ux[i] * phi * ps ** (1.0 - nu)))
                          for i in range(1, n)])
        out["U6"] = vsum([ei(i, c1 * (-lam * ux[i] * u * phi)) for i in range(1, n)])
        out["U8"] = e1(sum(c2 * (-2.0 * uxx[0][i] * ux[i] * phi) for i in range(1, n)))
        out["U9"] = vsum([ei(i, c2 * (2.0 * uxx[0][0] * ux[i] * phi)) for i in range(1, n)])
        out["U10"] = vsum([ei(i, sum(c2 * (uxx[j][j] * ux[i] * phi - uxx[i][j] * ux[j] * phi)
                                     for j in range(1, n)))
                           for i in range(1, n)])
    return out


def eval_V(u: Field, params: CarlemanParams) -> Field:
    u.require("spacetime")
    d = _Derivs(u.spec, u.values)
    return u.like(sum(_v_terms(d, params).values()))


def eval_U(u: Field, params: CarlemanParams) -> list[Field]:
    u.require("spacetime")
    d = _Derivs(u.spec, u.values)
    terms = _u_terms(d, params)
    n = u.spec.n
    return [u.like(sum(t[k] for t in terms.values())) for k in range(n)]


def reflect_time(u: Field) -> Field:
    u.require("spacetime")
    return u.like(u.values[::-1])


# pointwise estimate ---------------------------------------------------------


@dataclass
class PointwiseReport:
    lam: float
    sign: str
    C: float
    min_slack: float
    neg_fraction: float
    slack_field: Field = field(repr=False)
    integral: float = 0.0


def _interior(spec: GridSpec) -> tuple:
    return (slice(1, -1),) + tuple(slice(1, -1) for _ in range(spec.n))


def _slack_minus(u: Field, params: CarlemanParams, C: float, full_hessian: bool = True) -> np.ndarray:
    spec = u.spec
    d = _Derivs(spec, u.values)
    _, phi = _weights(spec, params)
    lam = params.lam
    op = d.ut - d.lap
    lo = 0 if full_hessian else 1
    hess = sum(d.uxx[i][j] ** 2 for i in range(lo, spec.n) for j in range(lo, spec.n)) if spec.n > lo else 0.0
    grad2 = sum(g**2 for g in d.ux)
    V = u.like(sum(_v_terms(d, params).values()))
    Ut = _u_terms(d, params)
    U = [u.like(sum(t[k] for t in Ut.values())) for k in range(spec.n)]
    return (op**2 * phi
            - (C / lam) * (d.ut**2 + hess) * phi
            - C * (lam * grad2 + lam**3 * d.u**2) * phi
            - dt(V).values - divergence(U).values)


def check_pointwise(u: Field, params: CarlemanParams, sign: str = "-", C: float = 0.0) -> PointwiseReport:
    """Slack of the pointwise estimate for ``d_t - Lap`` (sign '-') or ``d_t + Lap`` ('+')."""
    if sign not in ("-", "+"):
        raise ValueError("sign must be '-' or '+'")
    u.require("spacetime")
    if sign == "-":
        slack = _slack_minus(u, params, C)
    else:
        slack = _slack_minus(reflect_time(u), params, C)[::-1]
    inner = slack[_interior(u.spec)]
    fld = u.like(slack)
    return PointwiseReport(params.lam, sign, C, float(inner.min()), float(np.mean(inner < 0.0)),
                           fld, integrate(fld))


# integral estimate -----------------------------------------------------------


@dataclass
class IntegralReport:
    lam: float
    sign: str
    boundary_terms: list[float]
    interior_terms: list[float]
    admissible_C: float
    log_block_weights: list[float]
    hessian_full_term: float
    notes: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return asdict(self)


class PeriodicityError(ValueError):
    """The test function does not satisfy u(., 0) = u(., T)."""


def _boundary_blocks(u: Field) -> tuple[float, float]:
    """Squared Cauchy-data norms on Gamma^- and on the rest of S_T."""
    spec = u.spec
    gm = rest = 0.0
    for ax in range(spec.n):
        for sg in (-1, 1):
            h21, h10 = lateral_norms_from_spacetime(u, ax, sg)
            if (ax, sg) == (0, -1):
                gm += h21**2 + h10**2
            else:
                rest += h21**2 + h10**2
    return gm, rest


def check_integral(u: Field, params: CarlemanParams, sign: str = "-",
                   periodic_tol: float | None = None, log_kappa: float = 0.0) -> IntegralReport:
    """Evaluate the five terms of the integral estimate and the largest admissible C.

    With block weights ``w1 = exp(3 2^nu lam)``, ``w2 = exp(3 lam (2A_1+2)^nu)``
    the estimate reads ``C (w1 B1 + w2 B2) + J >= C (R1 + R2)``; hence
    ``C_max = J / (R1 + R2 - w1 B1 - w2 B2)`` when the bracket is positive and
    ``inf`` otherwise.  ``log_kappa`` multiplies every weight by ``exp(log_kappa)``
    before normalization.
    """
    if sign not in ("-", "+"):
        raise ValueError("sign must be '-' or '+'")
    u.require("spacetime")
    spec = u.spec
    scale = max(1.0, u.max_abs())
    tol = 1e-10 * scale if periodic_tol is None else periodic_tol
    gap = float(np.max(np.abs(u.values[0] - u.values[-1])))
    if gap > tol:
        raise PeriodicityError(f"u(.,0) and u(.,T) differ by {gap:.3e} > {tol:.3e}")
    w = u if sign == "-" else reflect_time(u)
    d = _Derivs(spec, w.values)
    lam, nu, A1 = params.lam, params.nu, spec.A[0]
    # reference scale of the interior weight; log_kappa cancels in every ratio below
    log_norm = 2.0 * lam * (2.0 * A1 + 2.0) ** nu + log_kappa
    x1 = spec.spacetime_mesh()[1]
    phi = np.exp(log_cwf(x1, A1, lam, nu) + log_kappa - log_norm)
    op = d.ut - d.lap
    J = integrate(w.like(op**2 * phi))
    hess_tang = sum(d.uxx[i][j] ** 2 for i in range(1, spec.n) for j in range(1, spec.n)) if spec.n > 1 else 0.0
    hess_full = sum(d.uxx[i][j] ** 2 for i in range(spec.n) for j in range(spec.n))
    R1 = integrate(w.like((d.ut**2 + hess_tang) * phi)) / lam
    R1_full = integrate(w.like((d.ut**2 + hess_full) * phi)) / lam
    grad2 = sum(g**2 for g in d.ux)
    R2 = integrate(w.like((lam * grad2 + lam**3 * d.u**2) * phi))
    B1, B2 = _boundary_blocks(w)
    logw1 = 3.0 * 2.0**nu * lam + log_kappa - log_norm
    logw2 = 3.0 * lam * (2.0 * A1 + 2.0) ** nu + log_kappa - log_norm
    with np.errstate(over="ignore"):
        t1 = B1 * math.exp(min(logw1, 700.0)) if B1 > 0 else 0.0
        t2 = B2 * math.exp(min(logw2, 700.0)) if B2 > 0 else 0.0
        if B2 > 0 and logw2 > 700.0:
            t2 = math.inf
        if B1 > 0 and logw1 > 700.0:
            t1 = math.inf
    denom = R1 + R2 - t1 - t2
    C = J / denom if denom > 0 else math.inf
    return IntegralReport(
        lam=lam, sign=sign, boundary_terms=[t1, t2], interior_terms=[J, R1, R2],
        admissible_C=C, log_block_weights=[logw1, logw2], hessian_full_term=R1_full,
        notes={"periodicity_gap": gap, "B_gamma_minus": B1, "B_rest": B2},
    )


# test batteries and calibration --------------------------------------------


def _bump(s: np.ndarray) -> np.ndarray:
    inside = np.abs(s) < 1.0
    out = np.zeros_like(s)
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


def resolved_grid(A1: float, T: float, lam: float, nu: float, kh: float = 0.15,
                  Nt: int = 101, gamma: float = 1.0) -> GridSpec:
    """1-D grid on which the steepest log-slope of the weight satisfies ``k h <= kh``."""
    k = 2.0 * lam * nu * (2.0 * A1 + 2.0) ** (nu - 1.0)
    Nx = int(math.ceil(2.0 * A1 * k / kh)) + 1
    return GridSpec([A1], T, [Nx], Nt, gamma)


def periodic_battery(spec: GridSpec, count: int = 20, seed: int = 0,
                     compact_fraction: float = 0.5) -> list[Field]:
    """Random smooth functions with ``u(., 0) = u(., T)``.

    Time dependence is a short Fourier series in ``2 pi t / T``; the spatial
    factor is a random trigonometric polynomial, multiplied for a share of the
    members by a smooth bump supported in ``|x_i| < 0.9 A_i`` (zero Cauchy data).
    """
    rng = np.random.default_rng(seed)
    t, *xs = spec.spacetime_mesh()
    out = []
    r = 0.9
    n_compact = int(round(compact_fraction * count))
    for j in range(count):
        time_part = rng.normal() * np.ones_like(t)
        for k in range(1, 3):
            time_part = time_part + rng.normal() * np.cos(2 * np.pi * k * t / spec.T) \
                + rng.normal() * np.sin(2 * np.pi * k * t / spec.T)
        space_part = np.ones_like(t) * rng.normal()
        for i, x in enumerate(xs):
            A = spec.A[i]
            for k in range(1, 3):
                space_part = space_part + rng.normal() * np.cos(k * np.pi * x / (2 * A) + rng.uniform(0, np.pi))
        vals = time_part * space_part
        if j < n_compact:
            for i, x in enumerate(xs):
                vals = vals * _bump(x / (r * spec.A[i]))
        out.append(Field.spacetime(spec, vals))
    return out


def battery_min_C(battery: list[Field], params: CarlemanParams, signs=("-", "+")) -> float:
    return min(check_integral(u, params, s).admissible_C for u in battery for s in signs)


def calibrate_lambda0(battery: list[Field], params: CarlemanParams, C_req: float,
                      lam_lo: float = 1.0 + 1e-9, lam_hi: float = 50.0, window: float = 10.0,
                      scan: int = 40, tol: float = 1e-3) -> float:
    """Smallest lambda after which the battery verdict ``min C >= C_req`` holds.

    A coarse scan over ``[lam_lo, lam_hi]`` finds the first scan point after
    which the verdict holds on every later scan point inside the window; the
    bracket is then refined by bisection.
    """
    grid = np.linspace(lam_lo, lam_hi, scan)
    ok = [battery_min_C(battery, params.with_lambda(l)) >= C_req for l in grid]
    step = grid[1] - grid[0]
    first = None
    for i, l in enumerate(grid):
        horizon = [ok[j] for j in range(i, len(grid)) if grid[j] <= l + window + 1e-12]
        if all(horizon):
            first = i
            break
    if first is None:
        raise RuntimeError("no lambda in range satisfies the battery verdict")
    if first == 0:
        return float(grid[0])
    lo, hi = grid[first - 1], grid[first]
    while hi - lo > tol * step:
        mid = 0.5 * (lo + hi)
        if battery_min_C(battery, params.with_lambda(mid)) >= C_req:
            hi = mid
        else:
            lo = mid
    return float(hi)


def gauss_defect(u: Field, params: CarlemanParams) -> tuple[float, float, float]:
    """``(int div U, boundary flux of U, int |div U|)`` for the Gauss bookkeeping check."""
    U = eval_U(u, params)
    div = divergence(U)
    return integrate(div), boundary_flux(U), integrate(div.like(np.abs(div.values)))


def cancellation_defect(u: Field, params: CarlemanParams) -> tuple[float, float]:
    """``(int d_t V, int |d_t V|)`` over Q_T."""
    V = eval_V(u, params)
    Vt = dt(V)
    return integrate(Vt), integrate(Vt.like(np.abs(Vt.values)))


def require_spacetime(u: Field) -> None:
    if not u.is_("spacetime"):
        raise DomainMismatchError("expected a spacetime Field")
