"""
Forward mean field games system and extraction of the measurement data.

System on ``Q_T = Omega x (0, T)``::

    u_t + Lap u - a |grad u|^2 / 2 + b(x) [K m](x, t) + s m = f_u     (HJB, backward)
    m_t - Lap m - div(a m grad u)                          = f_m     (FP, forward)

with ``u(., T) = F``, ``m(., 0) = q`` and Dirichlet data on the lateral
boundary.  ``f_u``/``f_m`` are optional forcings (zero for the physical
problem, nonzero for manufactured solutions).

Both equations are stepped with Crank-Nicolson.  The HJB quadratic term is
lagged and refreshed by a few fixed-point sweeps per step; the FP drift is
conservative flux differencing.  In n = 1 every step is a banded solve; in
n = 2 the symmetric diffusion systems go through conjugate gradients and the
FP drift enters through a Heun predictor/corrector.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import cg

from . import stencils
from .grid import (
    DomainMismatchError,
    Field,
    GridSpec,
    SPACE,
    d1,
    lateral_face,
)
from .kernel import KernelSpec

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Inner linear solve failed."""


class DivergedError(RuntimeError):
    """Picard iteration did not reach its tolerance."""

    def __init__(self, message: str, residuals: list[float]):
        super().__init__(message)
        self.residuals = list(residuals)


class CornerMismatchError(ValueError):
    """Initial/terminal data disagree with the lateral Dirichlet data."""


@dataclass(frozen=True)
class MfgCoefficients:
    a: Field
    s: Field
    kernel: KernelSpec

    def __post_init__(self):
        spec = self.kernel.spec
        if self.a.spec != spec or not self.a.is_("space"):
            raise DomainMismatchError("a must be a space Field on the kernel grid")
        if self.s.spec != spec or not self.s.is_("spacetime"):
            raise DomainMismatchError("s must be a spacetime Field on the kernel grid")

    @property
    def spec(self) -> GridSpec:
        return self.kernel.spec

    def check_bounds(self, M: float | None = None) -> dict[str, float]:
        """Discrete sup norms of a (with 3 derivatives) and s (2 in x, 1 in t) vs M."""
        M = self.kernel.M if M is None else M
        spec = self.spec
        a_norm = 0.0
        arr = self.a.values
        for order in range(4):
            a_norm = max(a_norm, float(np.max(np.abs(arr))))
            arr = d1(arr, spec.h[0], 0)
        s = self.s.values
        s_terms = [s, d1(s, spec.tau, 0), d1(s, spec.h[0], 1), d1(d1(s, spec.h[0], 1), spec.h[0], 1)]
        s_norm = max(float(np.max(np.abs(t))) for t in s_terms)
        return {"a": a_norm, "s": s_norm, "ok": float(a_norm < M and s_norm < M)}


@dataclass(frozen=True)
class LateralData:
    """Dirichlet values on the lateral boundary, one array per face.

    ``faces[(axis, sign)]`` has the face shape ``(Nt, other nodes...)``.
    """

    faces: dict

    @classmethod
    def from_spacetime(cls, w: Field) -> "LateralData":
        spec = w.spec
        return cls({(ax, sg): w.face(ax, sg).values for ax in range(spec.n) for sg in (-1, 1)})

    @classmethod
    def constant(cls, spec: GridSpec, value: float) -> "LateralData":
        w = Field.spacetime(spec, np.full(spec.spacetime_shape, float(value)))
        return cls.from_spacetime(w)

    def level(self, spec: GridSpec, k: int, base: np.ndarray) -> np.ndarray:
        """Copy of ``base`` with lateral values at time index k imposed."""
        out = np.array(base, dtype=float)
        for (ax, sg), vals in self.faces.items():
            idx = 0 if sg < 0 else -1
            sl = [slice(None)] * spec.n
            sl[ax] = idx
            out[tuple(sl)] = vals[k]
        return out


@dataclass
class SolverConfig:
    theta: float = 0.5
    tol: float = 1e-10
    max_iters: int = 200
    hjb_sweeps: int = 2
    sweep_tol: float = 1e-14
    cg_tol: float = 1e-12
    cg_maxiter: int = 2000
    bc_type: str = "dirichlet"

    def __post_init__(self):
        if self.bc_type != "dirichlet":
            raise ValueError("only Dirichlet forward boundary conditions are implemented")


@dataclass
class MfgSolution:
    u: Field
    m: Field
    picard_residuals: list[float] = field(default_factory=list)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.u.save(d / "u.field")
        self.m.save(d / "m.field")
        (d / "solution.json").write_text(json.dumps({"picard_residuals": self.picard_residuals}))

    @classmethod
    def load(cls, directory) -> "MfgSolution":
        d = Path(directory)
        meta = json.loads((d / "solution.json").read_text())
        return cls(Field.load(d / "u.field"), Field.load(d / "m.field"), meta["picard_residuals"])


# linear solves -------------------------------------------------------------


def _solve(A: sp.csr_matrix, rhs: np.ndarray, spec: GridSpec, cfg: SolverConfig,
           symmetric: bool) -> np.ndarray:
    """Interior-node CG solve; boundary rows of A are identity rows."""
    if not symmetric:
        raise SolverError("nonsymmetric systems are only supported in n = 1")
    mask = stencils.interior_mask(spec)
    x = rhs.copy()
    Aii = A[mask][:, mask]
    b = rhs[mask] - A[mask][:, ~mask] @ rhs[~mask]
    sol, info = cg(Aii, b, rtol=cfg.cg_tol, atol=0.0, maxiter=cfg.cg_maxiter)
    if info != 0:
        res = np.linalg.norm(Aii @ sol - b) / max(np.linalg.norm(b), 1e-300)
        raise SolverError(f"CG did not converge (info={info}, relative residual {res:.3e})")
    x[mask] = sol
    return x


def _banded_1d(lower: np.ndarray, main: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Banded storage of ``I - A`` where row i of A is ``(lower[i], main[i], upper[i])``.

    Only interior rows are used; the two end rows become identity rows.
    """
    N = main.size
    ab = np.zeros((3, N))
    ab[1] = 1.0
    ab[1, 1:-1] -= main[1:-1]
    ab[0, 2:] = -upper[1:-1]
    ab[2, :-2] = -lower[1:-1]
    return ab


def _lap_bands(spec: GridSpec):
    N = spec.Nx[0]
    h2 = spec.h[0] ** 2
    return np.full(N, 1.0 / h2), np.full(N, -2.0 / h2), np.full(N, 1.0 / h2)


def _drift_bands(spec: GridSpec, a: np.ndarray, u: np.ndarray):
    """Bands of ``m -> div(a m grad u)``; ``ch[i]`` lives on the half node i+1/2."""
    h = spec.h[0]
    ch = 0.5 * (a[1:] + a[:-1]) * np.diff(u) / (2.0 * h * h)
    N = spec.Nx[0]
    lower, main, upper = np.zeros(N), np.zeros(N), np.zeros(N)
    lower[1:-1] = -ch[:-1]
    main[1:-1] = ch[1:] - ch[:-1]
    upper[1:-1] = ch[1:]
    return lower, main, upper


def _banded_solve(ab: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return solve_banded((1, 1), ab, rhs)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"banded solve failed: {exc}") from exc


def _with_identity_rows(A: sp.csr_matrix, spec: GridSpec) -> sp.csr_matrix:
    mask = stencils.interior_mask(spec)
    return (sp.diags(mask.astype(float)) @ A + sp.diags((~mask).astype(float))).tocsr()


def _zero_like(spec):
    return np.zeros(spec.spacetime_shape)


def _check_shapes(spec: GridSpec, *fields: Field | None):
    for f in fields:
        if f is not None and f.spec != spec:
            raise DomainMismatchError("all inputs must share the coefficient grid")


# HJB -----------------------------------------------------------------------


def solve_hjb_backward(coeffs: MfgCoefficients, m: Field, F: Field, dirichlet: LateralData,
                       forcing: Field | None = None, config: SolverConfig | None = None) -> Field:
    """March the HJB equation from ``t = T`` down to ``t = 0``."""
    cfg = config or SolverConfig()
    spec = coeffs.spec
    _check_shapes(spec, m, F, forcing)
    m.require("spacetime")
    F.require("space")
    tau = spec.tau
    a = coeffs.a.values
    bI = coeffs.kernel.b.values * (m.values.reshape(spec.Nt, -1) @ coeffs.kernel.interaction_matrix.T
                                   ).reshape(spec.spacetime_shape)
    src = bI + coeffs.s.values * m.values
    if forcing is not None:
        src = src - forcing.values
    if spec.n == 1:
        lo, mid, up = _lap_bands(spec)
        ab = _banded_1d(0.5 * tau * lo, 0.5 * tau * mid, 0.5 * tau * up)
        solve = lambda rhs: _banded_solve(ab, rhs)  # noqa: E731
    else:
        Lap = stencils.laplacian_matrix(spec)
        I = sp.identity(Lap.shape[0], format="csr")
        A = _with_identity_rows(I - 0.5 * tau * Lap, spec)
        solve = lambda rhs: _solve(A, rhs, spec, cfg, symmetric=True)  # noqa: E731
    mask = stencils.interior_mask(spec).reshape(spec.Nx)

    def G(u_level, k):
        return -0.5 * a * stencils.grad_sq_apply(spec, u_level) + src[k]

    u = _zero_like(spec)
    u[-1] = dirichlet.level(spec, spec.Nt - 1, F.values)
    for k in range(spec.Nt - 2, -1, -1):
        up = u[k + 1]
        explicit = up + 0.5 * tau * stencils.laplacian_apply(spec, up) + 0.5 * tau * G(up, k + 1)
        guess = dirichlet.level(spec, k, up)
        for _ in range(max(1, cfg.hjb_sweeps)):
            rhs = explicit + 0.5 * tau * G(guess, k)
            rhs = np.where(mask, rhs, dirichlet.level(spec, k, np.zeros(spec.Nx)))
            new = solve(rhs.ravel()).reshape(spec.Nx)
            change = np.max(np.abs(new - guess))
            guess = new
            if change <= cfg.sweep_tol * max(1.0, np.max(np.abs(new))):
                break
        u[k] = guess
    return Field.spacetime(spec, u)


# FP ------------------------------------------------------------------------


def solve_fp_forward(coeffs: MfgCoefficients, u: Field, q: Field, dirichlet: LateralData,
                     forcing: Field | None = None, config: SolverConfig | None = None) -> Field:
    """March the FP equation from ``t = 0`` up to ``t = T``."""
    cfg = config or SolverConfig()
    spec = coeffs.spec
    _check_shapes(spec, u, q, forcing)
    u.require("spacetime")
    q.require("space")
    tau = spec.tau
    a = coeffs.a.values
    f = np.zeros(spec.spacetime_shape) if forcing is None else forcing.values
    mask = stencils.interior_mask(spec).reshape(spec.Nx)
    bvals = lambda k: dirichlet.level(spec, k, np.zeros(spec.Nx))  # noqa: E731

    m = _zero_like(spec)
    m[0] = dirichlet.level(spec, 0, q.values)
    if spec.n == 1:
        lap = _lap_bands(spec)
        for k in range(spec.Nt - 1):
            mk = m[k]
            ex = stencils.laplacian_apply(spec, mk) + stencils.drift_apply(spec, a, mk, u.values[k])
            rhs = mk + 0.5 * tau * ex + 0.5 * tau * (f[k] + f[k + 1])
            rhs = np.where(mask, rhs, bvals(k + 1))
            dr = _drift_bands(spec, a, u.values[k + 1])
            ab = _banded_1d(*(0.5 * tau * (l + d) for l, d in zip(lap, dr)))
            m[k + 1] = _banded_solve(ab, rhs)
        return Field.spacetime(spec, m)

    Lap = stencils.laplacian_matrix(spec)
    I = sp.identity(Lap.shape[0], format="csr")
    A = _with_identity_rows(I - 0.5 * tau * Lap, spec)
    for k in range(spec.Nt - 1):
        mk = m[k]
        lap_part = mk.ravel() + 0.5 * tau * (Lap @ mk.ravel()) + 0.5 * tau * (f[k] + f[k + 1]).ravel()
        drift_k = stencils.drift_apply(spec, a, mk, u.values[k]).ravel()
        rhs = np.where(mask.ravel(), lap_part + tau * drift_k, bvals(k + 1).ravel())
        pred = _solve(A, rhs, spec, cfg, symmetric=True).reshape(spec.Nx)
        drift_k1 = stencils.drift_apply(spec, a, pred, u.values[k + 1]).ravel()
        rhs = np.where(mask.ravel(), lap_part + 0.5 * tau * (drift_k + drift_k1), bvals(k + 1).ravel())
        m[k + 1] = _solve(A, rhs, spec, cfg, symmetric=True).reshape(spec.Nx)
    return Field.spacetime(spec, m)


# coupled system ------------------------------------------------------------


def check_corners(q: Field, F: Field, dirichlet_u: LateralData, dirichlet_m: LateralData,
                  atol: float = 1e-9) -> None:
    spec = q.spec
    for name, base, lat, k in (("q", q, dirichlet_m, 0), ("F", F, dirichlet_u, spec.Nt - 1)):
        imposed = lat.level(spec, k, base.values)
        gap = float(np.max(np.abs(imposed - base.values)))
        if gap > atol:
            raise CornerMismatchError(
                f"{name} disagrees with the lateral Dirichlet data at t={'0' if k == 0 else 'T'} "
                f"(max gap {gap:.3e})")


def picard_solve(coeffs: MfgCoefficients, q: Field, F: Field, dirichlet_u: LateralData,
                 dirichlet_m: LateralData, config: SolverConfig | None = None,
                 m_init: Field | None = None,
                 forcing_u: Field | None = None, forcing_m: Field | None = None) -> MfgSolution:
    """Damped fixed point ``m <- (1 - theta) m + theta FP(HJB(m))``."""
    cfg = config or SolverConfig()
    spec = coeffs.spec
    check_corners(q, F, dirichlet_u, dirichlet_m)
    if m_init is None:
        m0 = np.broadcast_to(q.values, spec.spacetime_shape)
        m_cur = Field.spacetime(spec, np.stack([dirichlet_m.level(spec, k, m0[k]) for k in range(spec.Nt)]))
    else:
        m_cur = m_init
    residuals: list[float] = []
    for it in range(cfg.max_iters):
        u = solve_hjb_backward(coeffs, m_cur, F, dirichlet_u, forcing_u, cfg)
        m_new = solve_fp_forward(coeffs, u, q, dirichlet_m, forcing_m, cfg)
        gap = float(np.linalg.norm(m_new.values - m_cur.values)
                    / max(np.linalg.norm(m_new.values), 1e-300))
        residuals.append(gap)
        logger.debug("picard iter %d gap %.3e", it, gap)
        if gap <= cfg.tol:
            u = solve_hjb_backward(coeffs, m_new, F, dirichlet_u, forcing_u, cfg)
            return MfgSolution(u, m_new, residuals)
        if cfg.theta <= 0.0:
            raise DivergedError("damping theta = 0 freezes the density; no progress possible",
                                residuals)
        if not np.isfinite(gap):
            raise DivergedError("non-finite fixed-point gap", residuals)
        m_cur = Field.spacetime(spec, (1 - cfg.theta) * m_cur.values + cfg.theta * m_new.values)
    raise DivergedError(
        f"Picard iteration did not reach tol={cfg.tol:g} in {cfg.max_iters} iterations "
        f"(last gap {residuals[-1]:.3e})", residuals)


# measurement data ----------------------------------------------------------


@dataclass
class CipData:
    """Initial/terminal traces and lateral Cauchy data of a solved pair.

    Lateral traces are dicts keyed by face ``(axis, sign)``; in incomplete
    mode the face ``(0, -1)`` is absent.  Neumann traces are outward normal
    derivatives.
    """

    p: Field
    q: Field
    F: Field
    G: Field
    f0: dict
    f1: dict
    g0: dict
    g1: dict
    mode: str

    @property
    def spec(self) -> GridSpec:
        return self.p.spec

    def faces(self) -> list[tuple[int, int]]:
        return sorted(self.f0.keys())

    def channels(self) -> dict:
        return {"p": self.p, "q": self.q, "F": self.F, "G": self.G,
                "f0": self.f0, "f1": self.f1, "g0": self.g0, "g1": self.g1}

    def replace(self, **kw) -> "CipData":
        d = dict(self.channels(), mode=self.mode)
        d.update(kw)
        return CipData(**d)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        files = {}
        for name in ("p", "q", "F", "G"):
            getattr(self, name).save(d / f"{name}.field")
            files[name] = f"{name}.field"
        for name in ("f0", "f1", "g0", "g1"):
            for (ax, sg), fld in getattr(self, name).items():
                fn = f"{name}_x{ax + 1}{'m' if sg < 0 else 'p'}.field"
                fld.save(d / fn)
                files.setdefault(name, []).append({"axis": ax, "sign": sg, "file": fn})
        (d / "cipdata.json").write_text(json.dumps({"mode": self.mode, "files": files},
                                                   indent=1, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "CipData":
        d = Path(directory)
        manifest = json.loads((d / "cipdata.json").read_text())
        files = manifest["files"]
        kw = {name: Field.load(d / files[name]) for name in ("p", "q", "F", "G")}
        for name in ("f0", "f1", "g0", "g1"):
            kw[name] = {(e["axis"], e["sign"]): Field.load(d / e["file"]) for e in files.get(name, [])}
        return cls(mode=manifest["mode"], **kw)


def normal_derivative(w: Field, axis: int, sign: int) -> Field:
    """Outward normal derivative on a face by one-sided second-order differences."""
    w.require("spacetime")
    spec = w.spec
    g = d1(w.values, spec.h[axis], axis + 1)
    idx = 0 if sign < 0 else -1
    return Field(spec, lateral_face(axis, sign), sign * np.take(g, idx, axis=axis + 1))


def generate_cip_data(sol: MfgSolution, mode: str = "complete") -> CipData:
    if mode not in ("complete", "incomplete"):
        raise ValueError("mode must be 'complete' or 'incomplete'")
    u, m = sol.u, sol.m
    spec = u.spec
    faces = [(ax, sg) for ax in range(spec.n) for sg in (-1, 1)]
    if mode == "incomplete":
        faces.remove((0, -1))
    return CipData(
        p=u.at_time(0), q=m.at_time(0), F=u.at_time(spec.Nt - 1), G=m.at_time(spec.Nt - 1),
        f0={fc: u.face(*fc) for fc in faces},
        f1={fc: normal_derivative(u, *fc) for fc in faces},
        g0={fc: m.face(*fc) for fc in faces},
        g1={fc: normal_derivative(m, *fc) for fc in faces},
        mode=mode,
    )


def hjb_residual(coeffs: MfgCoefficients, u: Field, m: Field) -> np.ndarray:
    """Crank-Nicolson residual of the HJB equation at half levels (interior nodes)."""
    spec = coeffs.spec
    tau = spec.tau
    a = coeffs.a.values
    bI = coeffs.kernel.b.values * (m.values.reshape(spec.Nt, -1) @ coeffs.kernel.interaction_matrix.T
                                   ).reshape(spec.spacetime_shape)
    mask = stencils.interior_mask(spec).reshape(spec.Nx)
    out = np.zeros((spec.Nt - 1, *spec.Nx))
    for k in range(spec.Nt - 1):
        terms = []
        for j in (k, k + 1):
            uj = u.values[j]
            terms.append(stencils.laplacian_apply(spec, uj) - 0.5 * a * stencils.grad_sq_apply(spec, uj)
                         + bI[j] + coeffs.s.values[j] * m.values[j])
        out[k] = np.where(mask, (u.values[k + 1] - u.values[k]) / tau + 0.5 * (terms[0] + terms[1]), 0.0)
    return out


def fp_residual(coeffs: MfgCoefficients, u: Field, m: Field) -> np.ndarray:
    """Crank-Nicolson residual of the FP equation at half levels (interior nodes)."""
    spec = coeffs.spec
    tau = spec.tau
    a = coeffs.a.values
    mask = stencils.interior_mask(spec).reshape(spec.Nx)
    out = np.zeros((spec.Nt - 1, *spec.Nx))
    for k in range(spec.Nt - 1):
        terms = [stencils.laplacian_apply(spec, m.values[j])
                 + stencils.drift_apply(spec, a, m.values[j], u.values[j]) for j in (k, k + 1)]
        out[k] = np.where(mask, (m.values[k + 1] - m.values[k]) / tau - 0.5 * (terms[0] + terms[1]), 0.0)
    return out


def space_field(spec: GridSpec, values) -> Field:
    return Field(spec, SPACE, values)
