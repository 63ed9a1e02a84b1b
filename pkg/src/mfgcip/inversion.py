"""
Reconstruction of the kernel amplitude ``b`` from final-overdetermination data.

The unknowns are the differences ``(u~, m~, b~)`` between the sought triple
and a solved reference triple ``(u_2, m_2, b_2)``.  Their equations are the
exact differences of the discrete forward schemes (Crank-Nicolson at half
levels, same stencils as ``mfg_forward``)::

    HJB:  u~_t + Lap u~ - (a/2) grad(u_1 + u_2) . grad u~ + b_1 [K m~] + s m~ + b~ [K m_2] = 0
    FP:   m~_t - Lap m~ - div(a m~ grad u_2) - div(a m_1 grad u~) = 0

The only nonlinearity sits in ``u_1 = u_2 + u~``, ``m_1 = m_2 + m~`` and
``b_1 = b_2 + b~``; each outer iteration freezes them at the current iterate
and solves the resulting linear least-squares problem.  PDE rows are scaled
by the square root of the Carleman weight, data rows fix the traces of
``u~``, ``m~`` and Tikhonov rows regularize ``b~`` and the spatial second
differences of ``u~``, ``m~``.

Unknowns are ordered time-major, ``[u~_0, m~_0, u~_1, m~_1, ..., b~]``.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, splu

from . import stencils
from .carleman import cwf_scaled
from .grid import DomainMismatchError, Field, GridSpec, dt, gradient, laplacian, trapz_weights
from .kernel import KernelSpec, check_R_bound, compute_R
from .mfg_forward import CipData, MfgCoefficients, MfgSolution, generate_cip_data

logger = logging.getLogger(__name__)

PCG_MAXITER = 100  # beyond this a fresh factorization is cheaper


class RBoundViolation(ValueError):
    """The reference density makes the interaction bracket too small."""


class SingularSystemError(RuntimeError):
    def __init__(self, message: str, condition_estimate: float):
        super().__init__(message)
        self.condition_estimate = condition_estimate


class InversionDivergedError(RuntimeError):
    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


class UnidentifiableError(ValueError):
    """The bracket multiplying ``b`` vanishes at some node for all times."""


@dataclass
class InverseProblemSpec:
    observed: CipData
    reference: MfgSolution
    coeffs: MfgCoefficients  # kernel.b is the reference amplitude b_2
    lam: float = 0.05
    nu: float = 3.0
    eps: float = 1e-6
    outer_iters: int = 20
    outer_tol: float = 1e-6
    solver: str = "auto"
    cg_tol: float = 1e-12
    cg_maxiter: int = 5000
    c: float = 1e-8

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.solver not in ("direct", "cg", "auto"):
            raise ValueError("solver must be 'direct', 'cg' or 'auto'")
        if self.observed.spec != self.coeffs.spec or self.reference.u.spec != self.coeffs.spec:
            raise DomainMismatchError("data, reference and coefficients must share one grid")
        ok, rmin = check_R_bound(compute_R(self.coeffs.kernel, self.reference.m), self.c)
        if not ok:
            raise RBoundViolation(f"min |R| = {rmin:.3e} is below c = {self.c:.3e}")

    @property
    def spec(self) -> GridSpec:
        return self.coeffs.spec

    @property
    def b2(self) -> Field:
        return self.coeffs.kernel.b


@dataclass
class LinearSystem:
    A: sp.csr_matrix
    rhs: np.ndarray
    blocks: dict  # block name -> list of contiguous (start, stop) row segments

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    def block_rows(self, name: str) -> np.ndarray:
        return np.concatenate([np.arange(a, b) for a, b in self.blocks.get(name, [])] or [np.zeros(0, int)])


@dataclass
class ReconstructionResult:
    b_hat: Field
    u_hat: Field
    m_hat: Field
    residual_history: list[float]
    error_L2_gamma: float | None = None
    error_full: float | None = None
    converged: bool = True
    warnings: list[str] = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def metrics(self) -> dict:
        return {"residual_history": self.residual_history, "error_L2_gamma": self.error_L2_gamma,
                "error_full": self.error_full, "converged": self.converged,
                "warnings": self.warnings, "info": self.info}

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.b_hat.save(d / "b_hat.field")
        self.u_hat.save(d / "u_hat.field")
        self.m_hat.save(d / "m_hat.field")
        (d / "metrics.json").write_text(json.dumps(self.metrics(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "ReconstructionResult":
        d = Path(directory)
        meta = json.loads((d / "metrics.json").read_text())
        return cls(Field.load(d / "b_hat.field"), Field.load(d / "u_hat.field"),
                   Field.load(d / "m_hat.field"), **meta)


# layout ----------------------------------------------------------------------


class _Layout:
    def __init__(self, spec: GridSpec):
        self.spec = spec
        self.Ns = int(np.prod(spec.Nx))
        self.Nt = spec.Nt
        self.size = 2 * self.Nt * self.Ns + self.Ns

    def u(self, k: int) -> int:
        return 2 * k * self.Ns

    def m(self, k: int) -> int:
        return (2 * k + 1) * self.Ns

    @property
    def b(self) -> int:
        return 2 * self.Nt * self.Ns

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        st = x[: self.b].reshape(self.Nt, 2, self.Ns)
        shape = self.spec.spacetime_shape
        return st[:, 0].reshape(shape), st[:, 1].reshape(shape), x[self.b:].reshape(self.spec.Nx)

    def join(self, u: np.ndarray, m: np.ndarray, b: np.ndarray) -> np.ndarray:
        st = np.stack([u.reshape(self.Nt, self.Ns), m.reshape(self.Nt, self.Ns)], axis=1)
        return np.concatenate([st.ravel(), b.ravel()])


class _Rows:
    """COO accumulator with block bookkeeping."""

    def __init__(self, ncols: int):
        self.ncols = ncols
        self.parts: list[sp.coo_matrix] = []
        self.rhs: list[np.ndarray] = []
        self.nrows = 0
        self.blocks: dict = {}

    def add(self, name: str, M: sp.spmatrix, r: np.ndarray) -> None:
        M = sp.coo_matrix(M)
        if M.shape[0] == 0:
            return
        start = self.nrows
        self.parts.append(M)
        self.rhs.append(np.asarray(r, dtype=float).ravel())
        self.nrows += M.shape[0]
        segs = self.blocks.setdefault(name, [])
        if segs and segs[-1][1] == start:
            segs[-1] = (segs[-1][0], self.nrows)
        else:
            segs.append((start, self.nrows))

    def build(self) -> LinearSystem:
        A = sp.vstack(self.parts, format="csr")
        return LinearSystem(A, np.concatenate(self.rhs), self.blocks)


def _place(lay: _Layout, entries: list[tuple[int, sp.spmatrix]], nrows: int) -> sp.csr_matrix:
    """Horizontally place (column offset, block) pairs into a full-width row block."""
    rows, cols, vals = [], [], []
    for off, M in entries:
        M = sp.coo_matrix(M)
        rows.append(M.row)
        cols.append(M.col + off)
        vals.append(M.data)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(nrows, lay.size))


# assembly --------------------------------------------------------------------


def _face_selector(spec: GridSpec, axis: int, sign: int) -> np.ndarray:
    idx = np.arange(int(np.prod(spec.Nx))).reshape(spec.Nx)
    return np.take(idx, 0 if sign < 0 else -1, axis=axis).ravel()


def _normal_stencil(spec: GridSpec, axis: int, sign: int) -> sp.csr_matrix:
    """Outward one-sided second-order derivative on a face, matching ``normal_derivative``."""
    idx = np.arange(int(np.prod(spec.Nx))).reshape(spec.Nx)
    N, h = spec.Nx[axis], spec.h[axis]
    if sign < 0:
        nodes, coef = (0, 1, 2), (3.0, -4.0, 1.0)   # -(-3 w0 + 4 w1 - w2) / 2h
    else:
        nodes, coef = (N - 1, N - 2, N - 3), (3.0, -4.0, 1.0)
    cols = [np.take(idx, j, axis=axis).ravel() for j in nodes]
    nf = cols[0].size
    rows = np.tile(np.arange(nf), 3)
    vals = np.repeat(np.array(coef) / (2.0 * h), nf)
    return sp.csr_matrix((vals, (rows, np.concatenate(cols))), shape=(nf, idx.size))


def _rows_of(M: sp.spmatrix, mask: np.ndarray) -> sp.csr_matrix:
    return sp.csr_matrix(M)[np.flatnonzero(mask)]


def _trace_rhs(obs: CipData, ref: CipData, name: str) -> np.ndarray:
    return getattr(obs, name).values - getattr(ref, name).values


def _data_rows(rows: _Rows, lay: _Layout, obs: CipData, ref: CipData) -> None:
    spec = lay.spec
    Ns, Nt = lay.Ns, lay.Nt
    I = sp.identity(Ns, format="csr")
    for name, off in (("p", lay.u(0)), ("q", lay.m(0)), ("F", lay.u(Nt - 1)), ("G", lay.m(Nt - 1))):
        rows.add("data_endpoint", _place(lay, [(off, I)], Ns), _trace_rhs(obs, ref, name).ravel())
    for (axis, sign) in obs.faces():
        sel = _face_selector(spec, axis, sign)
        S = I[sel]
        Nn = _normal_stencil(spec, axis, sign)
        for key, ops, field_of in (("f0", S, "u"), ("g0", S, "m"), ("f1", Nn, "u"), ("g1", Nn, "m")):
            diff = getattr(obs, key)[(axis, sign)].values - getattr(ref, key)[(axis, sign)].values
            diff = diff.reshape(Nt, -1)
            offset = getattr(lay, field_of)
            parts = [_place(lay, [(offset(k), ops)], ops.shape[0]) for k in range(Nt)]
            rows.add(f"data_lateral_{'gamma_minus' if (axis, sign) == (0, -1) else 'other'}",
                     sp.vstack(parts, format="csr"), diff.ravel())


def _gamma_minus_rows(spec: GridSpec) -> int:
    """Number of data rows contributed by the face ``x1 = -A_1`` (four traces per time level)."""
    nf = int(np.prod(spec.Nx)) // spec.Nx[0]
    return 4 * spec.Nt * nf


def assemble_system(ips: InverseProblemSpec, x: np.ndarray | None = None,
                    weighted: bool = True, eps: float | None = None) -> LinearSystem:
    """Linear least-squares system with coefficients frozen at the iterate ``x``."""
    spec = ips.spec
    lay = _Layout(spec)
    if x is None:
        x = np.zeros(lay.size)
    ut, mt, bt = lay.split(x)
    u2, m2 = ips.reference.u.values, ips.reference.m.values
    a = ips.coeffs.a.values
    s = ips.coeffs.s.values
    Lam = ips.coeffs.kernel.interaction_matrix
    b2 = ips.b2.values.ravel()
    tau = spec.tau
    Ns, Nt = lay.Ns, lay.Nt
    mask = stencils.interior_mask(spec)
    nint = int(mask.sum())

    L = stencils.laplacian_matrix(spec)
    G = stencils.gradient_matrices(spec)
    Lam_sp = sp.csr_matrix(Lam)
    I = sp.identity(Ns, format="csr")
    bb = b2 + bt.ravel()
    Lam_b = sp.diags(bb) @ Lam_sp

    w = np.ones(Ns)
    if weighted:
        x1 = np.broadcast_to(spec.mesh()[0], spec.Nx).ravel()
        w = np.sqrt(cwf_scaled(x1, spec.A[0], ips.lam, ips.nu))
    W = sp.diags(w[mask])

    def hjb_level(k: int) -> tuple[sp.spmatrix, sp.spmatrix, np.ndarray]:
        u1k = (u2[k] + ut[k])
        g = [Gi @ (u2[k] + u1k).ravel() for Gi in G]
        grad_term = sum(sp.diags(-0.5 * a.ravel() * gi) @ Gi for gi, Gi in zip(g, G))
        Mu = 0.5 * tau * (L + grad_term)
        Mm = 0.5 * tau * (Lam_b + sp.diags(s[k].ravel()))
        Bcol = 0.5 * tau * (Lam @ m2[k].ravel())
        return Mu, Mm, Bcol

    def fp_level(k: int) -> tuple[sp.spmatrix, sp.spmatrix]:
        m1k = m2[k] + mt[k]
        Dm = stencils.drift_matrix_m(spec, a, u2[k])
        Du = stencils.drift_matrix_u(spec, a, m1k)
        return -0.5 * tau * Du, -0.5 * tau * (L + Dm)

    rows = _Rows(lay.size)
    hjb = [hjb_level(k) for k in range(Nt)]
    fp = [fp_level(k) for k in range(Nt)]
    for k in range(Nt - 1):
        Mu0, Mm0, B0 = hjb[k]
        Mu1, Mm1, B1 = hjb[k + 1]
        Hrow = _place(lay, [(lay.u(k), Mu0 - I), (lay.u(k + 1), Mu1 + I),
                            (lay.m(k), Mm0), (lay.m(k + 1), Mm1),
                            (lay.b, sp.diags(B0 + B1))], Ns)
        rows.add("hjb", W @ Hrow[mask], np.zeros(nint))
        Fu0, Fm0 = fp[k]
        Fu1, Fm1 = fp[k + 1]
        Frow = _place(lay, [(lay.u(k), Fu0), (lay.u(k + 1), Fu1),
                            (lay.m(k), Fm0 - I), (lay.m(k + 1), Fm1 + I)], Ns)
        rows.add("fp", W @ Frow[mask], np.zeros(nint))

    ref_data = generate_cip_data(ips.reference, ips.observed.mode)
    _data_rows(rows, lay, ips.observed, ref_data)

    eps = ips.eps if eps is None else eps
    if eps > 0:
        pde = sp.vstack(rows.parts[:2 * (Nt - 1)], format="csr")
        scale = float(np.median(np.sqrt(np.asarray(pde.multiply(pde).sum(axis=1)).ravel())))
        D2 = _rows_of(L, mask) * float(min(spec.h) ** 2)
        reg = [(lay.b, I)]
        rows.add("tikhonov_b", eps * scale * _place(lay, reg, Ns), np.zeros(Ns))
        for k in range(Nt):
            rows.add("tikhonov_fields", eps * scale * _place(lay, [(lay.u(k), D2)], nint), np.zeros(nint))
            rows.add("tikhonov_fields", eps * scale * _place(lay, [(lay.m(k), D2)], nint), np.zeros(nint))
    return rows.build()


# linear solves ---------------------------------------------------------------


def _normal_equations(sys_: LinearSystem) -> tuple[sp.csc_matrix, np.ndarray]:
    A = sys_.A
    N = (A.T @ A).tocsc()
    if np.any(N.diagonal() <= 0):
        raise SingularSystemError("unknown with no equation (zero column)", np.inf)
    return N, A.T @ sys_.rhs


def _condition_estimate(N: sp.spmatrix) -> float:
    d = N.diagonal()
    return float(d.max() / max(d.min(), 1e-300))


class Factorization:
    """Sparse LU of the Jacobi-scaled normal matrix.

    The unknowns are time-major, so the normal matrix is block-banded in time;
    the natural ordering keeps the fill inside that band.
    """

    def __init__(self, N: sp.csc_matrix):
        self.S = 1.0 / np.sqrt(N.diagonal())
        Ns = (sp.diags(self.S) @ N @ sp.diags(self.S)).tocsc()
        try:
            self.lu = splu(Ns, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                           options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise SingularSystemError(f"normal equations are singular: {exc}",
                                      _condition_estimate(N)) from exc

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.S * self.lu.solve(self.S * v)


def solve_least_squares(sys_: LinearSystem, method: str = "auto", cg_tol: float = 1e-12,
                        cg_maxiter: int = 5000, factor: Factorization | None = None,
                        refine: int = 2) -> tuple[np.ndarray, str, Factorization | None]:
    """Minimize ``|A x - rhs|`` through the normal equations.

    ``direct`` factorizes, ``cg`` runs Jacobi-preconditioned conjugate
    gradients, ``auto`` runs conjugate gradients preconditioned by ``factor``
    (a factorization of a nearby system) and refactorizes when none is given
    or the iteration stalls.  Returns the solution, the method used and the
    factorization in effect.
    """
    N, g = _normal_equations(sys_)
    if method == "cg" or (method == "auto" and factor is not None):
        if method == "cg":
            dinv = 1.0 / N.diagonal()
            M = LinearOperator(N.shape, matvec=lambda v: dinv * v)
        else:
            M = LinearOperator(N.shape, matvec=factor.apply)
        cap = cg_maxiter if method == "cg" else min(cg_maxiter, PCG_MAXITER)
        x, info = cg(N, g, rtol=cg_tol, atol=0.0, maxiter=cap, M=M)
        if info == 0 and np.all(np.isfinite(x)):
            return x, "cg", factor
        if method == "cg":
            raise SingularSystemError(f"CG did not converge in {cg_maxiter} iterations",
                                      _condition_estimate(N))
        logger.info("preconditioned CG stalled (info=%d); refactorizing", info)
    factor = Factorization(N)
    x = factor.apply(g)
    for _ in range(refine):
        x = x + factor.apply(g - N @ x)
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("normal equations are singular", _condition_estimate(N))
    return x, "direct", factor


# outer iteration -------------------------------------------------------------


def _residual(sys_: LinearSystem, x: np.ndarray) -> float:
    return float(np.linalg.norm(sys_.A @ x - sys_.rhs))


def solve_outer(ips: InverseProblemSpec, b_true: Field | None = None) -> ReconstructionResult:
    spec = ips.spec
    lay = _Layout(spec)
    x = np.zeros(lay.size)
    history: list[float] = []
    converged = False
    used: list[str] = []
    warnings_: list[str] = []
    factor = None
    sys_ = assemble_system(ips, x)
    for it in range(ips.outer_iters):
        x_new, how, factor = solve_least_squares(sys_, ips.solver, ips.cg_tol, ips.cg_maxiter, factor)
        used.append(how)
        step = float(np.linalg.norm(x_new - x))
        x = x_new
        sys_ = assemble_system(ips, x)
        res = _residual(sys_, x)
        if not np.isfinite(res):
            raise InversionDivergedError("non-finite residual", history + [res])
        history.append(res)
        logger.debug("outer %d residual %.3e step %.3e", it, res, step)
        if step <= ips.outer_tol * max(np.linalg.norm(x), 1e-300):
            converged = True
            break
        if len(history) >= 2:
            prev = history[-2]
            if abs(prev - res) <= ips.outer_tol * prev:
                converged = True
                break
            if res > prev:
                if res > 10.0 * prev:
                    raise InversionDivergedError("weighted residual grew by more than 10x", history)
                result_warning = f"weighted residual increased at outer iteration {it}"
                warnings_.append(result_warning)
                break
    u_t, m_t, b_t = lay.split(x)
    ref = ips.reference
    result = ReconstructionResult(
        b_hat=ips.b2 + Field.space(spec, b_t),
        u_hat=ref.u + Field.spacetime(spec, u_t),
        m_hat=ref.m + Field.spacetime(spec, m_t),
        residual_history=history,
        converged=converged,
        warnings=warnings_,
        info={"outer_iters": len(history), "solver": used, "rows": int(sys_.shape[0]),
              "unknowns": int(sys_.shape[1]), "lambda": ips.lam, "eps": ips.eps},
    )
    if b_true is not None:
        rep = error_report(result.b_hat, b_true, spec.gamma)
        result.error_L2_gamma, result.error_full = rep["L2_gamma"], rep["L2_full"]
    return result


def difference_vector(ips: InverseProblemSpec, sol1: MfgSolution, b1: Field) -> np.ndarray:
    """Unknown vector of the exact difference between a triple and the reference."""
    lay = _Layout(ips.spec)
    return lay.join(sol1.u.values - ips.reference.u.values, sol1.m.values - ips.reference.m.values,
                    b1.values - ips.b2.values)


def consistency_residual(ips: InverseProblemSpec, sol1: MfgSolution, b1: Field) -> float:
    """Weighted residual of the assembled system at the exact difference vector."""
    x = difference_vector(ips, sol1, b1)
    return _residual(assemble_system(ips, x), x)


# diagnostics and oracle ------------------------------------------------------


def extract_b_from_v(v: Field, tol: float | None = None) -> tuple[Field, list[str]]:
    """``b~ = -(v(., 0) + v(., T)) / 2`` with an endpoint agreement check."""
    v.require("spacetime")
    spec = v.spec
    v0, vT = v.at_time(0), v.at_time(spec.Nt - 1)
    out = -0.5 * (v0 + vT)
    flags = []
    if tol is None:
        tol = 10.0 * (max(spec.h) ** 2 + spec.tau**2)
    gap = float(np.max(np.abs(v0.values - vT.values)))
    if gap > tol:
        flags.append(f"v(., 0) and v(., T) differ by {gap:.3e} > {tol:.3e}")
        warnings.warn(flags[-1], RuntimeWarning, stacklevel=2)
    return out, flags


def oracle_recover(u_full: Field, m_full: Field, coeffs: MfgCoefficients,
                   kernel_without_b: KernelSpec | None = None, c: float = 1e-8) -> Field:
    """Node-wise least-squares fit over time of ``b [K m] = -(u_t + Lap u - a|grad u|^2/2 + s m)``."""
    spec = u_full.spec
    kern = kernel_without_b or coeffs.kernel
    Lam = kern.interaction_matrix
    m = m_full.values
    B = (m.reshape(spec.Nt, -1) @ Lam.T).reshape(spec.spacetime_shape)
    gsq = sum(g.values**2 for g in gradient(u_full))
    rest = dt(u_full).values + laplacian(u_full).values - 0.5 * coeffs.a.values * gsq + coeffs.s.values * m
    den = np.sum(B * B, axis=0)
    if np.any(np.max(np.abs(B), axis=0) < c):
        raise UnidentifiableError("the interaction bracket vanishes at some node for all t")
    return Field.space(spec, -np.sum(B * rest, axis=0) / den)


def error_report(b_hat: Field, b_true: Field, gamma: float | None = None) -> dict[str, float]:
    """Discrete L2 errors over ``Omega_gamma`` and ``Omega`` plus the sup error."""
    if b_hat.spec != b_true.spec:
        raise DomainMismatchError("b_hat and b_true live on different grids")
    spec = b_hat.spec
    gamma = spec.gamma if gamma is None else gamma
    A1 = spec.A[0]
    if not 0.0 <= gamma <= 2.0 * A1:
        raise ValueError("gamma must lie in [0, 2*A_1]")
    e = (b_hat - b_true).values
    x1 = np.broadcast_to(spec.mesh()[0], spec.Nx)
    wts = _space_weights(spec)
    full = float(np.sqrt(np.sum(wts * e**2)))
    inside = x1 > -A1 + gamma - 1e-12 if gamma > 0 else np.ones_like(x1, dtype=bool)
    inner = float(np.sqrt(np.sum(np.where(inside, wts * e**2, 0.0))))
    return {"L2_gamma": inner, "L2_full": full, "Linf": float(np.max(np.abs(e)))}


def region_rms(b_hat: Field, b_true: Field, gamma: float | None = None) -> dict[str, float]:
    """RMS error over ``Omega_gamma`` and over its complement."""
    spec = b_hat.spec
    gamma = spec.gamma if gamma is None else gamma
    e2 = (b_hat - b_true).values ** 2
    wts = _space_weights(spec)
    x1 = np.broadcast_to(spec.mesh()[0], spec.Nx)
    inside = x1 > -spec.A[0] + gamma - 1e-12
    out = {}
    for name, sel in (("gamma", inside), ("complement", ~inside)):
        out[name] = float(np.sqrt(np.sum(wts[sel] * e2[sel]) / np.sum(wts[sel])))
    return out


def _space_weights(spec: GridSpec) -> np.ndarray:
    w = trapz_weights(spec.Nx[0], spec.h[0])
    for i in range(1, spec.n):
        w = np.multiply.outer(w, trapz_weights(spec.Nx[i], spec.h[i]))
    return w
