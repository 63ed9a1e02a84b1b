"""
Transformation of the difference of two MFG triples into the pair ``(v, w)``.

For two solutions ``(u_j, m_j, b_j)`` with the same ``a``, ``s``, ``K1``,
``K2`` and forcing, the differences satisfy::

    ut~ + Lap u~ - a g . grad u~ + b_1 [K m~] + s m~ = b~ R
    mt~ - Lap m~ - div(a m~ grad u_2) - div(a m_1 grad u~) = 0

with ``g = grad(u_1 + u_2)/2`` and ``R = -[K m_2]``.  Writing ``D = -R``,
``u_bar = u~ / D`` and expanding the quotient gives::

    u_bar_t + Lap u_bar + P . grad u_bar + Q u_bar + (b_1 [K m~] + s m~) / D = -b~
    P = 2 grad D / D - a g
    Q = (D_t + Lap D - a g . grad D) / D

Evaluating the first line at ``t = 0, T`` with the endpoint data gives
``u_bar_t = W - b~``; the FP difference at ``t = 0, T`` gives ``m~_t = Z``.
With ``v = u_bar_t - ramp(W)`` and ``w = m~_t - ramp(Z)``, where
``ramp(W) = W_0 (1 - t/T) + W_T t/T``, one gets ``v(., 0) = v(., T) = -b~``
and ``w(., 0) = w(., T) = 0``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .grid import (
    DomainMismatchError,
    Field,
    GridSpec,
    divergence,
    dt,
    gradient,
    laplacian,
    norm_Hk_space,
    trapz_weights,
)
from .kernel import KernelSpec, check_R_bound, compute_R
from .mfg_forward import CipData, MfgCoefficients, MfgSolution


class RBoundError(ValueError):
    """``|R|`` drops below the admissible lower bound."""


@dataclass
class DiffBundle:
    """Node-wise differences of two triples and their data (index 1 minus index 2)."""

    u: Field
    m: Field
    b: Field
    data1: CipData
    data2: CipData
    p: Field
    q: Field
    F: Field
    G: Field
    f0: dict
    f1: dict
    g0: dict
    g1: dict

    @property
    def spec(self) -> GridSpec:
        return self.u.spec


def _dict_diff(d1: dict, d2: dict) -> dict:
    if set(d1) != set(d2):
        raise DomainMismatchError("lateral traces cover different faces")
    return {k: d1[k] - d2[k] for k in sorted(d1)}


def diff_triple(sol1: MfgSolution, sol2: MfgSolution, b1: Field, b2: Field,
                data1: CipData, data2: CipData) -> DiffBundle:
    spec = sol1.u.spec
    for f in (sol2.u, sol1.m, sol2.m, b1, b2, data1.p, data2.p):
        if f.spec != spec:
            raise DomainMismatchError("both triples must share one grid")
    return DiffBundle(
        u=sol1.u - sol2.u, m=sol1.m - sol2.m, b=b1 - b2, data1=data1, data2=data2,
        p=data1.p - data2.p, q=data1.q - data2.q, F=data1.F - data2.F, G=data1.G - data2.G,
        f0=_dict_diff(data1.f0, data2.f0), f1=_dict_diff(data1.f1, data2.f1),
        g0=_dict_diff(data1.g0, data2.g0), g1=_dict_diff(data1.g1, data2.g1),
    )


def guarded_R(kernel: KernelSpec, m2: Field, c: float = 1e-8) -> Field:
    R = compute_R(kernel, m2)
    ok, rmin = check_R_bound(R, c)
    if not ok:
        raise RBoundError(f"min |R| = {rmin:.3e} is below c = {c:.3e}")
    return R


def _dot(u: list[Field], v: list[Field]):
    return sum(a * b for a, b in zip(u, v))


def build_pq_coefficients(sol1: MfgSolution, sol2: MfgSolution, coeffs: MfgCoefficients,
                          R: Field, c: float = 1e-8) -> tuple[list[Field], Field]:
    """Drift ``P`` (one Field per axis) and potential ``Q`` of the ``u_bar`` equation."""
    ok, rmin = check_R_bound(R, c)
    if not ok:
        raise RBoundError(f"min |R| = {rmin:.3e} is below c = {c:.3e}")
    D = -R
    a = np.broadcast_to(coeffs.a.values, D.values.shape)
    g = [0.5 * (x + y) for x, y in zip(gradient(sol1.u), gradient(sol2.u))]
    gD = gradient(D)
    P = [2.0 * gd / D - gi * a for gd, gi in zip(gD, g)]
    Q = (dt(D) + laplacian(D) - _dot(g, gD) * a) / D
    return P, Q


def _space_pq(spec: GridSpec, coeffs: MfgCoefficients, pa: Field, pb: Field, D: Field,
              D_t: Field) -> tuple[list[Field], Field]:
    """``P``, ``Q`` on one time level from the endpoint traces of u_1, u_2."""
    a = coeffs.a.values
    g = [0.5 * (x + y) for x, y in zip(gradient(pa), gradient(pb))]
    gD = gradient(D)
    P = [2.0 * gd / D - gi * a for gd, gi in zip(gD, g)]
    Q = (D_t + laplacian(D) - _dot(g, gD) * a) / D
    return P, Q


def _bracket(kernel: KernelSpec, f: Field) -> Field:
    L = kernel.interaction_matrix
    return f.like((L @ f.values.ravel()).reshape(f.values.shape))


def endpoint_fields(bundle: DiffBundle, b1: Field, R: Field,
                    coeffs: MfgCoefficients) -> tuple[Field, Field, Field, Field]:
    """``(W0, WT, Z0, ZT)`` from endpoint data, ``b_1`` and the reference ``R``."""
    spec = bundle.spec
    D = -R
    D_t = dt(D)
    a, kern = coeffs.a, coeffs.kernel
    d1_, d2_ = bundle.data1, bundle.data2
    out = []
    for k, pt, mt, p1, p2 in ((0, bundle.p, bundle.q, d1_.p, d2_.p),
                              (spec.Nt - 1, bundle.F, bundle.G, d1_.F, d2_.F)):
        Dk, Dtk = D.at_time(k), D_t.at_time(k)
        sk = coeffs.s.at_time(k)
        P, Q = _space_pq(spec, coeffs, p1, p2, Dk, Dtk)
        ub = pt / Dk
        W = -(laplacian(ub) + _dot(P, gradient(ub)) + Q * ub
              + (b1 * _bracket(kern, mt) + sk * mt) / Dk)
        out.append(W)
    for pt, mt, p2, m1 in ((bundle.p, bundle.q, d2_.p, d1_.q), (bundle.F, bundle.G, d2_.F, d1_.G)):
        flux_a = [a * mt * gi for gi in gradient(p2)]
        flux_b = [a * m1 * gi for gi in gradient(pt)]
        out.append(laplacian(mt) + divergence(flux_a) + divergence(flux_b))
    W0, WT, Z0, ZT = out
    return W0, WT, Z0, ZT


def ramp(spec: GridSpec, f0: Field, fT: Field) -> Field:
    """``f0 (1 - t/T) + fT t/T`` as a spacetime Field."""
    s = (spec.t / spec.T).reshape((-1,) + (1,) * spec.n)
    return Field.spacetime(spec, f0.values[None] * (1.0 - s) + fT.values[None] * s)


def make_vw(u_bar: Field, m_tilde: Field, W0: Field, WT: Field, Z0: Field,
            ZT: Field) -> tuple[Field, Field, Field, Field]:
    """``(v, w, v_bar, w_bar)``."""
    spec = u_bar.spec
    v_bar, w_bar = dt(u_bar), dt(m_tilde)
    return v_bar - ramp(spec, W0, WT), w_bar - ramp(spec, Z0, ZT), v_bar, w_bar


_FIELDS = ("u_tilde", "m_tilde", "u_bar", "v_bar", "w_bar", "v", "w", "W0", "WT", "Z0", "ZT",
           "Q", "b_tilde", "R")


@dataclass
class TransformedFields:
    u_tilde: Field
    m_tilde: Field
    u_bar: Field
    v_bar: Field
    w_bar: Field
    v: Field
    w: Field
    W0: Field
    WT: Field
    Z0: Field
    ZT: Field
    P: list
    Q: Field
    b_tilde: Field
    R: Field
    data_norm: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def spec(self) -> GridSpec:
        return self.v.spec

    def endpoint_defects(self) -> dict[str, float]:
        """Sup-norm defects of the endpoint identities of ``v`` and ``w``."""
        v, w, b = self.v.values, self.w.values, self.b_tilde.values
        return {
            "w0": float(np.max(np.abs(w[0]))),
            "wT": float(np.max(np.abs(w[-1]))),
            "v0_plus_b": float(np.max(np.abs(v[0] + b))),
            "vT_plus_b": float(np.max(np.abs(v[-1] + b))),
            "v0_minus_vT": float(np.max(np.abs(v[0] - v[-1]))),
        }

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name in _FIELDS:
            getattr(self, name).save(d / f"{name}.field")
        for i, comp in enumerate(self.P):
            comp.save(d / f"P{i + 1}.field")
        manifest = {"fields": list(_FIELDS), "P": len(self.P), "data_norm": self.data_norm,
                    "endpoint_defects": self.endpoint_defects()}
        (d / "transform.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "TransformedFields":
        d = Path(directory)
        manifest = json.loads((d / "transform.json").read_text())
        kw = {name: Field.load(d / f"{name}.field") for name in manifest["fields"]}
        P = [Field.load(d / f"P{i + 1}.field") for i in range(manifest["P"])]
        return cls(P=P, data_norm=manifest["data_norm"], **kw)


def transform(sol1: MfgSolution, sol2: MfgSolution, b1: Field, b2: Field,
              coeffs: MfgCoefficients, data1: CipData, data2: CipData,
              c: float = 1e-8) -> TransformedFields:
    """Run the whole pipeline; ``coeffs`` carries the shared ``a``, ``s`` and kernel shape."""
    bundle = diff_triple(sol1, sol2, b1, b2, data1, data2)
    R = guarded_R(coeffs.kernel, sol2.m, c)
    P, Q = build_pq_coefficients(sol1, sol2, coeffs, R, c)
    W0, WT, Z0, ZT = endpoint_fields(bundle, b1, R, coeffs)
    u_bar = bundle.u / (-R)
    v, w, v_bar, w_bar = make_vw(u_bar, bundle.m, W0, WT, Z0, ZT)
    norm = float(np.sqrt(sum(norm_Hk_space(f, 4) ** 2 for f in (bundle.p, bundle.q, bundle.F, bundle.G))))
    return TransformedFields(bundle.u, bundle.m, u_bar, v_bar, w_bar, v, w, W0, WT, Z0, ZT,
                             P, Q, bundle.b, R, norm)


# integral differential inequalities -----------------------------------------


def _slice_integral(spec: GridSpec, f: np.ndarray) -> np.ndarray:
    """Integral over the cross-section at fixed x1, broadcast back to the spacetime shape."""
    if spec.n == 1:
        return f
    w = trapz_weights(spec.Nx[1], spec.h[1])
    return np.broadcast_to(np.tensordot(f, w, axes=([2], [0]))[..., None], f.shape)


def _tail_integral(spec: GridSpec, f: np.ndarray) -> np.ndarray:
    """``int_{x1}^{A_1} f(y1, .) dy1`` for each node (f already x1-dependent only)."""
    rev = cumulative_trapezoid(f[:, ::-1], dx=spec.h[0], axis=1, initial=0.0)
    return rev[:, ::-1]


def _volterra(spec: GridSpec, f: np.ndarray) -> np.ndarray:
    return cumulative_trapezoid(f, dx=spec.tau, axis=0, initial=0.0)


def _gradnorm(f: Field) -> np.ndarray:
    return np.sqrt(sum(g.values**2 for g in gradient(f)))


@dataclass
class InequalityFields:
    lhs1: Field
    base1: Field
    lhs2: Field
    base2: Field
    x_unit: float

    def rhs(self, C1: float) -> tuple[Field, Field]:
        return (self.base1 * C1 + C1 * self.x_unit, self.base2 * C1 + C1 * self.x_unit)

    def satisfied_fraction(self, C1: float) -> tuple[float, float]:
        r1, r2 = self.rhs(C1)
        sl = (slice(1, -1),) * (self.lhs1.spec.n + 1)
        f1 = np.mean(self.lhs1.values[sl] <= r1.values[sl] * (1 + 1e-12))
        f2 = np.mean(self.lhs2.values[sl] <= r2.values[sl] * (1 + 1e-12))
        return float(f1), float(f2)


def inequality_fields(tf: TransformedFields) -> InequalityFields:
    """Left sides and ``C_1 = 1`` majorants of the two integral differential inequalities.

    ``X_1``, ``X_2`` are taken as the uniform field whose ``L_2(Q_T)`` norm
    equals ``C_1`` times the ``H^4`` size of the endpoint data differences.
    """
    spec = tf.spec
    v, w = tf.v, tf.w
    lhs1 = np.abs((dt(v) + laplacian(v)).values)
    lhs2 = np.abs((dt(w) - laplacian(w)).values)
    av, aw = np.abs(v.values), np.abs(w.values)
    gv, gw = _gradnorm(v), _gradnorm(w)
    lv = np.abs(laplacian(v).values)
    sw = _slice_integral(spec, aw)
    sw_t = _volterra(spec, sw)
    base1 = gv + av + sw + sw_t + _tail_integral(spec, sw) + _tail_integral(spec, sw_t)
    base2 = (gw + aw + _volterra(spec, gw + aw) + gv + _volterra(spec, gv)
             + lv + _volterra(spec, lv))
    vol = spec.T * float(np.prod([2 * A for A in spec.A]))
    x_unit = tf.data_norm / np.sqrt(vol)
    return InequalityFields(v.like(lhs1), v.like(base1), w.like(lhs2), w.like(base2), x_unit)


def residual_bounds(tf: TransformedFields, C1: float) -> tuple[Field, Field, Field, Field]:
    """``(lhs1, rhs1, lhs2, rhs2)`` for a supplied constant ``C_1``."""
    ineq = inequality_fields(tf)
    r1, r2 = ineq.rhs(C1)
    return ineq.lhs1, r1, ineq.lhs2, r2


def calibrate_C1(tf: TransformedFields, quantile: float = 0.99) -> float:
    """Smallest ``C_1`` satisfying both inequalities at ``quantile`` of the interior nodes."""
    ineq = inequality_fields(tf)
    sl = (slice(1, -1),) * (tf.spec.n + 1)
    ratios = []
    for lhs, base in ((ineq.lhs1, ineq.base1), (ineq.lhs2, ineq.base2)):
        den = base.values[sl] + ineq.x_unit
        r = np.where(den > 0, lhs.values[sl] / np.where(den > 0, den, 1.0), np.inf)
        r = np.where((den == 0) & (lhs.values[sl] == 0), 0.0, r)
        ratios.append(float(np.quantile(r, quantile)))
    return max(ratios)
