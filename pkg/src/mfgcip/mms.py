"""
Manufactured solution for the one-dimensional forward solvers.

    u = exp(-t) cos(k x) + 0.2 x,   m = exp(-t/2) (1.5 + 0.5 sin(k x)),   k = pi / 2
    a = 0.3 + 0.1 sin x,  b = 0.5 + 0.2 x,  s = 0.1 cos(t + x),  K1 = 0.8,  K2 = 0.3

on ``[-1, 1] x [0, 1]``.  The forcings ``f_u``, ``f_m`` are the exact
residuals, so the discrete solutions converge to ``(u, m)``.  The error of the
one-sided time derivatives at ``t = 0, T`` on the same grid is the
discretization floor against which endpoint identities are judged.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .grid import Field, GridSpec, dt
from .kernel import KernelSpec
from .mfg_forward import (
    LateralData,
    MfgCoefficients,
    SolverConfig,
    solve_fp_forward,
    solve_hjb_backward,
)

K = np.pi / 2
K1, K2 = 0.8, 0.3


def mms_grid(N: int, Nt: int | None = None) -> GridSpec:
    return GridSpec([1.0], 1.0, [N], N if Nt is None else Nt, 1.0)


@dataclass
class ManufacturedProblem:
    spec: GridSpec

    def __post_init__(self):
        if self.spec.n != 1 or self.spec.A[0] != 1.0:
            raise ValueError("the manufactured solution lives on [-1, 1]")

    @cached_property
    def _mesh(self):
        t, x = self.spec.spacetime_mesh()
        return np.broadcast_to(t, self.spec.spacetime_shape), np.broadcast_to(x, self.spec.spacetime_shape)

    def _exact(self):
        t, x = self._mesh
        et, eh = np.exp(-t), np.exp(-t / 2)
        c, s_ = np.cos(K * x), np.sin(K * x)
        u = et * c + 0.2 * x
        ut = -et * c
        ux = -K * et * s_ + 0.2
        uxx = -K**2 * et * c
        m = eh * (1.5 + 0.5 * s_)
        mt = -0.5 * m
        mx = eh * 0.5 * K * c
        mxx = -eh * 0.5 * K**2 * s_
        return dict(u=u, ut=ut, ux=ux, uxx=uxx, m=m, mt=mt, mx=mx, mxx=mxx)

    @cached_property
    def exact(self) -> dict:
        return self._exact()

    @cached_property
    def coefficients(self) -> MfgCoefficients:
        spec = self.spec
        x = spec.axis(0)
        t, xx = self._mesh
        b = Field.space(spec, 0.5 + 0.2 * x)
        kernel = KernelSpec(spec, K1, np.full((spec.Nx[0],) * 2, K2), b, 10.0)
        return MfgCoefficients(Field.space(spec, 0.3 + 0.1 * np.sin(x)),
                               Field.spacetime(spec, 0.1 * np.cos(t + xx)), kernel)

    @cached_property
    def forcings(self) -> tuple[Field, Field]:
        e = self.exact
        t, x = self._mesh
        a, ax = 0.3 + 0.1 * np.sin(x), 0.1 * np.cos(x)
        tail = np.exp(-t / 2) * (1.5 * (1.0 - x) + np.cos(K * x) / np.pi)
        bracket = K1 * e["m"] + K2 * tail
        fu = (e["ut"] + e["uxx"] - 0.5 * a * e["ux"] ** 2 + (0.5 + 0.2 * x) * bracket
              + 0.1 * np.cos(t + x) * e["m"])
        drift = ax * e["m"] * e["ux"] + a * e["mx"] * e["ux"] + a * e["m"] * e["uxx"]
        fm = e["mt"] - e["mxx"] - drift
        return Field.spacetime(self.spec, fu), Field.spacetime(self.spec, fm)

    def field(self, name: str) -> Field:
        return Field.spacetime(self.spec, self.exact[name])

    def solve(self, config: SolverConfig | None = None) -> tuple[Field, Field]:
        """Decoupled solves: HJB with the exact density, FP with the exact value function."""
        spec = self.spec
        U, M = self.field("u"), self.field("m")
        fu, fm = self.forcings
        cfg = config or SolverConfig(hjb_sweeps=4)
        co = self.coefficients
        u = solve_hjb_backward(co, M, U.at_time(spec.Nt - 1), LateralData.from_spacetime(U), fu, cfg)
        m = solve_fp_forward(co, U, M.at_time(0), LateralData.from_spacetime(M), fm, cfg)
        return u, m

    def errors(self) -> dict[str, float]:
        u, m = self.solve()
        return {"u": float(np.max(np.abs(u.values - self.exact["u"]))),
                "m": float(np.max(np.abs(m.values - self.exact["m"])))}

    def endpoint_derivative_floor(self) -> float:
        """Largest error of the one-sided ``d_t u``, ``d_t m`` at ``t = 0, T`` of the discrete solutions."""
        u, m = self.solve()
        out = 0.0
        for num, key in ((u, "ut"), (m, "mt")):
            d = dt(num).values - self.exact[key]
            out = max(out, float(np.max(np.abs(d[[0, -1]]))))
        return out


def convergence_orders(Ns=(21, 41, 81, 161)) -> dict:
    """Max-norm errors on a joint (h, tau) ladder and the observed orders between rungs."""
    errs = [ManufacturedProblem(mms_grid(N)).errors() for N in Ns]
    orders = {k: [float(np.log2(errs[i][k] / errs[i + 1][k])) for i in range(len(Ns) - 1)]
              for k in ("u", "m")}
    return {"N": list(Ns), "errors": errs, "orders": orders}


def endpoint_floor(N: int, Nt: int | None = None) -> float:
    return ManufacturedProblem(mms_grid(N, Nt)).endpoint_derivative_floor()
