"""
Synthetic forward instances.

An instance is fully described by a flat parameter dict (see ``DEFAULTS``);
the config files of the CLI override these keys.

The data are built to satisfy the corner compatibility conditions of both
equations (first order for HJB, second order for FP), since the transformed
identities are only exact for solutions smooth up to the corners:

* ``a = (a0 + a1 sin x1) prod_i cos(pi x_i / 2A_i)^a_pow`` vanishes with its
  first derivative on the boundary, so the drift drops out of the first-order
  corner conditions.  Higher powers raise the compatibility order but put
  more weight on frequencies that Crank-Nicolson resolves poorly at
  ``tau ~ h``.
* ``K2`` carries the factor ``((1 + x1/A_1)/2)^3 ((1 - y1/A_1)/2)^2``, so the
  tail integral and its first two x1-derivatives vanish at ``x1 = +-A_1``.
* ``b_2 = b_ref0 + b_ref1 sin(pi x1 / 2A_1)`` and
  ``s = s0 cos(t) (1 + s1 sin(pi x1 / 2A_1))`` have zero x1-slope on the
  faces ``x1 = +-A_1``.
* ``M_b = q + t Lap q + t^2 Lap^2 q / 2`` with
  ``q = 1 + m_amp c(x) + m_tilt x1 + m_curv x1^2`` and
  ``c = prod_i cos(pi x_i / 2A_i)``.
* ``U_b = F + (t - T) l_1(x1) + (t - T)^2 l_2(x1) / 2`` with
  ``F = u_amp c + u_slope x1`` and ``l_1``, ``l_2`` linear in ``x1``,
  matching ``u_t`` and ``u_tt`` from the HJB equation at the corners
  ``x1 = +-A_1, t = T``.  Under the conditions above these are
  ``u_t = -(b K1 + s) m`` and ``u_tt = (b'' K1 + s_xx - s_t) m - a'' F'^2 / 2``.

``F = U_b(., T)``, ``q = M_b(., 0)``; the lateral Dirichlet data are
``U_b``, ``M_b``.  For n = 2 the faces ``x2 = +-A_2`` satisfy the FP
conditions but not the HJB ones.

The truth adds ``bump_amp prod_i (1 - (x_i/A_i)^2)^3`` to ``b_2``; the bump
vanishes on the boundary with two derivatives, so both amplitudes share the
corner values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .grid import Field, GridSpec
from .kernel import KernelSpec
from .mfg_forward import (
    LateralData,
    MfgCoefficients,
    MfgSolution,
    SolverConfig,
    picard_solve,
)

DEFAULTS: dict = {
    "n": 1,
    "A": 1.0,
    "T": 1.0,
    "Nx": 101,
    "Nt": 101,
    "gamma": 1.0,
    "a0": 0.3,
    "a1": 0.1,
    "a_pow": 2,
    "s0": 0.1,
    "s1": 0.5,
    "K1": 1.0,
    "K2_amp": 0.3,
    "K2_sigma": 0.5,
    "b_ref0": 0.5,
    "b_ref1": 0.2,
    "bump_amp": 0.1,
    "u_amp": 0.3,
    "u_slope": 0.1,
    "m_amp": 0.3,
    "m_tilt": 0.05,
    "m_curv": 0.1,
    "M": 10.0,
    "picard_tol": 1e-10,
    "picard_max_iters": 200,
    "theta": 0.5,
    "hjb_sweeps": 4,
}


@dataclass
class Instance:
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.params) - set(DEFAULTS)
        if unknown:
            raise KeyError(f"unknown instance parameters: {sorted(unknown)}")
        self.params = {**DEFAULTS, **self.params}

    @cached_property
    def spec(self) -> GridSpec:
        p = self.params
        n = int(p["n"])
        return GridSpec([float(p["A"])] * n, float(p["T"]), [int(p["Nx"])] * n, int(p["Nt"]),
                        float(p["gamma"]))

    # coefficient fields ----------------------------------------------------

    @cached_property
    def a(self) -> Field:
        spec, p = self.spec, self.params
        xs = spec.mesh()
        vals = p["a0"] + p["a1"] * np.sin(xs[0])
        for i, x in enumerate(xs):
            vals = vals * np.cos(np.pi * x / (2 * spec.A[i])) ** p["a_pow"]
        return Field.space(spec, vals)

    @cached_property
    def s(self) -> Field:
        spec, p = self.spec, self.params
        t, x1 = spec.spacetime_mesh()[:2]
        return Field.spacetime(spec, p["s0"] * np.cos(t) * (1.0 + p["s1"] * np.sin(np.pi * x1 / (2 * spec.A[0]))))

    @cached_property
    def kernel_shape(self) -> tuple[np.ndarray, np.ndarray]:
        spec, p = self.spec, self.params
        sig = p["K2_sigma"]
        gauss = [np.exp(-(ax[:, None] - ax[None, :]) ** 2 / (2 * sig**2))
                 for ax in (spec.axis(i) for i in range(spec.n))]
        x1 = spec.axis(0) / spec.A[0]
        gauss[0] = gauss[0] * (((1.0 + x1) / 2.0) ** 3)[:, None] * (((1.0 - x1) / 2.0) ** 2)[None, :]
        if spec.n == 1:
            return np.array(p["K1"]), p["K2_amp"] * gauss[0]
        return p["K1"] * gauss[1], p["K2_amp"] * np.einsum("ij,ab->iajb", gauss[0], gauss[1])

    def kernel(self, b: Field) -> KernelSpec:
        K1, K2 = self.kernel_shape
        return KernelSpec(self.spec, K1, K2, b, self.params["M"])

    def coefficients(self, b: Field) -> MfgCoefficients:
        return MfgCoefficients(self.a, self.s, self.kernel(b))

    @cached_property
    def b_reference(self) -> Field:
        p = self.params
        x1 = self.spec.mesh()[0]
        return Field.space(self.spec, p["b_ref0"] + p["b_ref1"] * np.sin(np.pi * x1 / (2 * self.spec.A[0])))

    @cached_property
    def bump(self) -> Field:
        spec = self.spec
        xs = spec.mesh()
        vals = np.ones(spec.space_shape)
        for i, x in enumerate(xs):
            vals = vals * (1.0 - (x / spec.A[i]) ** 2) ** 3
        return Field.space(spec, self.params["bump_amp"] * vals)

    @cached_property
    def b_true(self) -> Field:
        return self.b_reference + self.bump

    # boundary data ---------------------------------------------------------

    def _backgrounds(self) -> tuple[np.ndarray, np.ndarray]:
        spec, p = self.spec, self.params
        t, *xs = spec.spacetime_mesh()
        c = np.ones_like(t)
        for i, x in enumerate(xs):
            c = c * np.cos(np.pi * x / (2 * spec.A[i]))
        k = -sum((np.pi / (2 * A)) ** 2 for A in spec.A)  # Lap c = k c
        q = 1.0 + p["m_amp"] * c + p["m_tilt"] * xs[0] + p["m_curv"] * xs[0] ** 2
        M = q + t * (p["m_amp"] * k * c + 2.0 * p["m_curv"]) + 0.5 * t**2 * p["m_amp"] * k**2 * c
        F = p["u_amp"] * c + p["u_slope"] * xs[0]
        A1, T, K1 = spec.A[0], spec.T, p["K1"]
        w2 = (np.pi / (2 * A1)) ** 2
        l1, l2 = [], []
        for x1 in (-A1, A1):
            sn = np.sin(np.pi * x1 / (2 * A1))
            m_c = 1.0 + p["m_tilt"] * x1 + p["m_curv"] * x1**2 + 2.0 * p["m_curv"] * T
            b_c = p["b_ref0"] + p["b_ref1"] * sn
            b_xx = -p["b_ref1"] * w2 * sn
            s_c = p["s0"] * np.cos(T) * (1.0 + p["s1"] * sn)
            s_xx = -p["s0"] * np.cos(T) * p["s1"] * w2 * sn
            s_t = -p["s0"] * np.sin(T) * (1.0 + p["s1"] * sn)
            l1.append(-(b_c * K1 + s_c) * m_c)
            a_xx = (p["a0"] + p["a1"] * np.sin(x1)) * (2.0 * w2 if p["a_pow"] == 2 else 0.0)
            F_x = -p["u_amp"] * np.sqrt(w2) * sn + p["u_slope"]
            l2.append((b_xx * K1 + s_xx - s_t) * m_c - 0.5 * a_xx * F_x**2)
        r = (xs[0] + A1) / (2 * A1)
        ell1 = l1[0] + (l1[1] - l1[0]) * r
        ell2 = l2[0] + (l2[1] - l2[0]) * r
        U = F + (t - T) * ell1 + 0.5 * (t - T) ** 2 * ell2
        return U, M

    @cached_property
    def boundary(self) -> tuple[Field, Field, LateralData, LateralData]:
        """``(q, F, lateral u, lateral m)``."""
        U, M = self._backgrounds()
        spec = self.spec
        Uf, Mf = Field.spacetime(spec, U), Field.spacetime(spec, M)
        return (Mf.at_time(0), Uf.at_time(spec.Nt - 1),
                LateralData.from_spacetime(Uf), LateralData.from_spacetime(Mf))

    @property
    def solver_config(self) -> SolverConfig:
        p = self.params
        return SolverConfig(theta=p["theta"], tol=p["picard_tol"], max_iters=int(p["picard_max_iters"]),
                            hjb_sweeps=int(p["hjb_sweeps"]))

    def solve(self, b: Field) -> MfgSolution:
        q, F, du, dm = self.boundary
        return picard_solve(self.coefficients(b), q, F, du, dm, self.solver_config)

    @cached_property
    def reference(self) -> MfgSolution:
        return self.solve(self.b_reference)

    @cached_property
    def truth(self) -> MfgSolution:
        return self.solve(self.b_true)


def standard_instance(**overrides) -> Instance:
    return Instance(dict(overrides))
