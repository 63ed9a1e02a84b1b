"""
Nonlocal interaction kernel ``K(x, y) = b(x) {delta(x1 - y1) K1(xb, yb) + H(y1 - x1) K2(x, y)}``.

The delta factor is never sampled.  Integrating it out leaves, for every x,
a slice integral over the cross-section at fixed ``x1`` plus a tail integral
over ``y1 in (x1, A_1)``; both are trapezoidal sums on grid nodes, so the
whole interaction is a fixed linear map on each time level
(``interaction_matrix``).

For n = 1 the cross-section is one point of unit measure and ``K1`` is a
scalar.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .grid import DomainMismatchError, Field, GridSpec, trapz_weights


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Sampled kernel data.

    ``K1``: scalar (n = 1) or ``(Nx2, Nx2)`` samples of ``K1(x2, y2)``.
    ``K2``: ``(Nx1, Nx1)`` samples of ``K2(x1, y1)`` (n = 1) or
    ``(Nx1, Nx2, Nx1, Nx2)`` samples of ``K2(x, y)`` (n = 2).
    """

    spec: GridSpec
    K1: np.ndarray
    K2: np.ndarray
    b: Field
    M: float

    def __post_init__(self):
        spec = self.spec
        K1 = np.array(self.K1, dtype=float)
        K2 = np.array(self.K2, dtype=float)
        if spec.n == 1:
            if K1.size != 1:
                raise ValueError("K1 must be a scalar when n = 1")
            K1 = K1.reshape(())
        elif K1.shape != (spec.Nx[1], spec.Nx[1]):
            raise ValueError("K1 must be sampled on the cross-section squared")
        k2_shape = tuple(spec.Nx) * 2
        if K2.size == 1:
            K2 = np.full(k2_shape, float(K2))
        if K2.shape != k2_shape:
            raise ValueError(f"K2 must have shape {k2_shape}")
        if self.b.spec != spec or not self.b.is_("space"):
            raise DomainMismatchError("b must be a space Field on the kernel grid")
        if not (np.all(np.isfinite(K1)) and np.all(np.isfinite(K2))):
            raise ValueError("kernel samples must be finite")
        for name, arr in (("K1", K1), ("K2", K2), ("b", self.b.values)):
            if np.max(np.abs(arr)) >= self.M:
                raise ValueError(f"max|{name}| must stay below the a-priori bound M={self.M}")
        K1.flags.writeable = False
        K2.flags.writeable = False
        object.__setattr__(self, "K1", K1)
        object.__setattr__(self, "K2", K2)

    def with_b(self, b: Field) -> "KernelSpec":
        M = max(self.M, 1.01 * b.max_abs() + 1e-12)
        return KernelSpec(self.spec, self.K1, self.K2, b, M)

    @cached_property
    def interaction_matrix(self) -> np.ndarray:
        """Dense ``N x N`` matrix of the bracket ``m -> [K1 part + K2 part]`` (no b)."""
        return interaction_matrix(self.spec, self.K1, self.K2)

    # serialization ---------------------------------------------------------

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.b.save(d / "b.field")
        np.save(d / "K1.npy", np.asarray(self.K1))
        np.save(d / "K2.npy", np.asarray(self.K2))
        manifest = {"K1_shape": list(np.shape(self.K1)), "K2_shape": list(self.K2.shape),
                    "M": self.M, "grid": self.spec.to_dict()}
        (d / "kernel.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "KernelSpec":
        d = Path(directory)
        manifest = json.loads((d / "kernel.json").read_text())
        b = Field.load(d / "b.field")
        K1 = np.load(d / "K1.npy")
        K2 = np.load(d / "K2.npy")
        if list(np.shape(K1)) != manifest["K1_shape"] or list(K2.shape) != manifest["K2_shape"]:
            raise ValueError("kernel arrays disagree with the manifest")
        return cls(b.spec, K1, K2, b, manifest["M"])


def interaction_matrix(spec: GridSpec, K1, K2) -> np.ndarray:
    x1w = spec.h[0]
    N1 = spec.Nx[0]
    # tail weights: trapezoid over nodes j >= i, zero row for i = N1 - 1
    tail = np.zeros((N1, N1))
    for i in range(N1 - 1):
        tail[i, i:] = x1w
        tail[i, i] = tail[i, -1] = 0.5 * x1w
    if spec.n == 1:
        return float(K1) * np.eye(N1) + np.asarray(K2) * tail
    N2 = spec.Nx[1]
    w2 = trapz_weights(N2, spec.h[1])
    slice_part = np.einsum("ij,ab,b->iajb", np.eye(N1), K1, w2)
    tail_part = np.asarray(K2) * tail[:, None, :, None] * w2[None, None, None, :]
    return (slice_part + tail_part).reshape(N1 * N2, N1 * N2)


def _bracket(k: KernelSpec, m: Field) -> np.ndarray:
    if m.spec != k.spec:
        raise DomainMismatchError("density and kernel live on different grids")
    L = k.interaction_matrix
    if m.is_("spacetime"):
        flat = m.values.reshape(m.spec.Nt, -1)
        return (flat @ L.T).reshape(m.values.shape)
    if m.tag[0] in ("space", "time_slice"):
        return (L @ m.values.ravel()).reshape(m.values.shape)
    raise DomainMismatchError(f"cannot apply the kernel to a {m.tag} Field")


def apply_interaction(k: KernelSpec, m: Field) -> Field:
    """``int_Omega K(x, y) m(y, t) dy`` node-wise."""
    return m.like(k.b.values * _bracket(k, m))


def compute_R(k: KernelSpec, m2: Field) -> Field:
    """``R = -[K1 slice integral + K2 tail integral]`` of ``m2`` (no amplitude)."""
    return m2.like(-_bracket(k, m2))


def check_R_bound(R: Field, c: float) -> tuple[bool, float]:
    """Whether ``min |R| >= c`` over all nodes, with the attained minimum."""
    rmin = float(np.min(np.abs(R.values)))
    return rmin >= c, rmin


def gaussian_kernel(spec: GridSpec, sigma, b: Field | None = None, M: float | None = None) -> KernelSpec:
    """Product-Gaussian kernel.

    ``K2(x, y) = (2 pi)^-n prod_i sigma_i^-1 exp(-(x_i - y_i)^2 / (2 sigma_i^2))`` and
    ``K1`` keeps the cross-section factors with the matching ``(2 pi)^-(n-1)``
    prefactor (so ``K1 = 1`` when n = 1).
    """
    sigma = np.broadcast_to(np.atleast_1d(np.asarray(sigma, dtype=float)), (spec.n,))
    if np.any(sigma <= 0):
        raise ValueError("Gaussian widths must be positive")
    axes = [spec.axis(i) for i in range(spec.n)]
    factors = [np.exp(-(ax[:, None] - ax[None, :]) ** 2 / (2 * s**2)) / s
               for ax, s in zip(axes, sigma)]
    if spec.n == 1:
        K1 = np.array(1.0)
        K2 = factors[0] / (2 * np.pi)
    else:
        K1 = factors[1] / (2 * np.pi)
        K2 = np.einsum("ij,ab->iajb", factors[0], factors[1]) / (2 * np.pi) ** 2
    if b is None:
        b = Field.space(spec, np.ones(spec.space_shape))
    if M is None:
        M = 1.01 * max(np.max(np.abs(K1)), np.max(np.abs(K2)), b.max_abs()) + 1.0
    return KernelSpec(spec, K1, K2, b, M)
