"""
Rectangular space-time grids, grid functions and discrete operators.

The physical domain is the prism ``Omega = prod_i (-A_i, A_i)`` (n = 1 or 2)
crossed with the time interval ``(0, T)``.  Nodes are uniform along every
axis.  Spacetime arrays are stored time-major, ``values[k, i1, (i2)]``.

Derivative stencils:
    * first derivatives: central differences at interior nodes, one-sided
      second-order differences at the two end nodes (``numpy.gradient`` with
      ``edge_order=2``);
    * second derivatives: the 3-point stencil at interior nodes and the
      4-point one-sided stencil at end nodes.

Quadrature is the composite trapezoidal rule on every domain.  When n = 1
the cross-section ``Omega'`` is a single point of unit measure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

FORMAT_VERSION = 1


class DomainMismatchError(ValueError):
    """Raised when an operation receives a Field on the wrong domain or grid."""


class FieldFormatError(ValueError):
    """Raised when a Field file is malformed."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on ``Omega x [0, T]``.

    ``A`` holds the half-widths, ``Nx`` the nodes per spatial axis and ``Nt``
    the number of time nodes (both end points included).
    """

    A: tuple[float, ...]
    T: float
    Nx: tuple[int, ...]
    Nt: int
    gamma: float

    def __post_init__(self):
        A = tuple(float(a) for a in np.atleast_1d(self.A))
        Nx = tuple(int(k) for k in np.atleast_1d(self.Nx))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Nx", Nx)
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "Nt", int(self.Nt))
        object.__setattr__(self, "gamma", float(self.gamma))
        if len(A) not in (1, 2) or len(Nx) != len(A):
            raise ValueError("spatial dimension must be 1 or 2 with one Nx per axis")
        if any(a <= 0 for a in A) or self.T <= 0:
            raise ValueError("half-widths A_i and horizon T must be positive")
        if any(k < 3 for k in Nx) or self.Nt < 3:
            raise ValueError("need at least 3 nodes per axis")
        if not 0.0 < self.gamma < 2.0 * A[0]:
            raise ValueError("gamma must lie in (0, 2*A_1)")

    @property
    def n(self) -> int:
        return len(self.A)

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(2.0 * a / (k - 1) for a, k in zip(self.A, self.Nx))

    @property
    def tau(self) -> float:
        return self.T / (self.Nt - 1)

    def axis(self, i: int) -> np.ndarray:
        """Node coordinates along spatial axis ``i`` (0-based)."""
        return np.linspace(-self.A[i], self.A[i], self.Nx[i])

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.Nt)

    @property
    def space_shape(self) -> tuple[int, ...]:
        return self.Nx

    @property
    def spacetime_shape(self) -> tuple[int, ...]:
        return (self.Nt, *self.Nx)

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Spatial coordinate arrays broadcast to ``space_shape``."""
        return tuple(np.meshgrid(*(self.axis(i) for i in range(self.n)), indexing="ij"))

    def spacetime_mesh(self) -> tuple[np.ndarray, ...]:
        """``(t, x1[, x2])`` arrays broadcast to ``spacetime_shape``."""
        axes = [self.t] + [self.axis(i) for i in range(self.n)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def gamma_mask(self) -> np.ndarray:
        """Boolean mask of Omega_gamma = {x1 > -A_1 + gamma} on the spatial grid."""
        x1 = self.mesh()[0]
        return x1 > -self.A[0] + self.gamma

    def with_resolution(self, Nx: Sequence[int] | int, Nt: int) -> "GridSpec":
        Nx = tuple(np.broadcast_to(np.atleast_1d(Nx), (self.n,)).tolist())
        return GridSpec(self.A, self.T, Nx, Nt, self.gamma)

    def to_dict(self) -> dict:
        return {"n": self.n, "A": list(self.A), "T": self.T, "Nx": list(self.Nx),
                "Nt": self.Nt, "gamma": self.gamma}


# domain tags -----------------------------------------------------------------

SPACETIME = ("spacetime",)
SPACE = ("space",)


def lateral_face(axis: int, sign: int) -> tuple:
    """Tag for the lateral face ``{x_axis = sign*A_axis} x [0, T]`` (axis 0-based)."""
    if sign not in (-1, 1):
        raise ValueError("sign must be -1 or +1")
    return ("lateral_face", int(axis), int(sign))


def time_slice(k: int) -> tuple:
    return ("time_slice", int(k))


def _tag_shape(spec: GridSpec, tag: tuple) -> tuple[int, ...]:
    kind = tag[0]
    if kind == "spacetime":
        return spec.spacetime_shape
    if kind in ("space", "time_slice"):
        return spec.space_shape
    if kind == "lateral_face":
        axis = tag[1]
        if not 0 <= axis < spec.n:
            raise DomainMismatchError(f"face axis {axis} out of range")
        other = tuple(k for j, k in enumerate(spec.Nx) if j != axis)
        return (spec.Nt, *other)
    raise DomainMismatchError(f"unknown domain tag {tag!r}")


def _tag_str(tag: tuple) -> str:
    return ":".join(str(p) for p in tag)


def _parse_tag(text: str) -> tuple:
    parts = text.split(":")
    if parts[0] == "lateral_face":
        return lateral_face(int(parts[1]), int(parts[2]))
    if parts[0] == "time_slice":
        return time_slice(int(parts[1]))
    if parts[0] in ("spacetime", "space"):
        return (parts[0],)
    raise FieldFormatError(f"bad domain tag {text!r}")


@dataclass(frozen=True, eq=False)
class Field:
    """Immutable grid function on a tagged domain of ``spec``."""

    spec: GridSpec
    tag: tuple
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        shape = _tag_shape(self.spec, self.tag)
        if vals.size != int(np.prod(shape)):
            raise DomainMismatchError(
                f"{vals.size} values do not fit domain {self.tag} of shape {shape}")
        vals = vals.reshape(shape)
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError("Field values must be finite")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    # convenience -----------------------------------------------------------

    @classmethod
    def spacetime(cls, spec: GridSpec, values) -> "Field":
        return cls(spec, SPACETIME, values)

    @classmethod
    def space(cls, spec: GridSpec, values) -> "Field":
        return cls(spec, SPACE, values)

    @classmethod
    def from_function(cls, spec: GridSpec, fn, tag=SPACETIME) -> "Field":
        """Sample ``fn(t, x1[, x2])`` (spacetime) or ``fn(x1[, x2])`` (space)."""
        if tag[0] == "spacetime":
            vals = fn(*spec.spacetime_mesh())
            return cls(spec, tag, np.broadcast_to(vals, spec.spacetime_shape))
        if tag[0] == "space":
            vals = fn(*spec.mesh())
            return cls(spec, tag, np.broadcast_to(vals, spec.space_shape))
        raise DomainMismatchError("from_function supports spacetime and space tags")

    def is_(self, kind: str) -> bool:
        return self.tag[0] == kind

    def require(self, kind: str) -> None:
        if self.tag[0] != kind:
            raise DomainMismatchError(f"expected a {kind} Field, got {self.tag}")

    def like(self, values) -> "Field":
        return Field(self.spec, self.tag, values)

    def _coerce(self, other):
        if isinstance(other, Field):
            if other.spec != self.spec or other.tag != self.tag:
                raise DomainMismatchError("Field domains differ")
            return other.values
        return other

    def __add__(self, other):
        return self.like(self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.like(self.values - self._coerce(other))

    def __rsub__(self, other):
        return self.like(self._coerce(other) - self.values)

    def __mul__(self, other):
        return self.like(self.values * self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.like(self.values / self._coerce(other))

    def __neg__(self):
        return self.like(-self.values)

    def at_time(self, k: int) -> "Field":
        self.require("spacetime")
        return Field(self.spec, SPACE, self.values[k])

    def face(self, axis: int, sign: int) -> "Field":
        """Restriction of a spacetime Field to a lateral face."""
        self.require("spacetime")
        idx = 0 if sign < 0 else -1
        vals = np.take(self.values, idx, axis=axis + 1)
        return Field(self.spec, lateral_face(axis, sign), vals)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    # serialization ---------------------------------------------------------

    def to_bytes(self) -> bytes:
        header = {
            "version": FORMAT_VERSION,
            **{k: v for k, v in self.spec.to_dict().items()},
            "domain_tag": _tag_str(self.tag),
            "dtype": "f64le",
            "count": int(self.values.size),
        }
        line = json.dumps(header, sort_keys=True) + "\n"
        return line.encode("utf-8") + self.values.astype("<f8").tobytes(order="C")

    @classmethod
    def from_bytes(cls, data: bytes) -> "Field":
        nl = data.find(b"\n")
        if nl < 0:
            raise FieldFormatError("missing header line")
        try:
            header = json.loads(data[:nl].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FieldFormatError(f"unreadable header: {exc}") from exc
        if header.get("version") != FORMAT_VERSION or header.get("dtype") != "f64le":
            raise FieldFormatError("unsupported version or dtype")
        payload = data[nl + 1:]
        count = int(header["count"])
        if len(payload) != 8 * count:
            raise FieldFormatError(
                f"header count {count} does not match payload of {len(payload)} bytes")
        spec = GridSpec(header["A"], header["T"], header["Nx"], header["Nt"], header["gamma"])
        vals = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        tag = _parse_tag(header["domain_tag"])
        if vals.size != int(np.prod(_tag_shape(spec, tag))):
            raise FieldFormatError("count does not match the domain tag")
        return cls(spec, tag, vals)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Field":
        return cls.from_bytes(Path(path).read_bytes())


# array-level stencils --------------------------------------------------------


def d1(a: np.ndarray, step: float, axis: int) -> np.ndarray:
    """Second-order first derivative along ``axis``."""
    return np.gradient(a, step, axis=axis, edge_order=2)


def d2(a: np.ndarray, step: float, axis: int) -> np.ndarray:
    """Second-order second derivative along ``axis``.

    Interior: (f[i-1] - 2 f[i] + f[i+1]) / h^2; ends: (2f0 - 5f1 + 4f2 - f3)/h^2,
    which needs at least four nodes (three nodes fall back to the interior value).
    """
    a = np.moveaxis(np.asarray(a, dtype=float), axis, 0)
    out = np.empty_like(a)
    out[1:-1] = (a[:-2] - 2.0 * a[1:-1] + a[2:]) / step**2
    if a.shape[0] >= 4:
        out[0] = (2.0 * a[0] - 5.0 * a[1] + 4.0 * a[2] - a[3]) / step**2
        out[-1] = (2.0 * a[-1] - 5.0 * a[-2] + 4.0 * a[-3] - a[-4]) / step**2
    else:
        out[0] = out[1]
        out[-1] = out[-2]
    return np.moveaxis(out, 0, axis)


def trapz_weights(N: int, step: float) -> np.ndarray:
    w = np.full(N, step)
    w[0] = w[-1] = 0.5 * step
    return w


def _trapz(a: np.ndarray, steps: Sequence[float]) -> float:
    out = np.asarray(a, dtype=float)
    for step in steps:
        out = np.trapezoid(out, dx=step, axis=0)
    return float(out)


# Field-level operators -------------------------------------------------------


def _spatial_offset(f: Field) -> int:
    return 1 if f.is_("spacetime") else 0


def gradient(f: Field) -> list[Field]:
    """Spatial gradient of a spacetime or space Field."""
    if f.tag[0] not in ("spacetime", "space", "time_slice"):
        raise DomainMismatchError(f"gradient needs a spacetime/space Field, got {f.tag}")
    off = _spatial_offset(f)
    return [f.like(d1(f.values, h, i + off)) for i, h in enumerate(f.spec.h)]


def laplacian(f: Field) -> Field:
    if f.tag[0] not in ("spacetime", "space", "time_slice"):
        raise DomainMismatchError(f"laplacian needs a spacetime/space Field, got {f.tag}")
    off = _spatial_offset(f)
    out = sum(d2(f.values, h, i + off) for i, h in enumerate(f.spec.h))
    return f.like(out)


def dt(f: Field) -> Field:
    f.require("spacetime")
    return f.like(d1(f.values, f.spec.tau, 0))


def divergence(v: Sequence[Field]) -> Field:
    if len(v) == 0:
        raise DomainMismatchError("empty vector field")
    spec, tag = v[0].spec, v[0].tag
    if any(c.spec != spec or c.tag != tag for c in v):
        raise DomainMismatchError("vector components live on different domains")
    if len(v) != spec.n:
        raise DomainMismatchError("vector field needs one component per axis")
    off = 1 if tag[0] == "spacetime" else 0
    return v[0].like(sum(d1(c.values, h, i + off) for i, (c, h) in enumerate(zip(v, spec.h))))


def integrate(f: Field) -> float:
    """Trapezoidal integral over the tagged domain."""
    spec = f.spec
    kind = f.tag[0]
    if kind == "spacetime":
        return _trapz(f.values, (spec.tau, *spec.h))
    if kind in ("space", "time_slice"):
        return _trapz(f.values, spec.h)
    if kind == "lateral_face":
        axis = f.tag[1]
        steps = [spec.tau] + [h for j, h in enumerate(spec.h) if j != axis]
        return _trapz(f.values, steps)
    raise DomainMismatchError(f"cannot integrate over {f.tag}")


def boundary_flux(v: Sequence[Field]) -> float:
    """Outward flux ``int_{S_T} v . n`` of a spacetime vector field."""
    total = 0.0
    for axis, comp in enumerate(v):
        comp.require("spacetime")
        total += integrate(comp.face(axis, +1)) - integrate(comp.face(axis, -1))
    return total


# norms -----------------------------------------------------------------------


def norm_L2(f: Field) -> float:
    return float(np.sqrt(integrate(f * f)))


def _face_tangential(f: Field) -> tuple[list[tuple[str, Field]], Field]:
    """In-face spatial first derivatives and the time derivative of a face Field."""
    spec = f.spec
    axis = f.tag[1]
    tang = []
    for pos, j in enumerate(j for j in range(spec.n) if j != axis):
        tang.append((f"x{j + 1}", f.like(d1(f.values, spec.h[j], pos + 1))))
    ft = f.like(d1(f.values, spec.tau, 0))
    return tang, ft


def norm_H21_lateral(f: Field, derivs: dict[str, Field] | None = None) -> float:
    """Discrete ``H^{2,1}`` norm on a lateral face ``{x_i = +-A_i} x (0, T)``.

    Sums squared L2 face norms of: the tangential first derivatives, all second
    derivatives except the (i, i) pair, ``f`` and ``f_t``.  Derivatives that
    involve the normal direction cannot be computed from face values; pass them
    in ``derivs`` keyed like ``"x1x2"`` (sorted axis labels).  Missing normal
    derivatives are treated as absent.
    """
    if not f.is_("lateral_face"):
        raise DomainMismatchError(f"expected a lateral face Field, got {f.tag}")
    spec = f.spec
    axis = f.tag[1]
    derivs = dict(derivs or {})
    tang, ft = _face_tangential(f)
    total = integrate(f * f) + integrate(ft * ft)
    for _, g in tang:
        total += integrate(g * g)
    for j in range(spec.n):
        for s in range(spec.n):
            if (j, s) == (axis, axis):
                continue
            key = f"x{min(j, s) + 1}x{max(j, s) + 1}"
            if j != axis and s != axis:
                pos_j = [p for p in range(spec.n) if p != axis].index(j) + 1
                pos_s = [p for p in range(spec.n) if p != axis].index(s) + 1
                step_j, step_s = spec.h[j], spec.h[s]
                if j == s:
                    g = f.like(d2(f.values, step_j, pos_j))
                else:
                    g = f.like(d1(d1(f.values, step_j, pos_j), step_s, pos_s))
            elif key in derivs:
                g = derivs[key]
            else:
                continue
            total += integrate(g * g)
    return float(np.sqrt(total))


def norm_H10_lateral(f: Field) -> float:
    """Discrete ``H^{1,0}`` face norm: tangential first derivatives plus L2."""
    if not f.is_("lateral_face"):
        raise DomainMismatchError(f"expected a lateral face Field, got {f.tag}")
    tang, _ = _face_tangential(f)
    total = integrate(f * f) + sum(integrate(g * g) for _, g in tang)
    return float(np.sqrt(total))


def lateral_norms_from_spacetime(u: Field, axis: int, sign: int) -> tuple[float, float]:
    """``(||u||_{H^{2,1}}, ||d_n u||_{H^{1,0}})`` on one face, mixed terms included."""
    u.require("spacetime")
    spec = u.spec
    face = u.face(axis, sign)
    derivs = {}
    grads = [d1(u.values, h, i + 1) for i, h in enumerate(spec.h)]
    for j in range(spec.n):
        if j == axis:
            continue
        mixed = d1(grads[axis], spec.h[j], j + 1)
        key = f"x{min(j, axis) + 1}x{max(j, axis) + 1}"
        derivs[key] = Field(spec, face.tag, np.take(mixed, 0 if sign < 0 else -1, axis=axis + 1))
    normal = Field(spec, face.tag, sign * np.take(grads[axis], 0 if sign < 0 else -1, axis=axis + 1))
    return norm_H21_lateral(face, derivs), norm_H10_lateral(normal)


def norm_Hk_space(f: Field, k: int) -> float:
    """Discrete ``H^k(Omega)`` norm: all mixed partials of order <= k."""
    if f.tag[0] not in ("space", "time_slice"):
        raise DomainMismatchError(f"expected a space Field, got {f.tag}")
    spec = f.spec
    total = 0.0
    # derivative tables by multi-index, built incrementally
    level = {(0,) * spec.n: f.values}
    total += _trapz(f.values**2, spec.h)
    for _ in range(k):
        nxt = {}
        for alpha, arr in level.items():
            for i in range(spec.n):
                beta = tuple(a + (1 if j == i else 0) for j, a in enumerate(alpha))
                if beta not in nxt:
                    nxt[beta] = d1(arr, spec.h[i], i)
        for arr in nxt.values():
            total += _trapz(arr**2, spec.h)
        level = nxt
    return float(np.sqrt(total))


def norm_sup(f: Field) -> float:
    return f.max_abs()
