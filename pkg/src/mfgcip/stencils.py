"""
Sparse matrices for the spatial stencils shared by the forward solvers and
the inversion assembly.

All matrices act on a flattened spatial vector (C order over ``Nx``).  Rows
belonging to boundary nodes are zero: boundary values enter only as known
columns of interior rows.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .grid import GridSpec


def interior_mask(spec: GridSpec) -> np.ndarray:
    mask = np.ones(spec.Nx, dtype=bool)
    for ax in range(spec.n):
        sl = [slice(None)] * spec.n
        sl[ax] = 0
        mask[tuple(sl)] = False
        sl[ax] = -1
        mask[tuple(sl)] = False
    return mask.ravel()


def _axis_ops(N: int, h: float):
    """1-D central first/second difference matrices with zero end rows."""
    main = np.zeros(N)
    main[1:-1] = -2.0 / h**2
    off = np.zeros(N - 1)
    off[:] = 1.0 / h**2
    lower = off.copy()
    upper = off.copy()
    lower[-1] = 0.0  # row N-1 is a boundary row
    upper[0] = 0.0   # row 0 is a boundary row
    D2 = sp.diags([lower, main, upper], [-1, 0, 1], format="csr")
    lo1 = np.full(N - 1, -0.5 / h)
    up1 = np.full(N - 1, 0.5 / h)
    lo1[-1] = 0.0
    up1[0] = 0.0
    D1 = sp.diags([lo1, up1], [-1, 1], shape=(N, N), format="csr")
    return D1, D2


def _kron_axis(op1d: sp.spmatrix, spec: GridSpec, axis: int) -> sp.csr_matrix:
    mats = [sp.identity(k, format="csr") for k in spec.Nx]
    mats[axis] = op1d
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


def _zero_boundary_rows(A: sp.spmatrix, spec: GridSpec) -> sp.csr_matrix:
    keep = interior_mask(spec).astype(float)
    return (sp.diags(keep) @ A).tocsr()


def laplacian_matrix(spec: GridSpec) -> sp.csr_matrix:
    L = None
    for ax in range(spec.n):
        _, D2 = _axis_ops(spec.Nx[ax], spec.h[ax])
        term = _kron_axis(D2, spec, ax)
        L = term if L is None else L + term
    return _zero_boundary_rows(L, spec)


def gradient_matrices(spec: GridSpec) -> list[sp.csr_matrix]:
    out = []
    for ax in range(spec.n):
        D1, _ = _axis_ops(spec.Nx[ax], spec.h[ax])
        out.append(_zero_boundary_rows(_kron_axis(D1, spec, ax), spec))
    return out


def _half_node_avg(a: np.ndarray, axis: int) -> np.ndarray:
    a = np.moveaxis(a, axis, 0)
    return np.moveaxis(0.5 * (a[1:] + a[:-1]), 0, axis)


def _forward_diff(a: np.ndarray, h: float, axis: int) -> np.ndarray:
    return np.diff(a, axis=axis) / h


def _flatten_index(spec: GridSpec) -> np.ndarray:
    return np.arange(int(np.prod(spec.Nx))).reshape(spec.Nx)


def _face_pairs(spec: GridSpec, axis: int):
    """Flat indices (left, right) of node pairs straddling each half node."""
    idx = _flatten_index(spec)
    left = np.take(idx, np.arange(spec.Nx[axis] - 1), axis=axis)
    right = np.take(idx, np.arange(1, spec.Nx[axis]), axis=axis)
    return left, right


def drift_matrix_m(spec: GridSpec, a: np.ndarray, u: np.ndarray) -> sp.csr_matrix:
    """Matrix of ``m -> div(a m grad u)`` (conservative, u frozen).

    Flux at half node ``i+1/2``: ``a_{i+1/2} (m_i + m_{i+1})/2 (u_{i+1}-u_i)/h``.
    """
    N = int(np.prod(spec.Nx))
    rows, cols, vals = [], [], []
    for ax in range(spec.n):
        h = spec.h[ax]
        c = _half_node_avg(a, ax) * _forward_diff(u, h, ax) / (2.0 * h)
        left, right = _face_pairs(spec, ax)
        left, right, c = left.ravel(), right.ravel(), c.ravel()
        # node `left` receives +flux, node `right` receives -flux
        for node, sgn in ((left, 1.0), (right, -1.0)):
            rows += [node, node]
            cols += [left, right]
            vals += [sgn * c, sgn * c]
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N))
    return _zero_boundary_rows(A, spec)


def drift_matrix_u(spec: GridSpec, a: np.ndarray, m: np.ndarray) -> sp.csr_matrix:
    """Matrix of ``u -> div(a m grad u)`` (conservative, m frozen)."""
    N = int(np.prod(spec.Nx))
    rows, cols, vals = [], [], []
    for ax in range(spec.n):
        h = spec.h[ax]
        c = _half_node_avg(a, ax) * _half_node_avg(m, ax) / h**2
        left, right = _face_pairs(spec, ax)
        left, right, c = left.ravel(), right.ravel(), c.ravel()
        for node, sgn in ((left, 1.0), (right, -1.0)):
            rows += [node, node]
            cols += [right, left]
            vals += [sgn * c, -sgn * c]
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N))
    return _zero_boundary_rows(A, spec)


def drift_apply(spec: GridSpec, a: np.ndarray, m: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``div(a m grad u)`` at interior nodes (zero on the boundary), arrays in space shape."""
    out = np.zeros(spec.Nx)
    for ax in range(spec.n):
        h = spec.h[ax]
        flux = _half_node_avg(a, ax) * _half_node_avg(m, ax) * _forward_diff(u, h, ax)
        flux = np.moveaxis(flux, ax, 0)
        o = np.moveaxis(out, ax, 0)
        o[1:-1] += (flux[1:] - flux[:-1]) / h
    mask = interior_mask(spec).reshape(spec.Nx)
    return np.where(mask, out, 0.0)


def laplacian_apply(spec: GridSpec, u: np.ndarray) -> np.ndarray:
    out = np.zeros(spec.Nx)
    for ax in range(spec.n):
        h = spec.h[ax]
        uu = np.moveaxis(u, ax, 0)
        o = np.moveaxis(out, ax, 0)
        o[1:-1] += (uu[:-2] - 2.0 * uu[1:-1] + uu[2:]) / h**2
    mask = interior_mask(spec).reshape(spec.Nx)
    return np.where(mask, out, 0.0)


def grad_sq_apply(spec: GridSpec, u: np.ndarray) -> np.ndarray:
    """``|grad u|^2`` from central differences at interior nodes (zero on boundary)."""
    out = np.zeros(spec.Nx)
    for ax in range(spec.n):
        h = spec.h[ax]
        uu = np.moveaxis(u, ax, 0)
        o = np.moveaxis(out, ax, 0)
        o[1:-1] += ((uu[2:] - uu[:-2]) / (2.0 * h)) ** 2
    mask = interior_mask(spec).reshape(spec.Nx)
    return np.where(mask, out, 0.0)


def central_grad(spec: GridSpec, u: np.ndarray) -> list[np.ndarray]:
    """Central-difference gradient at interior nodes (zero on boundary)."""
    mask = interior_mask(spec).reshape(spec.Nx)
    out = []
    for ax in range(spec.n):
        g = np.zeros(spec.Nx)
        uu = np.moveaxis(u, ax, 0)
        gg = np.moveaxis(g, ax, 0)
        gg[1:-1] = (uu[2:] - uu[:-2]) / (2.0 * spec.h[ax])
        out.append(np.where(mask, g, 0.0))
    return out
