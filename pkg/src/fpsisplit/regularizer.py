"""Mollified Biot displacement and its interface trace.

The displacement is extended beyond the disk by a radial clamp onto the
(polygonal) disk boundary and convolved with a smooth bump of radius delta.
The convolution is realized as a matrix acting on nodal values: each row is
assembled by composite Gauss quadrature over the mesh triangles and the
exterior collar sectors that meet the delta-ball around the evaluation
point, then renormalized to unit mass.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy import integrate

from .mesh import InterfaceGrid, Mesh2D, QuadRule, gauss_interval, p1_basis, triangle_rule

MAX_DELTA = 0.5
# quadrature cells per mollifier radius
RESOLUTION = 12.0


def _bump(r2: np.ndarray) -> np.ndarray:
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


@dataclass(frozen=True)
class Mollifier:
    delta: float

    @cached_property
    def constant(self) -> float:
        """C with C * int exp(-1/(1-|z|^2)) dz = 1 over the unit ball."""
        val, _ = integrate.quad(lambda r: np.exp(-1.0 / (1.0 - r * r)) * r, 0.0, 1.0, epsabs=1e-15, epsrel=1e-14)
        return 1.0 / (2 * np.pi * val)

    def __call__(self, y: np.ndarray) -> np.ndarray:
        """phi_delta(y) = delta^-2 phi(y / delta) for y of shape (..., 2)."""
        r2 = (y[..., 0] ** 2 + y[..., 1] ** 2) / self.delta**2
        return self.constant / self.delta**2 * _bump(r2)


def _subdivided_rule(base: QuadRule, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite rule on the reference triangle split into s^2 subtriangles."""
    pts, wts = [], []
    h = 1.0 / s
    for i in range(s):
        for j in range(s - i):
            # upright subtriangle
            o = np.array([i * h, j * h])
            pts.append(o + h * base.points)
            wts.append(base.weights * h * h)
            if i + j < s - 1:
                # inverted subtriangle with vertices (i+1,j), (i,j+1), (i+1,j+1)
                v0 = np.array([(i + 1) * h, (j + 1) * h])
                p = v0 - h * base.points
                pts.append(p)
                wts.append(base.weights * h * h)
    return np.vstack(pts), np.concatenate(wts)


def polygon_clamp(mesh: Mesh2D, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Radial projection onto the polygonal disk boundary.

    Returns (node a, node b, chord parameter t) of the boundary chord hit by
    the ray through each point.
    """
    from .mesh import interface_chord_params

    z = np.arctan2(pts[:, 1], pts[:, 0])
    return interface_chord_params(mesh, z)


def extend(mesh: Mesh2D, values: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Radial-clamp extension of nodal P1 data to arbitrary points."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    values = np.asarray(values, dtype=float)
    out = np.empty((len(x),) + values.shape[1:])
    tri, lam = mesh.locator.locate(x, tol=0.0)
    inside = tri >= 0
    if inside.any():
        out[inside] = np.einsum("qa,qa...->q...", lam[inside], values[mesh.triangles[tri[inside]]])
    if (~inside).any():
        a, b, t = polygon_clamp(mesh, x[~inside])
        tt = t.reshape((-1,) + (1,) * (values.ndim - 1))
        out[~inside] = (1 - tt) * values[a] + tt * values[b]
    return out


@dataclass
class RegularizationOperator:
    """Sparse convolution rows for the Biot nodes and the interface samples.

    ``S_nodes`` maps scalar nodal data to mollified nodal values,
    ``S_iface`` to mollified values at the interface samples, and ``R`` adds
    the Fourier band projection (the regularized trace).  The same matrices
    act on each displacement component.
    """

    mesh: Mesh2D
    grid: InterfaceGrid
    delta: float
    S_nodes: sp.csr_matrix
    S_iface: sp.csr_matrix
    R: np.ndarray
    raw_mass: np.ndarray
    under_resolved: bool

    def nodal(self, values: np.ndarray) -> np.ndarray:
        """eta -> nodal values of eta^delta (same shape as input)."""
        return self.S_nodes @ values

    def trace(self, values: np.ndarray) -> np.ndarray:
        """eta (n, 2) -> band-limited interface samples of eta^delta, (2, M)."""
        return (self.R @ values).T

    def trace_matrix(self) -> sp.csr_matrix:
        """Block map from stacked (eta_x, eta_y) dofs to stacked samples."""
        R = sp.csr_matrix(self.R)
        return sp.block_diag([R, R]).tocsr()


def convolution_rows(mesh: Mesh2D, points: np.ndarray, delta: float, quad: QuadRule | None = None) -> tuple[sp.csr_matrix, np.ndarray, bool]:
    """Unnormalized convolution rows and their kernel masses.

    Returns (rows, mass, under_resolved).  Row i integrates phi_delta(x_i - y)
    against the clamp-extended P1 basis functions.
    """
    if not 0 < delta <= MAX_DELTA:
        raise ValueError(f"delta must lie in (0, {MAX_DELTA}], got {delta}")
    quad = quad or triangle_rule(7)
    kernel = Mollifier(delta)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    nodes, tris = mesh.nodes, mesh.triangles
    P = nodes[tris]
    B = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)
    det = np.abs(B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0])
    diam = np.max(np.linalg.norm(P - np.roll(P, 1, axis=1), axis=2), axis=1)
    s = max(2, int(np.ceil(RESOLUTION * diam.max() / delta)))
    xi, w = _subdivided_rule(quad, s)
    N = p1_basis(xi)
    resolution = diam.max() / s
    under = bool(delta < 2 * resolution)
    centroid = P.mean(axis=1)
    reach = delta + np.max(np.linalg.norm(P - centroid[:, None], axis=2), axis=1)

    rows, cols, vals = [], [], []
    mass = np.zeros(len(pts))
    for i, x in enumerate(pts):
        near = np.flatnonzero(np.linalg.norm(centroid - x, axis=1) < reach)
        if near.size:
            y = P[near, 0][:, None, :] + np.einsum("eij,qj->eqi", B[near], xi)
            k = kernel(x - y) * w[None, :] * det[near][:, None]
            contrib = k @ N  # (e, 3)
            mass[i] += k.sum()
            rows.append(np.full(contrib.size, i))
            cols.append(tris[near].ravel())
            vals.append(contrib.ravel())
        a, b, t, c = _collar(mesh, x, delta, kernel)
        if a.size:
            mass[i] += c.sum()
            rows.append(np.full(2 * a.size, i))
            cols.append(np.concatenate([a, b]))
            vals.append(np.concatenate([(1 - t) * c, t * c]))
    if rows:
        A = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(len(pts), mesh.n_nodes)
        ).tocsr()
    else:
        A = sp.csr_matrix((len(pts), mesh.n_nodes))
    return A, mass, under


_COLLAR_GAUSS = 8


def _collar(mesh: Mesh2D, x: np.ndarray, delta: float, kernel: Mollifier):
    """Quadrature of the kernel over the exterior collar.

    In the sector between boundary nodes a and b the exterior is
    y = rho * ((1-t) a + t b), rho >= 1, where the clamp extension equals the
    chord interpolant (1-t) f(a) + t f(b).  Returns per-quadrature-point node
    pairs, chord parameter and weight.
    """
    ids = mesh.interface_nodes()
    A = mesh.nodes[ids]
    Bn = np.roll(A, -1, axis=0)
    d = Bn - A
    # distance from x to every chord
    tt = np.clip(np.einsum("ki,ki->k", x - A, d) / np.einsum("ki,ki->k", d, d), 0, 1)
    dist = np.linalg.norm(A + tt[:, None] * d - x, axis=1)
    sect = np.flatnonzero(dist < delta)
    empty = np.array([], dtype=np.int64)
    if sect.size == 0:
        return empty, empty, np.array([]), np.array([])
    g, gw = gauss_interval(_COLLAR_GAUSS)
    chord = np.linalg.norm(d[sect], axis=1)
    cross = A[sect, 0] * Bn[sect, 1] - A[sect, 1] * Bn[sect, 0]
    inner_r = np.min(np.linalg.norm(A, axis=1)) * np.cos(np.pi / len(ids))
    rho_max = (np.linalg.norm(x) + delta) / inner_r
    if rho_max <= 1.0:
        return empty, empty, np.array([]), np.array([])
    nt = max(1, int(np.ceil(RESOLUTION * chord.max() / delta)))
    nr = max(1, int(np.ceil(RESOLUTION * (rho_max - 1.0) / delta)))
    t = ((np.arange(nt)[:, None] + g[None, :]) / nt).ravel()
    wt = np.tile(gw / nt, nt)
    r = 1.0 + (rho_max - 1.0) * ((np.arange(nr)[:, None] + g[None, :]) / nr).ravel()
    wr = np.tile(gw * (rho_max - 1.0) / nr, nr)
    c = A[sect][:, None, :] * (1 - t)[None, :, None] + Bn[sect][:, None, :] * t[None, :, None]  # (s, T, 2)
    y = r[None, None, :, None] * c[:, :, None, :]  # (s, T, R, 2)
    k = kernel(x - y) * (wt[None, :, None] * wr[None, None, :] * r[None, None, :]) * cross[:, None, None]
    kt = k.sum(axis=2)  # (s, T)
    a_ids = np.repeat(ids[sect], len(t))
    b_ids = np.repeat(np.roll(ids, -1)[sect], len(t))
    return a_ids, b_ids, np.tile(t, len(sect)), kt.ravel()


def build_regularization_operator(mesh: Mesh2D, grid: InterfaceGrid, delta: float, quad: QuadRule | None = None) -> RegularizationOperator:
    z = grid.samples
    iface = np.column_stack([np.cos(z), np.sin(z)])
    pts = np.vstack([mesh.nodes, iface])
    A, mass, under = convolution_rows(mesh, pts, delta, quad)
    if under:
        warnings.warn(f"mollifier radius {delta} is under-resolved by the quadrature", RuntimeWarning, stacklevel=2)
    A = sp.diags(1.0 / mass) @ A
    A = A.tocsr()
    n = mesh.n_nodes
    S_nodes = A[:n]
    S_iface = A[n:]
    R = grid.project(S_iface.toarray().T).T
    return RegularizationOperator(mesh, grid, delta, S_nodes.tocsr(), S_iface.tocsr(), R, mass, under)


def regularized_trace(op: RegularizationOperator, eta: np.ndarray) -> np.ndarray:
    """Band-limited interface samples of eta^delta, shape (2, M)."""
    return op.trace(np.asarray(eta, dtype=float))
