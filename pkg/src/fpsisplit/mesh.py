"""Reference meshes, finite element spaces, quadrature and the interface grid.

The Biot reference domain is the unit disk, the fluid reference domain is the
annulus 1 < |x| < 2 and the two share the unit circle as interface.  Both
meshes are structured polar triangulations whose interface nodes coincide.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

INTERFACE = "INTERFACE"
OUTER = "OUTER"
NONE = "NONE"


class MeshError(ValueError):
    """Raised for degenerate or inconsistent mesh data."""


# ----------------------------------------------------------------------------
# quadrature
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadRule:
    """Quadrature rule on the reference triangle (0,0), (1,0), (0,1).

    Built by collapsing a tensor Gauss-Legendre rule (Duffy map), so the
    weights are positive and the rule is exact for polynomials of total
    degree ``order``.
    """

    order: int
    points: np.ndarray
    weights: np.ndarray


def triangle_rule(order: int) -> QuadRule:
    n = max(1, (order + 3) // 2)
    g, w = np.polynomial.legendre.leggauss(n)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    u, v = np.meshgrid(g, g, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    x = u.ravel()
    y = (v * (1.0 - u)).ravel()
    weights = (wu * wv * (1.0 - u)).ravel()
    return QuadRule(order=order, points=np.column_stack([x, y]), weights=weights)


def gauss_interval(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    g, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (g + 1.0), 0.5 * w


# ----------------------------------------------------------------------------
# reference basis functions
# ----------------------------------------------------------------------------


def p1_basis(pts: np.ndarray) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    return np.column_stack([1.0 - x - y, x, y])


P1_GRAD = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def p2_basis(pts: np.ndarray) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    l0, l1, l2 = 1.0 - x - y, x, y
    return np.column_stack(
        [l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), 4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0]
    )


def p2_grad(pts: np.ndarray) -> np.ndarray:
    """Reference gradients, shape (npts, 6, 2)."""
    x, y = pts[:, 0], pts[:, 1]
    l0, l1, l2 = 1.0 - x - y, x, y
    g0, g1, g2 = P1_GRAD
    out = np.empty((len(pts), 6, 2))
    out[:, 0] = (4 * l0 - 1)[:, None] * g0
    out[:, 1] = (4 * l1 - 1)[:, None] * g1
    out[:, 2] = (4 * l2 - 1)[:, None] * g2
    out[:, 3] = 4 * (l0[:, None] * g1 + l1[:, None] * g0)
    out[:, 4] = 4 * (l1[:, None] * g2 + l2[:, None] * g1)
    out[:, 5] = 4 * (l2[:, None] * g0 + l0[:, None] * g2)
    return out


# ----------------------------------------------------------------------------
# meshes
# ----------------------------------------------------------------------------


@dataclass
class Mesh2D:
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    _locator: "PointLocator | None" = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        self.boundary_edges = np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        self.boundary_tags = np.asarray(self.boundary_tags, dtype=object)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def element_maps(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Affine maps x = x0 + B xi: returns (B, det B, B^{-1}) per element."""
        p = self.nodes[self.triangles]
        B = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        det = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
        bad = np.flatnonzero(np.abs(det) <= 1e-14)
        if bad.size:
            raise MeshError(f"degenerate triangle {int(bad[0])}")
        inv = np.empty_like(B)
        inv[:, 0, 0] = B[:, 1, 1] / det
        inv[:, 1, 1] = B[:, 0, 0] / det
        inv[:, 0, 1] = -B[:, 0, 1] / det
        inv[:, 1, 0] = -B[:, 1, 0] / det
        return B, det, inv

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        a = p[:, 1] - p[:, 0]
        b = p[:, 2] - p[:, 0]
        return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])

    def edges_with_tag(self, tag: str) -> np.ndarray:
        return self.boundary_edges[self.boundary_tags == tag]

    def nodes_with_tag(self, tag: str) -> np.ndarray:
        return np.unique(self.edges_with_tag(tag))

    def interface_nodes(self) -> np.ndarray:
        """INTERFACE nodes ordered by angle in [0, 2*pi)."""
        ids = self.nodes_with_tag(INTERFACE)
        ang = np.mod(np.arctan2(self.nodes[ids, 1], self.nodes[ids, 0]), 2 * np.pi)
        # the node at angle 0 may come out as 2*pi - tiny
        ang[ang > 2 * np.pi - 1e-12] = 0.0
        return ids[np.argsort(ang, kind="stable")]

    @property
    def locator(self) -> "PointLocator":
        if self._locator is None:
            self._locator = PointLocator(self.nodes, self.triangles)
        return self._locator

    def area(self) -> float:
        return float(self.signed_areas().sum())


def _ring(n: int, radius: float) -> np.ndarray:
    t = 2 * np.pi * np.arange(n) / n
    return radius * np.column_stack([np.cos(t), np.sin(t)])


def _stitch(inner: np.ndarray, outer: np.ndarray) -> list[tuple[int, int, int]]:
    """Triangulate the band between two concentric closed rings.

    Both rings start at angle 0 and are equispaced; the front advances on
    whichever ring has the smaller next angle.
    """
    ni, no = len(inner), len(outer)
    tris = []
    i = j = 0
    while i < ni or j < no:
        a_next = (i + 1) / ni if i < ni else np.inf
        b_next = (j + 1) / no if j < no else np.inf
        if a_next < b_next:
            tris.append((inner[i], inner[(i + 1) % ni], outer[j % no]))
            i += 1
        else:
            tris.append((inner[i % ni], outer[(j + 1) % no], outer[j]))
            j += 1
    return tris


def _orient(nodes: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p = nodes[tris]
    a = p[:, 1] - p[:, 0]
    b = p[:, 2] - p[:, 0]
    neg = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0] < 0
    tris = tris.copy()
    tris[neg, 1], tris[neg, 2] = tris[neg, 2], tris[neg, 1].copy()
    return tris


def rings_for_level(n_refine: int) -> int:
    if n_refine < 0:
        raise ValueError("n_refine must be >= 0")
    return 2 ** (n_refine + 1)


def build_disk_mesh(n_refine: int) -> Mesh2D:
    """Unit disk: ring k (k = 1..n) carries 6k equispaced nodes."""
    n = rings_for_level(n_refine)
    nodes = [np.zeros((1, 2))]
    rings = [np.array([0])]
    count = 1
    for k in range(1, n + 1):
        pts = _ring(6 * k, k / n)
        nodes.append(pts)
        rings.append(np.arange(count, count + len(pts)))
        count += len(pts)
    nodes = np.vstack(nodes)
    tris: list[tuple[int, int, int]] = []
    r1 = rings[1]
    for j in range(len(r1)):
        tris.append((0, r1[j], r1[(j + 1) % len(r1)]))
    for k in range(1, n):
        tris.extend(_stitch(rings[k], rings[k + 1]))
    tris = _orient(nodes, np.array(tris, dtype=np.int64))
    outer = rings[n]
    edges = np.column_stack([outer, np.roll(outer, -1)])
    return Mesh2D(nodes, tris, edges, np.array([INTERFACE] * len(edges), dtype=object))


def build_annulus_mesh(n_refine: int) -> Mesh2D:
    """Annulus 1 < |x| < 2 with the same interface nodes as the disk mesh."""
    n = rings_for_level(n_refine)
    nb = 6 * n
    nodes = np.vstack([_ring(nb, 1.0 + i / n) if i < n else _ring(nb, 2.0) for i in range(n + 1)])
    idx = np.arange((n + 1) * nb).reshape(n + 1, nb)
    tris = []
    for i in range(n):
        a = idx[i]
        b = idx[i + 1]
        a1 = np.roll(a, -1)
        b1 = np.roll(b, -1)
        tris.append(np.column_stack([a, a1, b1]))
        tris.append(np.column_stack([a, b1, b]))
    tris = _orient(nodes, np.vstack(tris))
    inner = np.column_stack([idx[0], np.roll(idx[0], -1)])
    outer = np.column_stack([idx[n], np.roll(idx[n], -1)])
    tags = np.array([INTERFACE] * nb + [OUTER] * nb, dtype=object)
    return Mesh2D(nodes, tris, np.vstack([inner, outer]), tags)


def audit_mesh(mesh: Mesh2D, tol: float = 1e-12) -> list[str]:
    """Return a list of violated mesh invariants (empty when the mesh is sound)."""
    problems = []
    areas = mesh.signed_areas()
    if np.any(areas <= 0):
        problems.append(f"nonpositive area at triangle {int(np.argmin(areas))}")
    rounded = np.round(mesh.nodes / tol).astype(np.int64)
    if len(np.unique(rounded, axis=0)) != mesh.n_nodes:
        problems.append("duplicate nodes")
    r = np.linalg.norm(mesh.nodes, axis=1)
    for tag, radius in ((INTERFACE, 1.0), (OUTER, 2.0)):
        ids = mesh.nodes_with_tag(tag)
        if ids.size and np.max(np.abs(r[ids] - radius)) > tol:
            problems.append(f"{tag} node off |x|={radius}")
    # every boundary edge of the triangulation must be tagged, and vice versa
    e = np.sort(np.vstack([mesh.triangles[:, [0, 1]], mesh.triangles[:, [1, 2]], mesh.triangles[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    free = {tuple(x) for x in uniq[counts == 1]}
    tagged = {tuple(x) for x in np.sort(mesh.boundary_edges, axis=1)}
    if free != tagged:
        problems.append("boundary edge set does not match tagged edges")
    if np.any(counts > 2):
        problems.append("edge shared by more than two triangles")
    return problems


def write_mesh(mesh: Mesh2D, path: str | Path) -> None:
    """Plain-text mesh: one record per line (``v x y``, ``t a b c``, ``e a b TAG``)."""
    with open(path, "w") as fh:
        fh.write(f"# mesh nodes={mesh.n_nodes} triangles={mesh.n_triangles} edges={len(mesh.boundary_edges)}\n")
        for x, y in mesh.nodes:
            fh.write(f"v {float(x)!r} {float(y)!r}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"t {a} {b} {c}\n")
        for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
            fh.write(f"e {a} {b} {tag}\n")


def read_mesh(path: str | Path) -> Mesh2D:
    nodes, tris, edges, tags = [], [], [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                nodes.append((float(parts[1]), float(parts[2])))
            elif parts[0] == "t":
                tris.append(tuple(int(p) for p in parts[1:4]))
            elif parts[0] == "e":
                edges.append((int(parts[1]), int(parts[2])))
                tags.append(parts[3])
            else:
                raise MeshError(f"unknown record {parts[0]!r}")
    return Mesh2D(np.array(nodes), np.array(tris), np.array(edges), np.array(tags, dtype=object))


# ----------------------------------------------------------------------------
# point location
# ----------------------------------------------------------------------------


class PointLocator:
    """Bucket-grid point location with barycentric containment tests."""

    def __init__(self, nodes: np.ndarray, triangles: np.ndarray, bins: int | None = None):
        self.nodes = nodes
        self.triangles = triangles
        p = nodes[triangles]
        self.lo = nodes.min(axis=0) - 1e-9
        self.hi = nodes.max(axis=0) + 1e-9
        nb = bins or max(4, int(np.sqrt(len(triangles) / 2)))
        self.nb = nb
        self.size = (self.hi - self.lo) / nb
        tmin = np.floor((p.min(axis=1) - self.lo) / self.size).astype(int).clip(0, nb - 1)
        tmax = np.floor((p.max(axis=1) - self.lo) / self.size).astype(int).clip(0, nb - 1)
        buckets: list[list[int]] = [[] for _ in range(nb * nb)]
        for t in range(len(triangles)):
            for ix in range(tmin[t, 0], tmax[t, 0] + 1):
                for iy in range(tmin[t, 1], tmax[t, 1] + 1):
                    buckets[ix * nb + iy].append(t)
        width = max(len(b) for b in buckets)
        self.cand = np.full((nb * nb, width), -1, dtype=np.int64)
        for k, b in enumerate(buckets):
            self.cand[k, : len(b)] = b
        a = p[:, 1] - p[:, 0]
        b = p[:, 2] - p[:, 0]
        det = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
        self.origin = p[:, 0]
        self.inv = np.stack([np.stack([b[:, 1], -b[:, 0]], 1), np.stack([-a[:, 1], a[:, 0]], 1)], 1) / det[:, None, None]

    def locate(self, pts: np.ndarray, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
        """Return (triangle index or -1, barycentric coordinates) per point."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ij = np.floor((pts - self.lo) / self.size).astype(int)
        inside_box = np.all((ij >= 0) & (ij < self.nb), axis=1)
        ij = ij.clip(0, self.nb - 1)
        cand = self.cand[ij[:, 0] * self.nb + ij[:, 1]]
        valid = cand >= 0
        c = np.where(valid, cand, 0)
        d = pts[:, None, :] - self.origin[c]
        xi = np.einsum("qcij,qcj->qci", self.inv[c], d)
        lam = np.concatenate([1.0 - xi.sum(axis=2, keepdims=True), xi], axis=2)
        score = lam.min(axis=2)
        score = np.where(valid, score, -np.inf)
        best = np.argmax(score, axis=1)
        rows = np.arange(len(pts))
        ok = (score[rows, best] >= -tol) & inside_box
        tri = np.where(ok, c[rows, best], -1)
        return tri, lam[rows, best]


# ----------------------------------------------------------------------------
# interface grid
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class InterfaceGrid:
    """Equispaced samples of the interface parameter z with a K-mode band.

    Periodic functions on the interface are stored as sample values of
    shape (..., M).  The trapezoid rule with these samples integrates the
    product of two band-limited functions exactly whenever 2K < M.
    """

    M: int
    K: int

    @property
    def samples(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.M) / self.M

    @property
    def weight(self) -> float:
        return 2 * np.pi / self.M

    @property
    def modes(self) -> np.ndarray:
        return np.arange(self.M // 2 + 1)

    def project(self, values: np.ndarray) -> np.ndarray:
        """Band-limit sample values to modes 0..K."""
        c = np.fft.rfft(values, axis=-1)
        c[..., self.K + 1 :] = 0.0
        return np.fft.irfft(c, n=self.M, axis=-1)

    def projector(self) -> np.ndarray:
        return self.project(np.eye(self.M)).T

    def coefficients(self, values: np.ndarray) -> np.ndarray:
        return np.fft.rfft(values, axis=-1)[..., : self.K + 1] / self.M

    def from_coefficients(self, coeffs: np.ndarray) -> np.ndarray:
        c = np.zeros(coeffs.shape[:-1] + (self.M // 2 + 1,), dtype=complex)
        c[..., : coeffs.shape[-1]] = coeffs * self.M
        return np.fft.irfft(c, n=self.M, axis=-1)

    def derivative(self, values: np.ndarray, order: int = 1) -> np.ndarray:
        """Spectral z-derivative of band-limited sample values."""
        c = np.fft.rfft(values, axis=-1)
        m = self.modes.astype(float)
        mult = (1j * m) ** order
        if order % 2 == 1:
            mult[-1] = 0.0  # Nyquist mode has no odd derivative on the grid
        return np.fft.irfft(c * mult, n=self.M, axis=-1)

    def evaluate(self, values: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Evaluate the band-limited interpolant at arbitrary parameters."""
        c = np.fft.rfft(values, axis=-1) / self.M
        m = self.modes
        scale = np.where((m == 0) | (2 * m == self.M), 1.0, 2.0)
        z = np.asarray(z, dtype=float)
        e = np.exp(1j * np.multiply.outer(z, m))
        return np.real(np.einsum("...m,zm->...z", c * scale, e))

    def integrate(self, values: np.ndarray) -> np.ndarray:
        return values.sum(axis=-1) * self.weight

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.sum(a * b) * self.weight)


def build_interface_grid(M: int, K: int) -> InterfaceGrid:
    if M <= 0 or M % 2:
        raise ValueError(f"M must be a positive even integer, got {M}")
    if K < 2:
        raise ValueError(f"K must be at least 2, got {K}")
    if K > M // 2:
        raise ValueError(f"K={K} exceeds M/2={M // 2}: aliasing")
    return InterfaceGrid(M, K)


# ----------------------------------------------------------------------------
# finite element spaces
# ----------------------------------------------------------------------------

P1_SCALAR = "P1_scalar"
P1_VECTOR = "P1_vector"
P2_VECTOR = "P2_vector"
FOURIER_VECTOR = "FOURIER_vector"


@dataclass
class FESpace:
    """Lagrange space on a Mesh2D (or the Fourier plate space on a grid).

    ``cell_dofs`` lists the scalar dofs of each triangle (3 for P1, 6 for P2
    ordered vertices then edges (01, 12, 20)).  Vector kinds store the two
    components in consecutive blocks of ``n_scalar`` dofs.
    """

    kind: str
    mesh: Mesh2D | None
    n_scalar: int
    cell_dofs: np.ndarray | None
    dof_coords: np.ndarray | None
    constrained: np.ndarray
    edge_ids: dict[tuple[int, int], int] | None = None
    grid: InterfaceGrid | None = None

    @property
    def components(self) -> int:
        return 1 if self.kind == P1_SCALAR else 2

    @property
    def dof_count(self) -> int:
        return self.n_scalar * self.components

    @property
    def degree(self) -> int:
        return 2 if self.kind == P2_VECTOR else 1

    def free_dofs(self) -> np.ndarray:
        return np.flatnonzero(~self.constrained)


def build_space(kind: str, mesh: Mesh2D | None = None, grid: InterfaceGrid | None = None, dirichlet: str | None = None) -> FESpace:
    """Build a space; ``dirichlet`` names a boundary tag with zero trace."""
    if kind == FOURIER_VECTOR:
        if grid is None:
            raise ValueError("Fourier space needs an interface grid")
        return FESpace(kind, None, grid.M, None, None, np.zeros(2 * grid.M, bool), grid=grid)
    if mesh is None:
        raise ValueError("Lagrange space needs a mesh")
    if kind in (P1_SCALAR, P1_VECTOR):
        n = mesh.n_nodes
        cell = mesh.triangles.copy()
        coords = mesh.nodes.copy()
        fixed = np.zeros(n, bool)
        if dirichlet:
            fixed[mesh.nodes_with_tag(dirichlet)] = True
        edge_ids = None
    elif kind == P2_VECTOR:
        tri = mesh.triangles
        loc = np.array([[0, 1], [1, 2], [2, 0]])
        all_e = np.sort(tri[:, loc].reshape(-1, 2), axis=1)
        uniq, inv = np.unique(all_e, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        n_v = mesh.n_nodes
        n = n_v + len(uniq)
        cell = np.hstack([tri, n_v + inv.reshape(-1, 3)])
        coords = np.vstack([mesh.nodes, 0.5 * (mesh.nodes[uniq[:, 0]] + mesh.nodes[uniq[:, 1]])])
        edge_ids = {(int(a), int(b)): n_v + k for k, (a, b) in enumerate(uniq)}
        fixed = np.zeros(n, bool)
        if dirichlet:
            be = mesh.edges_with_tag(dirichlet)
            fixed[np.unique(be)] = True
            for a, b in np.sort(be, axis=1):
                fixed[edge_ids[(int(a), int(b))]] = True
    else:
        raise ValueError(f"unknown space kind {kind!r}")
    comps = 1 if kind == P1_SCALAR else 2
    return FESpace(kind, mesh, n, cell, coords, np.tile(fixed, comps), edge_ids)


def reference_basis(space: FESpace, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scalar basis values (q, nloc) and reference gradients (q, nloc, 2)."""
    if space.degree == 1:
        return p1_basis(pts), np.broadcast_to(P1_GRAD, (len(pts), 3, 2)).copy()
    return p2_basis(pts), p2_grad(pts)


def _scatter(rows: np.ndarray, cols: np.ndarray, vals: np.ndarray, shape: tuple[int, int]) -> sp.csr_matrix:
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()


def assemble_scalar(space: FESpace, quad: QuadRule, weight: np.ndarray | None = None) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Scalar mass and stiffness with an optional per-element weight."""
    mesh = space.mesh
    _, det, inv = mesh.element_maps()
    N, dN = reference_basis(space, quad.points)
    G = np.einsum("qai,eij->eqaj", dN, inv)
    scale = np.abs(det) * (1.0 if weight is None else weight)
    Me = np.einsum("q,qa,qb,e->eab", quad.weights, N, N, scale)
    Ke = np.einsum("q,eqai,eqbi,e->eab", quad.weights, G, G, scale)
    cd = space.cell_dofs
    rows = np.repeat(cd[:, :, None], cd.shape[1], axis=2)
    cols = np.repeat(cd[:, None, :], cd.shape[1], axis=1)
    shape = (space.n_scalar, space.n_scalar)
    return _scatter(rows, cols, Me, shape), _scatter(rows, cols, Ke, shape)


def assemble_mass_stiffness(space: FESpace, mesh: Mesh2D | None = None, quad: QuadRule | None = None) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """L2 mass and H1 seminorm stiffness; vector spaces get a block diagonal."""
    if mesh is not None and mesh is not space.mesh:
        raise ValueError("space was built on a different mesh")
    quad = quad or triangle_rule(2 * space.degree)
    if space.kind == FOURIER_VECTOR:
        grid = space.grid
        w = grid.weight * np.ones(grid.M)
        D = grid.derivative(np.eye(grid.M)).T
        M = sp.diags(np.tile(w, 2)).tocsr()
        K1 = D.T @ np.diag(w) @ D
        return M, sp.block_diag([K1, K1]).tocsr()
    M, K = assemble_scalar(space, quad)
    if space.components == 2:
        return sp.block_diag([M, M]).tocsr(), sp.block_diag([K, K]).tocsr()
    return M, K


# ----------------------------------------------------------------------------
# interface traces
# ----------------------------------------------------------------------------


def interface_chord_params(mesh: Mesh2D, z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """For each parameter z, the interface edge (node a, node b) hit by the ray
    at angle z and the chord parameter t in [0, 1]."""
    ids = mesh.interface_nodes()
    nb = len(ids)
    z = np.mod(np.asarray(z, dtype=float), 2 * np.pi)
    k = np.floor(z * nb / (2 * np.pi) + 1e-12).astype(int) % nb
    a = mesh.nodes[ids[k]]
    b = mesh.nodes[ids[(k + 1) % nb]]
    d = np.column_stack([np.cos(z), np.sin(z)])
    ca = a[:, 0] * d[:, 1] - a[:, 1] * d[:, 0]
    cb = b[:, 0] * d[:, 1] - b[:, 1] * d[:, 0]
    t = ca / (ca - cb)
    return ids[k], ids[(k + 1) % nb], np.clip(t, 0.0, 1.0)


def interface_trace(space: FESpace, z: np.ndarray) -> sp.csr_matrix:
    """Sparse map from scalar dofs to values at the interface points at angle z
    (radial projection onto the polygonal interface)."""
    a, b, t = interface_chord_params(space.mesh, z)
    n = len(t)
    if space.degree == 1:
        rows = np.repeat(np.arange(n), 2)
        cols = np.column_stack([a, b]).ravel()
        vals = np.column_stack([1 - t, t]).ravel()
    else:
        mid = np.array([space.edge_ids[(min(int(i), int(j)), max(int(i), int(j)))] for i, j in zip(a, b)])
        rows = np.repeat(np.arange(n), 3)
        cols = np.column_stack([a, mid, b]).ravel()
        vals = np.column_stack([(1 - t) * (1 - 2 * t), 4 * t * (1 - t), t * (2 * t - 1)]).ravel()
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, space.n_scalar)).tocsr()


def evaluation_matrix(space: FESpace, pts: np.ndarray) -> sp.csr_matrix:
    """Sparse interpolation matrix of scalar dofs at arbitrary interior points."""
    tri, lam = space.mesh.locator.locate(pts)
    if np.any(tri < 0):
        bad = pts[np.flatnonzero(tri < 0)[0]]
        raise MeshError(f"point location failed at {bad}")
    xi = lam[:, 1:]
    N = p1_basis(xi) if space.degree == 1 else p2_basis(xi)
    rows = np.repeat(np.arange(len(pts)), N.shape[1])
    cols = space.cell_dofs[tri].ravel()
    return sp.coo_matrix((N.ravel(), (rows, cols)), shape=(len(pts), space.n_scalar)).tocsr()
