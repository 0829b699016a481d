"""Maps between reference and moving configurations.

Covers the Biot Lagrangian map x + eta, the harmonic-extension ALE map of the
fluid annulus, the rescaled interface frame, nondegeneracy certificates and
the radial-then-circular path metric on the annulus.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import INTERFACE, OUTER, InterfaceGrid, Mesh2D, MeshError, P1_GRAD, assemble_scalar, build_space, P1_SCALAR, triangle_rule


class GeometryError(ValueError):
    pass


def _inv2(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    inv = np.empty_like(A)
    inv[..., 0, 0] = A[..., 1, 1]
    inv[..., 1, 1] = A[..., 0, 0]
    inv[..., 0, 1] = -A[..., 0, 1]
    inv[..., 1, 0] = -A[..., 1, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = inv / det[..., None, None]
    return det, inv


def p1_gradients(mesh: Mesh2D, values: np.ndarray) -> np.ndarray:
    """Per-element gradient of P1 nodal data.

    Scalar data gives shape (e, 2); vector data (n, 2) gives (e, 2, 2) with
    entry [i, j] = d(value_i)/dx_j.
    """
    _, _, inv = mesh.element_maps()
    ref = np.einsum("ai,eij->eaj", P1_GRAD, inv)  # (e, 3, 2)
    local = values[mesh.triangles]
    if values.ndim == 1:
        return np.einsum("ea,eaj->ej", local, ref)
    return np.einsum("eai,eaj->eij", local, ref)


def spectral_norm2(A: np.ndarray) -> np.ndarray:
    """Largest singular value of a stack of 2x2 matrices."""
    a2 = np.einsum("...ij,...ij->...", A, A)
    det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    disc = np.sqrt(np.maximum(a2 * a2 - 4 * det * det, 0.0))
    return np.sqrt(0.5 * (a2 + disc))


# ----------------------------------------------------------------------------
# Biot Lagrangian map
# ----------------------------------------------------------------------------


@dataclass
class DeformationField:
    """Nodal P1 displacement on a mesh."""

    mesh: Mesh2D
    values: np.ndarray
    _grad: np.ndarray | None = field(default=None, repr=False)

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = p1_gradients(self.mesh, np.asarray(self.values, float))
        return self._grad

    @property
    def deformation_gradient(self) -> np.ndarray:
        return self.grad + np.eye(2)

    def image_nodes(self) -> np.ndarray:
        return self.mesh.nodes + self.values

    def element_gradients(self) -> np.ndarray:
        """Gradient of the map x -> x + eta."""
        return self.deformation_gradient

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        tri, lam = self.mesh.locator.locate(pts)
        if np.any(tri < 0):
            raise MeshError(f"point location failed at {pts[np.flatnonzero(tri < 0)[0]]}")
        vals = self.values[self.mesh.triangles[tri]]
        return np.einsum("qa,qai->qi", lam, vals)


def lagrangian_map(eta: DeformationField, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.atleast_2d(x) + eta(x)
    return out.reshape(x.shape)


def biot_jacobian(eta: DeformationField) -> np.ndarray:
    F = eta.deformation_gradient
    return F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] * F[:, 1, 0]


def transformed_gradient_biot(eta: DeformationField, f: np.ndarray) -> np.ndarray:
    """grad f (I + grad eta)^{-1} per element; the trace of the vector case
    is the transformed divergence."""
    det, inv = _inv2(eta.deformation_gradient)
    bad = np.flatnonzero(np.abs(det) < 1e-14)
    if bad.size:
        raise GeometryError(f"singular deformation gradient on element {int(bad[0])}")
    g = p1_gradients(eta.mesh, np.asarray(f, float))
    if g.ndim == 2:
        return np.einsum("ej,ejk->ek", g, inv)
    return np.einsum("eij,ejk->eik", g, inv)


def transformed_divergence_biot(eta: DeformationField, f: np.ndarray) -> np.ndarray:
    G = transformed_gradient_biot(eta, f)
    return G[:, 0, 0] + G[:, 1, 1]


# ----------------------------------------------------------------------------
# interface parametrization and frame
# ----------------------------------------------------------------------------


def interface_curve(omega: np.ndarray, grid: InterfaceGrid) -> np.ndarray:
    """Samples of z -> (cos z, sin z) + omega(z), shape (2, M)."""
    z = grid.samples
    return np.vstack([np.cos(z), np.sin(z)]) + omega


@dataclass
class InterfaceFrame:
    normal: np.ndarray  # (2, M), outward from the disk
    tangent: np.ndarray  # (2, M)
    arc: np.ndarray  # (M,)


def interface_frame(omega: np.ndarray, grid: InterfaceGrid) -> InterfaceFrame:
    z = grid.samples
    d = grid.derivative(omega)
    n = np.vstack([np.cos(z) + d[1], np.sin(z) - d[0]])
    t = np.vstack([-np.sin(z) + d[0], np.cos(z) + d[1]])
    return InterfaceFrame(n, t, np.hypot(t[0], t[1]))


# ----------------------------------------------------------------------------
# ALE map
# ----------------------------------------------------------------------------


@dataclass
class ALEMap:
    mesh: Mesh2D
    values: np.ndarray  # nodal images, (n, 2)
    grad: np.ndarray  # (e, 2, 2)
    jac: np.ndarray  # (e,)
    inv: np.ndarray  # (e, 2, 2)
    residual: float = 0.0

    def element_gradients(self) -> np.ndarray:
        return self.grad

    def image_nodes(self) -> np.ndarray:
        return self.values

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        tri, lam = self.mesh.locator.locate(pts)
        if np.any(tri < 0):
            raise MeshError(f"point location failed at {pts[np.flatnonzero(tri < 0)[0]]}")
        return np.einsum("qa,qai->qi", lam, self.values[self.mesh.triangles[tri]])


class HarmonicExtender:
    """Factorized discrete Laplacian of the annulus with Dirichlet data on
    both boundary circles."""

    def __init__(self, mesh: Mesh2D):
        self.mesh = mesh
        space = build_space(P1_SCALAR, mesh)
        _, K = assemble_scalar(space, triangle_rule(1))
        self.K = K.tocsr()
        bnd = np.zeros(mesh.n_nodes, bool)
        bnd[mesh.nodes_with_tag(INTERFACE)] = True
        bnd[mesh.nodes_with_tag(OUTER)] = True
        self.free = np.flatnonzero(~bnd)
        self.fixed = np.flatnonzero(bnd)
        self.iface = mesh.interface_nodes()
        ang = np.arctan2(mesh.nodes[self.iface, 1], mesh.nodes[self.iface, 0])
        self.iface_z = np.mod(ang, 2 * np.pi)
        self.lu = spla.splu(self.K[self.free][:, self.free].tocsc())
        self.K_fb = self.K[self.free][:, self.fixed]

    def extend(self, boundary: np.ndarray) -> tuple[np.ndarray, float]:
        """Harmonic extension of nodal boundary values (n, 2); interior
        entries of ``boundary`` are ignored."""
        out = boundary.copy()
        rhs = -(self.K_fb @ boundary[self.fixed])
        out[self.free] = self.lu.solve(rhs)
        res = self.K[self.free] @ out
        return out, float(np.abs(res).max()) if res.size else 0.0

    def boundary_data(self, omega: np.ndarray, grid: InterfaceGrid) -> np.ndarray:
        data = self.mesh.nodes.copy()
        data[self.iface] += grid.evaluate(omega, self.iface_z).T
        return data


def solve_ale_map(omega: np.ndarray, mesh: Mesh2D, grid: InterfaceGrid, extender: HarmonicExtender | None = None) -> ALEMap:
    ext = extender or HarmonicExtender(mesh)
    vals, res = ext.extend(ext.boundary_data(omega, grid))
    grad = p1_gradients(mesh, vals)
    jac, inv = _inv2(grad)
    return ALEMap(mesh, vals, grad, jac, inv, res)


# ----------------------------------------------------------------------------
# certificates
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Thresholds:
    c0: float = 0.1  # lower bound for det(I + grad eta^delta)
    c3: float = 10.0  # J_f in [1/c3, c3] and |grad Phi_f| <= c3
    alpha: float = 0.1  # tangent-norm lower bound
    clearance: float = 0.05  # max |Phi_Gamma| <= 2 - clearance


@dataclass
class GeomCertificate:
    min_det_b: float
    max_grad_b: float
    min_jac_f: float
    max_jac_f: float
    max_grad_f: float
    min_tangent_norm: float
    min_secant_ratio: float
    max_radius: float
    injectivity_ok: bool
    clearance_ok: bool
    thresholds: Thresholds

    def violations(self) -> list[str]:
        th = self.thresholds
        out = []
        if not self.min_det_b >= th.c0:
            out.append(f"min det(I+grad eta^delta)={self.min_det_b:.4g} < c0={th.c0}")
        if not (self.min_jac_f >= 1 / th.c3 and self.max_jac_f <= th.c3):
            out.append(f"ALE Jacobian range [{self.min_jac_f:.4g}, {self.max_jac_f:.4g}] outside [1/c3, c3]")
        if not self.max_grad_f <= th.c3:
            out.append(f"max |grad Phi_f|={self.max_grad_f:.4g} > c3")
        if not self.min_tangent_norm >= th.alpha:
            out.append(f"tangent norm {self.min_tangent_norm:.4g} < alpha={th.alpha}")
        if not self.injectivity_ok and not self.min_secant_ratio >= th.alpha / 2:
            out.append(f"interface secant ratio {self.min_secant_ratio:.4g} < alpha/2")
        if not self.clearance_ok:
            out.append(f"interface radius {self.max_radius:.4g} too close to the outer wall")
        return out

    @property
    def ok(self) -> bool:
        return not self.violations()


def torus_distance(z1: np.ndarray, z2: np.ndarray) -> np.ndarray:
    d = np.abs(np.mod(z1 - z2, 2 * np.pi))
    return np.minimum(d, 2 * np.pi - d)


def secant_ratio(curve: np.ndarray, z: np.ndarray) -> float:
    """min over sample pairs of |Phi(z_i) - Phi(z_j)| / dist_torus(z_i, z_j)."""
    diff = curve[:, :, None] - curve[:, None, :]
    dist = np.hypot(diff[0], diff[1])
    dz = torus_distance(z[:, None], z[None, :])
    iu = np.triu_indices(len(z), 1)
    return float(np.min(dist[iu] / dz[iu]))


def certify_geometry(
    eta_delta: DeformationField,
    omega: np.ndarray,
    ale: ALEMap,
    grid: InterfaceGrid,
    thresholds: Thresholds = Thresholds(),
    extra_ale: tuple[ALEMap, ...] = (),
) -> GeomCertificate:
    F = eta_delta.deformation_gradient
    det_b = F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] * F[:, 1, 0]
    jac = np.concatenate([ale.jac] + [a.jac for a in extra_ale])
    gradf = np.concatenate([spectral_norm2(ale.grad)] + [spectral_norm2(a.grad) for a in extra_ale])
    frame = interface_frame(omega, grid)
    curve = interface_curve(omega, grid)
    ratio = secant_ratio(curve, grid.samples)
    alpha_t = float(frame.arc.min())
    rmax = float(np.hypot(curve[0], curve[1]).max())
    return GeomCertificate(
        min_det_b=float(det_b.min()),
        max_grad_b=float(spectral_norm2(F).max()),
        min_jac_f=float(jac.min()),
        max_jac_f=float(jac.max()),
        max_grad_f=float(gradf.max()),
        min_tangent_norm=alpha_t,
        min_secant_ratio=ratio,
        max_radius=rmax,
        injectivity_ok=bool(ratio >= thresholds.alpha / 2 and alpha_t >= thresholds.alpha),
        clearance_ok=bool(rmax <= 2.0 - thresholds.clearance),
        thresholds=thresholds,
    )


# ----------------------------------------------------------------------------
# path metric on the annulus
# ----------------------------------------------------------------------------


def annulus_path_length(p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Length of the radial-then-circular path between annulus points.

    The angular difference is wrapped to (-pi, pi]; the circular leg runs at
    the radius of the second point.  Works on single points or stacks.
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    r1 = np.hypot(p1[..., 0], p1[..., 1])
    r2 = np.hypot(p2[..., 0], p2[..., 1])
    if np.any((r1 <= 1) | (r1 >= 2) | (r2 <= 1) | (r2 >= 2)):
        raise GeometryError("points must lie in the open annulus 1 < |x| < 2")
    dth = np.arctan2(p2[..., 1], p2[..., 0]) - np.arctan2(p1[..., 1], p1[..., 0])
    dth = np.pi - np.mod(np.pi - dth, 2 * np.pi)  # wrap to (-pi, pi]
    return np.abs(r1 - r2) + r2 * np.abs(dth)


def max_map_gradient(mapping: ALEMap | DeformationField) -> float:
    return float(spectral_norm2(mapping.element_gradients()).max())


def curve_length_under_map(mapping: ALEMap | DeformationField, polyline: np.ndarray, subdivisions: int = 32) -> float:
    """Length of the image of a polyline, traced through ``subdivisions``
    points per segment."""
    pts = np.asarray(polyline, dtype=float)
    s = np.linspace(0.0, 1.0, subdivisions + 1)[:-1]
    dense = (pts[:-1, None, :] * (1 - s)[None, :, None] + pts[1:, None, :] * s[None, :, None]).reshape(-1, 2)
    dense = np.vstack([dense, pts[-1:]])
    if isinstance(mapping, DeformationField):
        img = lagrangian_map(mapping, dense)
    else:
        img = mapping(dense)
    return float(np.sum(np.linalg.norm(np.diff(img, axis=0), axis=1)))


def polyline_length(polyline: np.ndarray) -> float:
    return float(np.sum(np.linalg.norm(np.diff(np.asarray(polyline, float), axis=0), axis=1)))
