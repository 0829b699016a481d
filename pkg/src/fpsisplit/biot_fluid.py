"""Implicit Biot/fluid substep.

Unknowns are the fluid velocity u (P2 on the annulus, zero on the outer
wall), a P1 multiplier for the transformed divergence constraint, the Biot
displacement eta (P1 on the disk) and the pore pressure p (P1 on the disk).
The interface velocity zeta^{n+1} = R (eta^{n+1} - eta^n) / dt is eliminated
and every plate test function is tied to the Biot test function by phi = R psi.

Rows are scaled as in the Lax-Milgram form of the step: fluid and pressure
rows by dt^3, Biot rows by dt^2, so that the (u, eta, p) block of the matrix
is the bilinear form whose diagonal value has a closed form (see
``coercive_closed_form``).

Conventions.  Vector P2 fields are flat arrays [u_x, u_y]; vector P1 fields are
(n, 2) arrays, flattened to [eta_x, eta_y] inside the solver.  Interface
functions are (2, M) sample arrays.  The interface normal used in the weak
form points out of the fluid (into the Biot disk); ``interface_frame``
returns the opposite orientation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import (
    ALEMap,
    DeformationField,
    GeomCertificate,
    HarmonicExtender,
    InterfaceFrame,
    Thresholds,
    _inv2,
    certify_geometry,
    interface_frame,
    p1_gradients,
    solve_ale_map,
    spectral_norm2,
)
from .mesh import (
    INTERFACE,
    OUTER,
    P1_SCALAR,
    P1_VECTOR,
    P2_VECTOR,
    InterfaceGrid,
    Mesh2D,
    build_annulus_mesh,
    build_disk_mesh,
    build_interface_grid,
    build_space,
    interface_trace,
    p1_basis,
    p2_basis,
    p2_grad,
    P1_GRAD,
    triangle_rule,
)
from .plate import l2sq, laplacian
from .regularizer import RegularizationOperator, build_regularization_operator


class StepError(RuntimeError):
    """Raised when a step cannot be assembled or solved."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class PhysicalParams:
    rho_b: float = 1.0
    mu_e: float = 1.0
    lam_e: float = 1.0
    mu_v: float = 1.0
    lam_v: float = 1.0
    c0: float = 1.0
    alpha: float = 1.0
    kappa: float = 1.0
    nu: float = 0.01
    beta: float = 1.0
    h: float = 1.0

    def validate(self) -> None:
        for name in ("rho_b", "mu_e", "lam_e", "c0", "kappa", "nu", "beta", "h"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.mu_v < 0 or self.lam_v < 0:
            raise ValueError("mu_v and lam_v must be nonnegative")
        if (self.mu_v == 0) != (self.lam_v == 0):
            raise ValueError("mu_v and lam_v must be both zero (poroelastic) or both positive (poroviscoelastic)")


# ----------------------------------------------------------------------------
# discretization (built once per run)
# ----------------------------------------------------------------------------


class Discretization:
    """Meshes, spaces, quadrature tables and time-independent operators."""

    def __init__(self, n_refine: int, M: int, K: int, delta: float, fluid_refine: int | None = None):
        self.disk = build_disk_mesh(n_refine)
        self.annulus = build_annulus_mesh(n_refine if fluid_refine is None else fluid_refine)
        if len(self.disk.interface_nodes()) != len(self.annulus.interface_nodes()):
            raise ValueError("disk and annulus meshes must share interface nodes")
        self.grid = build_interface_grid(M, K)
        self.delta = delta
        self.Vu = build_space(P2_VECTOR, self.annulus, dirichlet=OUTER)
        self.Vq = build_space(P1_SCALAR, self.annulus)
        self.Vd = build_space(P1_VECTOR, self.disk)
        self.Vp = build_space(P1_SCALAR, self.disk)
        self.nu_s = self.Vu.n_scalar
        self.nq = self.Vq.n_scalar
        self.nd = self.disk.n_nodes
        self.reg = build_regularization_operator(self.disk, self.grid, delta)
        self.extender = HarmonicExtender(self.annulus)

        # annulus quadrature tables
        self.quad_f = triangle_rule(6)
        self.Nf = p2_basis(self.quad_f.points)  # (q, 6)
        self.Nq = p1_basis(self.quad_f.points)  # (q, 3)
        _, detf, invf = self.annulus.element_maps()
        self.areaf = np.abs(detf)
        self.Gf_ref = np.einsum("qai,eij->eqaj", p2_grad(self.quad_f.points), invf)  # (e, q, 6, 2)
        self.wf = self.quad_f.weights

        # disk quantities (P1: constant gradients)
        _, detb, invb = self.disk.element_maps()
        self.detb = np.abs(detb)  # for reference quadrature
        self.areab = 0.5 * self.detb  # triangle areas
        self.gb = np.einsum("ai,eij->eaj", P1_GRAD, invb)  # (e, 3, 2)
        self.quad_b = triangle_rule(2)
        self.Nb = p1_basis(self.quad_b.points)

        # interface traces at the samples
        z = self.grid.samples
        self.Tu = interface_trace(self.Vu, z)  # (M, nu_s)
        self.Tp = interface_trace(self.Vp, z)  # (M, nd)
        self.Tu_vec = sp.block_diag([self.Tu, self.Tu]).tocsr()
        self.R_vec = self.reg.trace_matrix()  # (2M, 2nd)
        self.S_vec = sp.block_diag([self.reg.S_nodes, self.reg.S_nodes]).tocsr()

        # static Biot matrices
        self.Mb = self._p1_mass()
        self.Mb_vec = sp.block_diag([self.Mb, self.Mb]).tocsr()
        self.A_strain, self.A_div = self._elastic()
        self.bnd_edges = self.disk.edges_with_tag(INTERFACE)

        self.free_u = self.Vu.free_dofs()

    # -- sizes -----------------------------------------------------------
    @property
    def n_u(self) -> int:
        return 2 * self.nu_s

    @property
    def sizes(self) -> tuple[int, int, int, int]:
        return self.n_u, self.nq, 2 * self.nd, self.nd

    # -- static assembly helpers ------------------------------------------
    def _p1_mass(self) -> sp.csr_matrix:
        Me = np.einsum("q,qa,qb,e->eab", self.quad_b.weights, self.Nb, self.Nb, self.detb)
        return _scatter_scalar(self.disk.triangles, Me, self.nd, self.nd)

    def _elastic(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Matrices of 2 int D(eta):D(psi) and int div eta div psi."""
        g = self.gb
        a = self.areab
        I2 = np.eye(2)
        # local (e, i, a, k, b): component i of test node a, component k of trial node b
        strain = np.einsum("ik,eaj,ebj,e->eiakb", I2, g, g, a) + np.einsum("eak,ebi,e->eiakb", g, g, a)
        div = np.einsum("eai,ebk,e->eiakb", g, g, a)
        tri = self.disk.triangles
        return _scatter_vector(tri, tri, strain, self.nd, self.nd), _scatter_vector(tri, tri, div, self.nd, self.nd)

    # -- field evaluation -------------------------------------------------
    def u_at_quad(self, u: np.ndarray) -> np.ndarray:
        """Fluid velocity at annulus quadrature points, (e, q, 2)."""
        cd = self.Vu.cell_dofs
        ux = u[: self.nu_s][cd]
        uy = u[self.nu_s :][cd]
        return np.stack([ux @ self.Nf.T, uy @ self.Nf.T], axis=2)

    def u_grad_at_quad(self, u: np.ndarray) -> np.ndarray:
        """Reference gradient of u, (e, q, 2, 2) with [i, j] = d u_i / d x_j."""
        cd = self.Vu.cell_dofs
        ux = u[: self.nu_s][cd]
        uy = u[self.nu_s :][cd]
        gx = np.einsum("ea,eqaj->eqj", ux, self.Gf_ref)
        gy = np.einsum("ea,eqaj->eqj", uy, self.Gf_ref)
        return np.stack([gx, gy], axis=2)

    def u_trace(self, u: np.ndarray) -> np.ndarray:
        return (self.Tu_vec @ u).reshape(2, -1)

    def interpolate_velocity(self, fn) -> np.ndarray:
        """Nodal interpolant (P2 dofs) of a vector function, zero on the wall."""
        vals = fn(self.Vu.dof_coords)
        u = np.concatenate([vals[:, 0], vals[:, 1]])
        u[self.Vu.constrained] = 0.0
        return u


def _scatter_scalar(cells: np.ndarray, local: np.ndarray, n_rows: int, n_cols: int, cells_col: np.ndarray | None = None) -> sp.csr_matrix:
    cc = cells if cells_col is None else cells_col
    rows = np.repeat(cells[:, :, None], cc.shape[1], axis=2)
    cols = np.repeat(cc[:, None, :], cells.shape[1], axis=1)
    return sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(n_rows, n_cols)).tocsr()


def _scatter_vector(cells_r: np.ndarray, cells_c: np.ndarray, local: np.ndarray, n_r: int, n_c: int) -> sp.csr_matrix:
    """Scatter (e, 2, a, 2, b) local blocks into a (2 n_r, 2 n_c) matrix."""
    e, _, na, _, nb = local.shape
    ri = (np.arange(2)[None, :, None] * n_r + cells_r[:, None, :])  # (e, 2, a)
    ci = (np.arange(2)[None, :, None] * n_c + cells_c[:, None, :])  # (e, 2, b)
    rows = np.broadcast_to(ri[:, :, :, None, None], local.shape)
    cols = np.broadcast_to(ci[:, None, None, :, :], local.shape)
    return sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(2 * n_r, 2 * n_c)).tocsr()


# ----------------------------------------------------------------------------
# geometry of one step
# ----------------------------------------------------------------------------


@dataclass
class GeometrySnapshot:
    omega: np.ndarray
    ale: ALEMap
    ale_next: ALEMap
    eta_delta: DeformationField
    frame: InterfaceFrame
    w: np.ndarray  # nodal ALE velocity on the annulus, (n, 2)
    certificate: GeomCertificate
    dt: float


def discrete_ale_velocity(
    omega_next: ALEMap | np.ndarray,
    omega_prev: ALEMap | np.ndarray,
    dt: float,
    mesh: Mesh2D | None = None,
    grid: InterfaceGrid | None = None,
    extender: HarmonicExtender | None = None,
) -> np.ndarray:
    """Nodal difference quotient of two ALE maps on the annulus.

    Either pass solved maps, or plate displacements of shape (2, M) together
    with the annulus mesh and interface grid.
    """
    maps = []
    for item in (omega_next, omega_prev):
        if isinstance(item, ALEMap):
            maps.append(item)
        else:
            if mesh is None or grid is None:
                raise ValueError("plate displacements need the annulus mesh and the interface grid")
            maps.append(solve_ale_map(np.asarray(item, dtype=float), mesh, grid, extender))
    return (maps[0].values - maps[1].values) / dt


def make_geometry(disc: Discretization, omega: np.ndarray, omega_next: np.ndarray, eta: np.ndarray, dt: float, thresholds: Thresholds = Thresholds(), ale: ALEMap | None = None) -> GeometrySnapshot:
    ale = ale or solve_ale_map(omega, disc.annulus, disc.grid, disc.extender)
    ale_next = solve_ale_map(omega_next, disc.annulus, disc.grid, disc.extender)
    eta_d = DeformationField(disc.disk, disc.reg.nodal(eta))
    cert = certify_geometry(eta_d, omega, ale, disc.grid, thresholds, extra_ale=(ale_next,))
    return GeometrySnapshot(omega, ale, ale_next, eta_d, interface_frame(omega, disc.grid), discrete_ale_velocity(ale_next, ale, dt), cert, dt)


# ----------------------------------------------------------------------------
# assembly
# ----------------------------------------------------------------------------


@dataclass
class StepData:
    """Previous states entering one Biot/fluid step."""

    u: np.ndarray  # flat (2 nu_s,)
    eta: np.ndarray  # (nd, 2)
    eta_prev: np.ndarray  # (nd, 2)
    p: np.ndarray  # (nd,)
    zeta_half: np.ndarray  # (2, M)


@dataclass
class StepSystem:
    A: sp.csr_matrix  # full block matrix over free unknowns
    b: np.ndarray
    blocks: dict[str, slice]
    disc: Discretization
    geometry: GeometrySnapshot
    data: StepData
    params: PhysicalParams
    dt: float
    B_form: sp.csr_matrix  # (u, eta, p) block with all u dofs
    G: sp.csr_matrix  # constraint block (nq, n_u)


def _sample_dot(vec: np.ndarray, op: sp.csr_matrix) -> sp.csr_matrix:
    """Rows: per-sample dot product of a stacked (2M x n) trace with vec (2, M)."""
    return (sp.hstack([sp.diags(vec[0]), sp.diags(vec[1])]) @ op).tocsr()


def _form(test: sp.csr_matrix, trial: sp.csr_matrix, coef: np.ndarray) -> sp.csr_matrix:
    return (test.T @ sp.diags(coef) @ trial).tocsr()


def fluid_operators(disc: Discretization, geom: GeometrySnapshot, u_prev: np.ndarray, nu: float) -> dict[str, sp.csr_matrix]:
    """Volume fluid matrices at the geometry of omega^n."""
    ale, ale1 = geom.ale, geom.ale_next
    J0, J1, Finv = ale.jac, ale1.jac, ale.inv
    area = disc.areaf
    wq = disc.wf
    Nf = disc.Nf
    G = np.einsum("eqaj,ejk->eqak", disc.Gf_ref, Finv)  # transformed gradients
    scalar_mass = np.einsum("q,qa,qb->ab", wq, Nf, Nf)
    cd = disc.Vu.cell_dofs
    n = disc.nu_s

    MJ0 = _scatter_scalar(cd, np.einsum("ab,e->eab", scalar_mass, J0 * area), n, n)
    MdJ = _scatter_scalar(cd, np.einsum("ab,e->eab", scalar_mass, (J1 - J0) * area), n, n)

    I2 = np.eye(2)
    scale = J0 * area
    gg = np.einsum("q,eqaj,eqbj,e->eab", wq, G, G, scale)
    visc = nu * (np.einsum("ik,eab->eiakb", I2, gg) + np.einsum("q,eqak,eqbi,e->eiakb", wq, G, G, scale))

    # advecting field u^n - w^{n+1} at quadrature points
    un_q = disc.u_at_quad(u_prev)
    w_loc = geom.w[disc.annulus.triangles]  # (e, 3, 2)
    w_q = np.einsum("qa,eai->eqi", disc.Nq, w_loc)
    adv = un_q - w_q
    ag = np.einsum("eqi,eqbi->eqb", adv, G)  # a . grad N_b
    conv = 0.5 * (np.einsum("q,eqb,qa,e->eab", wq, ag, Nf, scale) - np.einsum("q,eqa,qb,e->eab", wq, ag, Nf, scale))
    C = _scatter_scalar(cd, conv, n, n)

    # multiplier: int J q div^omega v
    div_loc = np.einsum("q,qc,eqbk,e->eckb", wq, disc.Nq, G, scale)  # (e, 3, 2, 6)
    tri = disc.annulus.triangles
    rows = np.broadcast_to(tri[:, :, None, None], div_loc.shape)
    cols = np.broadcast_to((np.arange(2)[None, None, :, None] * n + cd[:, None, None, :]), div_loc.shape)
    Gd = sp.coo_matrix((div_loc.ravel(), (rows.ravel(), cols.ravel())), shape=(disc.nq, 2 * n)).tocsr()

    return {
        "MJ0": sp.block_diag([MJ0, MJ0]).tocsr(),
        "MdJ": sp.block_diag([MdJ, MdJ]).tocsr(),
        "visc": _scatter_vector(cd, cd, visc, n, n),
        "conv": sp.block_diag([C, C]).tocsr(),
        "div": Gd,
    }


def biot_operators(disc: Discretization, geom: GeometrySnapshot) -> dict[str, sp.csr_matrix]:
    """Geometry-dependent Biot matrices at (eta^n)^delta."""
    F = geom.eta_delta.deformation_gradient
    det, inv = _inv2(F)
    cof = det[:, None, None] * np.swapaxes(inv, 1, 2)  # J F^{-T}
    g = disc.gb
    area = disc.areab
    tri = disc.disk.triangles
    nd = disc.nd
    # Darcy: int J (grad p F^{-1}) . (grad r F^{-1})
    gt = np.einsum("eaj,ejk->eak", g, inv)
    darcy = np.einsum("eak,ebk,e->eab", gt, gt, det * area)
    Kp = _scatter_scalar(tri, darcy, nd, nd)
    # cof(F) grad N_b per element, (e, 3, 2): J div_b(N_b e_k) = (cof g_b)_k
    cg = np.einsum("ekj,ebj->ebk", cof, g)
    # Dalpha[(b,k), c] = int J N_c div_b(N_b e_k);  H[c, (b,k)] = int J N_b (grad_b N_c)_k
    third = area / 3.0
    d_loc = np.einsum("ebk,e->ekb", cg, third)  # independent of c
    rows = np.broadcast_to((np.arange(2)[None, :, None, None] * nd + tri[:, None, :, None]), (len(tri), 2, 3, 3))
    cols = np.broadcast_to(tri[:, None, None, :], (len(tri), 2, 3, 3))
    vals = np.broadcast_to(d_loc[:, :, :, None], (len(tri), 2, 3, 3))
    Dalpha = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(2 * nd, nd)).tocsr()
    h_loc = np.einsum("eck,e->eck", cg, third)  # (e, c, k), independent of b
    rows = np.broadcast_to(tri[:, :, None, None], (len(tri), 3, 2, 3))
    cols = np.broadcast_to((np.arange(2)[None, None, :, None] * nd + tri[:, None, None, :]), (len(tri), 3, 2, 3))
    vals = np.broadcast_to(h_loc[:, :, :, None], (len(tri), 3, 2, 3))
    H = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(nd, 2 * nd)).tocsr()
    # boundary of the regularized Biot body: int (xi . n_b dS) r on the image polygon
    X = disc.disk.nodes + geom.eta_delta.values
    e = disc.bnd_edges
    d = X[e[:, 1]] - X[e[:, 0]]
    nvec = np.column_stack([d[:, 1], -d[:, 0]])
    m1 = np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
    loc = np.einsum("rs,ek->erks", m1, nvec)  # (edge, r_local, k, s_local)
    rows = np.broadcast_to(e[:, :, None, None], loc.shape)
    cols = np.broadcast_to((np.arange(2)[None, None, :, None] * nd + e[:, None, None, :]), loc.shape)
    Eb = sp.coo_matrix((loc.ravel(), (rows.ravel(), cols.ravel())), shape=(nd, 2 * nd)).tocsr()
    return {"darcy": Kp, "Dalpha": Dalpha, "H": H, "Eb": Eb}


def interface_operators(disc: Discretization, geom: GeometrySnapshot, u_prev: np.ndarray) -> dict[str, sp.csr_matrix]:
    """Per-sample scalar quantities (rows = samples) used by interface forms."""
    n_f = -geom.frame.normal
    tau = geom.frame.tangent
    un = disc.u_trace(u_prev)
    return {
        "u_n": _sample_dot(n_f, disc.Tu_vec),
        "u_t": _sample_dot(tau, disc.Tu_vec),
        "u_un": _sample_dot(un, disc.Tu_vec),
        "e_n": _sample_dot(n_f, disc.R_vec),
        "e_t": _sample_dot(tau, disc.R_vec),
        "p": disc.Tp,
    }


def assemble_step(disc: Discretization, geom: GeometrySnapshot, data: StepData, params: PhysicalParams, dt: float, require_certificate: bool = True) -> StepSystem:
    if require_certificate and not geom.certificate.ok:
        raise StepError("geometry certificate failed: " + "; ".join(geom.certificate.violations()))
    k = dt
    P = params
    fo = fluid_operators(disc, geom, data.u, P.nu)
    bo = biot_operators(disc, geom)
    io = interface_operators(disc, geom, data.u)
    w = disc.grid.weight * np.ones(disc.grid.M)
    s_inv = w / geom.frame.arc
    one = w

    # fluid rows
    Auu = (
        k**2 * fo["MJ0"]
        + 0.5 * k**2 * fo["MdJ"]
        + 0.5 * k**3 * fo["conv"]
        + k**3 * fo["visc"]
        + 0.5 * k**3 * _form(io["u_un"], io["u_n"], one)
        - 0.5 * k**3 * _form(io["u_n"], io["u_un"], one)
        + P.beta * k**3 * _form(io["u_t"], io["u_t"], s_inv)
    )
    Aue_iface = -0.5 * k**2 * _form(io["u_un"], io["e_n"], one) - P.beta * k**2 * _form(io["u_t"], io["e_t"], s_inv)
    Aup = k**3 * _form(io["u_n"], io["p"], one)

    # Biot rows
    Aeu = 0.5 * k**2 * _form(io["e_n"], io["u_un"], one) - P.beta * k**2 * _form(io["e_t"], io["u_t"], s_inv)
    slip_ee = P.beta * k * _form(io["e_t"], io["e_t"], s_inv)
    plate_ee = P.h * (disc.R_vec.T @ sp.diags(np.tile(w, 2)) @ disc.R_vec)
    visc_ee = P.mu_v * k * disc.A_strain + P.lam_v * k * disc.A_div
    Aee = P.rho_b * disc.Mb_vec + plate_ee + (P.mu_e * k**2) * disc.A_strain + (P.lam_e * k**2) * disc.A_div + visc_ee + slip_ee
    Aep = -P.alpha * k**2 * (disc.S_vec.T @ bo["Dalpha"]) - k**2 * _form(io["e_n"], io["p"], one)

    # pressure rows
    Apu = -(k**3) * _form(io["p"], io["u_n"], one)
    Ape_alpha = P.alpha * k**2 * ((bo["Eb"] - bo["H"]) @ disc.S_vec)
    Ape_iface = k**2 * _form(io["p"], io["e_n"], one)
    Ape = Ape_alpha + Ape_iface
    App = P.c0 * k**2 * disc.Mb + P.kappa * k**3 * bo["darcy"]

    Gd = fo["div"]
    Aue = Aue_iface

    # right-hand side
    eta0 = _flat(data.eta)
    eta_m = _flat(data.eta_prev)
    zh = data.zeta_half.ravel()
    b_u = k**2 * (fo["MJ0"] @ data.u) + Aue_iface @ eta0
    b_e = (
        P.rho_b * (disc.Mb_vec @ (2 * eta0 - eta_m))
        + plate_ee @ eta0
        + P.h * k * (disc.R_vec.T @ (np.tile(w, 2) * zh))
        + visc_ee @ eta0
        + slip_ee @ eta0
    )
    b_p = P.c0 * k**2 * (disc.Mb @ data.p) + Ape @ eta0

    form = sp.bmat([[Auu, Aue, Aup], [Aeu, Aee, Aep], [Apu, Ape, App]]).tocsr()

    fu = disc.free_u
    nuf = len(fu)
    A = sp.bmat(
        [
            [Auu[fu][:, fu], k**3 * Gd[:, fu].T, Aue[fu], Aup[fu]],
            [k**3 * Gd[:, fu], None, None, None],
            [Aeu[:, fu], None, Aee, Aep],
            [Apu[:, fu], None, Ape, App],
        ],
        format="csr",
    )
    b = np.concatenate([b_u[fu], np.zeros(disc.nq), b_e, b_p])
    n_e = 2 * disc.nd
    blocks = {
        "u": slice(0, nuf),
        "pi": slice(nuf, nuf + disc.nq),
        "eta": slice(nuf + disc.nq, nuf + disc.nq + n_e),
        "p": slice(nuf + disc.nq + n_e, nuf + disc.nq + n_e + disc.nd),
    }
    return StepSystem(A, b, blocks, disc, geom, data, params, dt, form, Gd)


def _flat(eta: np.ndarray) -> np.ndarray:
    return np.concatenate([eta[:, 0], eta[:, 1]])


def _unflat(v: np.ndarray) -> np.ndarray:
    n = len(v) // 2
    return np.column_stack([v[:n], v[n:]])


@dataclass
class StepSolution:
    u: np.ndarray
    pi: np.ndarray
    eta: np.ndarray
    p: np.ndarray
    zeta: np.ndarray
    residual: float


def relative_residual(A: sp.spmatrix, x: np.ndarray, b: np.ndarray) -> float:
    r = A @ x - b
    scale = spla.norm(A, np.inf) * np.abs(x).max(initial=0.0) + np.abs(b).max(initial=0.0)
    return float(np.abs(r).max(initial=0.0) / scale) if scale > 0 else 0.0


def solve_step(system: StepSystem, tol: float = 1e-10) -> StepSolution:
    disc = system.disc
    try:
        lu = spla.splu(system.A.tocsc())
        x = lu.solve(system.b)
    except RuntimeError as exc:  # singular factor
        raise StepError(f"factorization failed: {exc}") from exc
    res = relative_residual(system.A, x, system.b)
    if not np.isfinite(res) or res > tol:
        raise StepError(f"linear residual {res:.3e} above tolerance {tol:.1e}", residual=res)
    return unpack_solution(system, x, res)


def unpack_solution(system: StepSystem, x: np.ndarray, res: float = 0.0) -> StepSolution:
    disc = system.disc
    bl = system.blocks
    u = np.zeros(disc.n_u)
    u[disc.free_u] = x[bl["u"]]
    eta = _unflat(x[bl["eta"]])
    zeta = disc.reg.trace((eta - system.data.eta) / system.dt)
    return StepSolution(u, x[bl["pi"]].copy(), eta, x[bl["p"]].copy(), zeta, res)


def pack_unknowns(system: StepSystem, u: np.ndarray, pi: np.ndarray, eta: np.ndarray, p: np.ndarray) -> np.ndarray:
    disc = system.disc
    return np.concatenate([u[disc.free_u], pi, _flat(eta), p])


# ----------------------------------------------------------------------------
# independent evaluation of energies and the closed-form quadratic
# ----------------------------------------------------------------------------


def fluid_l2sq(disc: Discretization, u: np.ndarray, jac: np.ndarray) -> float:
    """int J |u|^2 over the annulus by direct quadrature."""
    uq = disc.u_at_quad(u)
    return float(np.einsum("q,eqi,eqi,e->", disc.wf, uq, uq, jac * disc.areaf))


def fluid_strain_sq(disc: Discretization, u: np.ndarray, ale: ALEMap) -> float:
    """int J |sym(grad u (grad Phi)^{-1})|^2."""
    g = np.einsum("eqij,ejk->eqik", disc.u_grad_at_quad(u), ale.inv)
    D = 0.5 * (g + np.swapaxes(g, 2, 3))
    return float(np.einsum("q,eqij,eqij,e->", disc.wf, D, D, ale.jac * disc.areaf))


def biot_l2sq(disc: Discretization, f: np.ndarray) -> float:
    """int |f|^2 for P1 scalar (n,) or vector (n, 2) data on the disk."""
    loc = f[disc.disk.triangles]
    vals = np.einsum("qa,ea...->eq...", disc.Nb, loc)
    sq = vals**2 if vals.ndim == 2 else (vals**2).sum(axis=2)
    return float(np.einsum("q,eq,e->", disc.quad_b.weights, sq, disc.detb))


def biot_strain_sq(disc: Discretization, eta: np.ndarray) -> tuple[float, float]:
    """(int |D eta|^2, int (div eta)^2)."""
    g = p1_gradients(disc.disk, eta)
    D = 0.5 * (g + np.swapaxes(g, 1, 2))
    div = g[:, 0, 0] + g[:, 1, 1]
    return float(np.einsum("eij,eij,e->", D, D, disc.areab)), float(np.sum(div**2 * disc.areab))


def darcy_sq(disc: Discretization, p: np.ndarray, eta_delta: DeformationField) -> float:
    """int J_b |grad p (I + grad eta^delta)^{-1}|^2."""
    det, inv = _inv2(eta_delta.deformation_gradient)
    g = np.einsum("ej,ejk->ek", p1_gradients(disc.disk, p), inv)
    return float(np.sum((g**2).sum(axis=1) * det * disc.areab))


def slip_sq(disc: Discretization, rel: np.ndarray, frame: InterfaceFrame) -> float:
    """int S^{-1} |rel . tau|^2 over the interface samples."""
    t = (rel * frame.tangent).sum(axis=0)
    return float(np.sum(t * t / frame.arc) * disc.grid.weight)


def coercive_closed_form(system: StepSystem, u: np.ndarray, eta: np.ndarray, p: np.ndarray) -> float:
    """Diagonal value of the step bilinear form, evaluated term by term."""
    disc, geom, P, k = system.disc, system.geometry, system.params, system.dt
    J0, J1 = geom.ale.jac, geom.ale_next.jac
    Reta = disc.reg.trace(eta)
    s, dv = biot_strain_sq(disc, eta)
    return (
        0.5 * k**2 * (fluid_l2sq(disc, u, J0) + fluid_l2sq(disc, u, J1))
        + 2 * P.nu * k**3 * fluid_strain_sq(disc, u, geom.ale)
        + P.beta * k * slip_sq(disc, Reta - k * disc.u_trace(u), geom.frame)
        + P.rho_b * biot_l2sq(disc, eta)
        + P.h * l2sq(Reta, disc.grid)
        + (2 * P.mu_e * k**2 + 2 * P.mu_v * k) * s
        + (P.lam_e * k**2 + P.lam_v * k) * dv
        + P.c0 * k**2 * biot_l2sq(disc, p)
        + P.kappa * k**3 * darcy_sq(disc, p, geom.eta_delta)
    )


def form_value(system: StepSystem, u: np.ndarray, eta: np.ndarray, p: np.ndarray) -> float:
    x = np.concatenate([u, _flat(eta), p])
    return float(x @ (system.B_form @ x))


def pressure_block_bound(system: StepSystem, p: np.ndarray) -> tuple[float, float]:
    """(p-block quadratic form, kappa dt^3 c1 c2^-2 |grad p|^2) with
    c1 = min det(I + grad eta^delta) and c2 = max |I + grad eta^delta|."""
    disc, P, k = system.disc, system.params, system.dt
    nd = disc.nd
    App = system.B_form[-nd:, -nd:]
    cert = system.geometry.certificate
    g = p1_gradients(disc.disk, p)
    grad_sq = float(np.sum((g**2).sum(axis=1) * disc.areab))
    return float(p @ (App @ p)), P.kappa * k**3 * cert.min_det_b / cert.max_grad_b**2 * grad_sq


# ----------------------------------------------------------------------------
# energy bookkeeping
# ----------------------------------------------------------------------------


@dataclass
class FullState:
    """Complete state at one time level."""

    u: np.ndarray
    pi: np.ndarray
    eta: np.ndarray
    eta_prev: np.ndarray
    p: np.ndarray
    omega: np.ndarray
    zeta: np.ndarray
    dt: float

    @property
    def xi(self) -> np.ndarray:
        return (self.eta - self.eta_prev) / self.dt


def total_energy(disc: Discretization, state: FullState, jac: np.ndarray, params: PhysicalParams) -> dict[str, float]:
    P = params
    s, dv = biot_strain_sq(disc, state.eta)
    parts = {
        "fluid": 0.5 * fluid_l2sq(disc, state.u, jac),
        "biot_kinetic": 0.5 * P.rho_b * biot_l2sq(disc, state.xi),
        "plate_kinetic": 0.5 * P.h * l2sq(state.zeta, disc.grid),
        "plate_bending": 0.5 * P.h * l2sq(laplacian(state.omega, disc.grid), disc.grid),
        "elastic": P.mu_e * s + 0.5 * P.lam_e * dv,
        "pressure": 0.5 * P.c0 * biot_l2sq(disc, state.p),
    }
    parts["total"] = sum(parts.values())
    return parts


@dataclass
class BiotFluidLedger:
    energy_before: float  # E^{n+1/2}
    energy_after: float  # E^{n+1}
    dissipation: dict[str, float]
    jumps: dict[str, float]

    @property
    def residual(self) -> float:
        lhs = self.energy_after + sum(self.dissipation.values()) + sum(self.jumps.values())
        return abs(lhs - self.energy_before)

    @property
    def relative_residual(self) -> float:
        return self.residual / max(1.0, self.energy_before)


def biot_fluid_ledger(disc: Discretization, before: FullState, after: FullState, geom: GeometrySnapshot, params: PhysicalParams) -> BiotFluidLedger:
    """Terms of the exact Biot/fluid balance

    E^{n+1} + dt D + jumps = E^{n+1/2},

    where ``before`` carries (u^n, eta^n, p^n, omega^{n+1}, zeta^{n+1/2}) and
    ``after`` the solved step.
    """
    P, k = params, before.dt
    J0 = geom.ale.jac
    xi1 = after.xi
    s_xi, d_xi = biot_strain_sq(disc, xi1)
    diss = {
        "viscous": k * 2 * P.nu * fluid_strain_sq(disc, after.u, geom.ale),
        "slip": k * P.beta * slip_sq(disc, after.zeta - disc.u_trace(after.u), geom.frame),
        "biot_viscous": k * (2 * P.mu_v * s_xi + P.lam_v * d_xi),
        "darcy": k * P.kappa * darcy_sq(disc, after.p, geom.eta_delta),
    }
    ds, dd = biot_strain_sq(disc, after.eta - before.eta)
    jumps = {
        "fluid": 0.5 * fluid_l2sq(disc, after.u - before.u, J0),
        "biot_kinetic": 0.5 * P.rho_b * biot_l2sq(disc, xi1 - before.xi),
        "plate_kinetic": 0.5 * P.h * l2sq(after.zeta - before.zeta, disc.grid),
        "elastic": P.mu_e * ds + 0.5 * P.lam_e * dd,
        "pressure": 0.5 * P.c0 * biot_l2sq(disc, after.p - before.p),
    }
    e0 = total_energy(disc, before, J0, params)["total"]
    e1 = total_energy(disc, after, geom.ale_next.jac, params)["total"]
    return BiotFluidLedger(e0, e1, diss, jumps)


def verify_biot_fluid_energy_identity(disc: Discretization, before: FullState, after: FullState, geom: GeometrySnapshot, params: PhysicalParams) -> float:
    return biot_fluid_ledger(disc, before, after, geom, params).relative_residual


def biot_fluid_step(disc: Discretization, geom: GeometrySnapshot, before: FullState, params: PhysicalParams, tol: float = 1e-10) -> tuple[FullState, StepSolution]:
    """Assemble, solve and package one substep."""
    data = StepData(before.u, before.eta, before.eta_prev, before.p, before.zeta)
    system = assemble_step(disc, geom, data, params, before.dt)
    sol = solve_step(system, tol)
    after = FullState(sol.u, sol.pi, sol.eta, before.eta, sol.p, before.omega, sol.zeta, before.dt)
    return after, sol
