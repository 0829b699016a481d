"""Lie splitting over [0, T]: plate substep, geometry update and certificate,
then the implicit Biot/fluid substep, with an exact energy ledger per step."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .biot_fluid import (
    Discretization,
    FullState,
    GeometrySnapshot,
    PhysicalParams,
    StepError,
    biot_fluid_ledger,
    biot_fluid_step,
    fluid_operators,
    make_geometry,
    total_energy,
)
from .geometry import ALEMap, DeformationField, GeomCertificate, Thresholds, certify_geometry, solve_ale_map
from .plate import l2sq, laplacian, plate_ledger, solve_plate_step

log = logging.getLogger(__name__)

COMPLETE = "COMPLETE"
PARTIAL = "PARTIAL"


class InitialDataError(ValueError):
    """Initial data violate a geometric nondegeneracy condition."""


# ----------------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class InitialData:
    """Smooth initial fields, given by amplitudes of fixed profiles.

    eta0 = eta_radial (x, y) + eta_shear (y, x)
    xi0  = xi_rotation (-y, x)
    u0   = u_swirl (2 - r)^2 (-y, x)
    p0   = p_amplitude (1 - r^2)
    """

    eta_radial: float = 0.0
    eta_shear: float = 0.0
    xi_rotation: float = 0.0
    u_swirl: float = 0.0
    p_amplitude: float = 0.0

    def eta0(self, x: np.ndarray) -> np.ndarray:
        X, Y = x[:, 0], x[:, 1]
        return np.column_stack([self.eta_radial * X + self.eta_shear * Y, self.eta_radial * Y + self.eta_shear * X])

    def xi0(self, x: np.ndarray) -> np.ndarray:
        return self.xi_rotation * np.column_stack([-x[:, 1], x[:, 0]])

    def u0(self, x: np.ndarray) -> np.ndarray:
        r = np.hypot(x[:, 0], x[:, 1])
        g = self.u_swirl * (2.0 - r) ** 2
        return np.column_stack([-g * x[:, 1], g * x[:, 0]])

    def p0(self, x: np.ndarray) -> np.ndarray:
        return self.p_amplitude * (1.0 - (x**2).sum(axis=1))

    def scaled(self, factor: float) -> "InitialData":
        return InitialData(*(factor * getattr(self, f.name) for f in fields(self)))


@dataclass(frozen=True)
class RunConfig:
    params: PhysicalParams = PhysicalParams()
    dt: float = 1.0 / 32
    T: float = 0.5
    delta: float = 0.25
    n_refine: int = 2
    M: int = 64
    K: int = 16
    thresholds: Thresholds = Thresholds()
    solver_tol: float = 1e-10
    initial: InitialData = InitialData()

    @property
    def n_steps(self) -> int:
        n = round(self.T / self.dt)
        if n < 1 or abs(n * self.dt - self.T) > 1e-9 * max(self.T, 1.0):
            raise ValueError(f"T={self.T} is not an integer multiple of dt={self.dt}")
        return n

    def validate(self) -> None:
        self.params.validate()
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("dt and T must be positive")
        _ = self.n_steps
        if self.n_refine < 0:
            raise ValueError("n_refine must be nonnegative")

    def replace(self, **changes) -> "RunConfig":
        from dataclasses import replace

        return replace(self, **changes)


@lru_cache(maxsize=4)
def discretization(n_refine: int, M: int, K: int, delta: float) -> Discretization:
    return Discretization(n_refine, M, K, delta)


# ----------------------------------------------------------------------------
# ledger record
# ----------------------------------------------------------------------------


@dataclass
class EnergyRecord:
    n: int
    time: float
    E_n: float
    E_half: float
    E_next: float
    D_viscous: float
    D_slip: float
    D_biot_viscous: float
    D_darcy: float
    D_plate_viscous: float
    J_plate_velocity: float
    J_plate_bending: float
    J_fluid: float
    J_biot_kinetic: float
    J_plate_kinetic: float
    J_elastic: float
    J_pressure: float
    r_plate: float
    r_biotfluid: float
    solver_residual: float
    drift: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def values(self) -> list[float]:
        return [getattr(self, c) for c in self.columns()]

    @property
    def dissipation(self) -> float:
        return self.D_viscous + self.D_slip + self.D_biot_viscous + self.D_darcy + self.D_plate_viscous

    @property
    def jumps(self) -> float:
        return (
            self.J_plate_velocity + self.J_plate_bending + self.J_fluid + self.J_biot_kinetic
            + self.J_plate_kinetic + self.J_elastic + self.J_pressure
        )


# ----------------------------------------------------------------------------
# trajectory
# ----------------------------------------------------------------------------


@dataclass
class Snapshot:
    time: float
    u: np.ndarray
    eta: np.ndarray
    xi: np.ndarray
    p: np.ndarray
    omega: np.ndarray
    zeta: np.ndarray


@dataclass
class Trajectory:
    config: RunConfig
    disc: Discretization
    states: list[FullState] = field(default_factory=list)
    ale: list[ALEMap] = field(default_factory=list)
    zeta_half: list[np.ndarray] = field(default_factory=list)
    certificates: list[GeomCertificate] = field(default_factory=list)
    records: list[EnergyRecord] = field(default_factory=list)
    outcome: str = COMPLETE
    breakdown_time: float | None = None
    failure: str = ""

    @property
    def dt(self) -> float:
        return self.config.dt

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.states))

    @property
    def final(self) -> FullState:
        return self.states[-1]

    @property
    def certified_horizon(self) -> float:
        return self.dt * (len(self.states) - 1)

    def snapshot(self, n: int) -> Snapshot:
        s = self.states[n]
        return Snapshot(n * self.dt, s.u, s.eta, s.xi, s.p, s.omega, s.zeta)

    def energies(self) -> np.ndarray:
        """E^0, E^1, ... over the accepted steps."""
        if not self.records:
            return np.array([self.initial_energy])
        return np.array([self.records[0].E_n] + [r.E_next for r in self.records])

    @property
    def initial_energy(self) -> float:
        return total_energy(self.disc, self.states[0], self.ale[0].jac, self.config.params)["total"]

    def reconstruct(self, t: float, kind: str = "piecewise") -> Snapshot:
        return reconstruct(self, t, kind)


def _blend(a: Snapshot, b: Snapshot, theta: float, t: float) -> Snapshot:
    mix = lambda x, y: (1 - theta) * x + theta * y  # noqa: E731
    return Snapshot(t, mix(a.u, b.u), mix(a.eta, b.eta), mix(a.xi, b.xi), mix(a.p, b.p), mix(a.omega, b.omega), mix(a.zeta, b.zeta))


def reconstruct(traj: Trajectory, t: float, kind: str = "piecewise") -> Snapshot:
    """Time reconstructions of a trajectory.

    ``piecewise`` takes the value at the right endpoint of the slab holding t,
    ``interpolant`` is linear in time between grid values and ``star``
    is the piecewise value with the plate velocity replaced by the
    intermediate value zeta^{n+1/2} of the slab.
    """
    horizon = traj.certified_horizon
    if not 0.0 <= t <= horizon * (1 + 1e-12):
        raise ValueError(f"t={t} outside [0, {horizon}]")
    dt = traj.dt
    n_right = min(len(traj.states) - 1, max(0, math.ceil(t / dt - 1e-9)))
    if kind == "piecewise":
        snap = traj.snapshot(n_right)
        snap.time = t
        return snap
    if kind == "interpolant":
        if n_right == 0:
            return traj.snapshot(0)
        theta = (t - (n_right - 1) * dt) / dt
        return _blend(traj.snapshot(n_right - 1), traj.snapshot(n_right), theta, t)
    if kind == "star":
        snap = traj.snapshot(n_right)
        snap.time = t
        if n_right > 0:
            snap.zeta = traj.zeta_half[n_right - 1]
        return snap
    raise ValueError(f"unknown reconstruction kind {kind!r}")


def kinematic_drift(traj: Trajectory) -> np.ndarray:
    """d^n = |omega^n - R eta^n| in L2 of the interface, per accepted level."""
    disc = traj.disc
    return np.array([math.sqrt(l2sq(s.omega - disc.reg.trace(s.eta), disc.grid)) for s in traj.states])


# ----------------------------------------------------------------------------
# initialization and time loop
# ----------------------------------------------------------------------------


def project_velocity(disc: Discretization, u_raw: np.ndarray, ale: ALEMap) -> tuple[np.ndarray, np.ndarray, float]:
    """J-weighted L2 projection onto the discretely constrained velocities.

    Returns (u, multiplier, constraint residual).
    """
    dummy = GeometrySnapshot(None, ale, ale, None, None, np.zeros_like(ale.values), None, 1.0)
    fo = fluid_operators(disc, dummy, np.zeros(disc.n_u), 0.0)
    fu = disc.free_u
    M = fo["MJ0"][fu][:, fu]
    G = fo["div"][:, fu]
    A = sp.bmat([[M, G.T], [G, None]], format="csc")
    b = np.concatenate([(fo["MJ0"] @ u_raw)[fu], np.zeros(disc.nq)])
    x = spla.splu(A).solve(b)
    u = np.zeros(disc.n_u)
    u[fu] = x[: len(fu)]
    res = float(np.abs(fo["div"] @ u).max(initial=0.0))
    return u, x[len(fu) :], res


def initialize(config: RunConfig, data: InitialData | None = None) -> Trajectory:
    config.validate()
    data = data or config.initial
    disc = discretization(config.n_refine, config.M, config.K, config.delta)
    dt = config.dt
    X = disc.disk.nodes
    eta0 = data.eta0(X)
    eta_prev = eta0 - dt * data.xi0(X)
    omega0 = disc.reg.trace(eta0)
    zeta0 = disc.reg.trace(data.xi0(X))
    ale0 = solve_ale_map(omega0, disc.annulus, disc.grid, disc.extender)
    cert = certify_geometry(DeformationField(disc.disk, disc.reg.nodal(eta0)), omega0, ale0, disc.grid, config.thresholds)
    if not cert.ok:
        raise InitialDataError("initial data rejected: " + "; ".join(cert.violations()))
    u_raw = disc.interpolate_velocity(data.u0)
    u0, pi0, _ = project_velocity(disc, u_raw, ale0)
    state = FullState(u0, pi0, eta0, eta_prev, data.p0(X), omega0, zeta0, dt)
    return Trajectory(config, disc, [state], [ale0], [], [cert], [])


def advance(traj: Trajectory) -> bool:
    """One splitting step; returns False when the run stops early."""
    cfg, disc = traj.config, traj.disc
    P, dt = cfg.params, cfg.dt
    n = len(traj.states) - 1
    cur = traj.states[-1]
    ale_n = traj.ale[-1]
    J0 = ale_n.jac

    E_n = total_energy(disc, cur, J0, P)["total"]
    omega_half, zeta_half = solve_plate_step(cur.omega, cur.zeta, P.h, dt, disc.grid)
    pl = plate_ledger((cur.omega, cur.zeta), (omega_half, zeta_half), P.h, dt, disc.grid)

    geom = make_geometry(disc, cur.omega, omega_half, cur.eta, dt, cfg.thresholds, ale=ale_n)
    if not geom.certificate.ok:
        traj.outcome = PARTIAL
        traj.breakdown_time = (n + 1) * dt
        traj.failure = "; ".join(geom.certificate.violations())
        log.warning("certificate failed at step %d: %s", n + 1, traj.failure)
        return False

    before = FullState(cur.u, cur.pi, cur.eta, cur.eta_prev, cur.p, omega_half, zeta_half, dt)
    after, sol = biot_fluid_step(disc, geom, before, P, cfg.solver_tol)
    bl = biot_fluid_ledger(disc, before, after, geom, P)
    E_half = bl.energy_before
    r_plate = abs(E_half + pl.dissipation + pl.velocity_jump + pl.bending_jump - E_n) / max(1.0, E_n)
    drift = math.sqrt(l2sq(after.omega - disc.reg.trace(after.eta), disc.grid))
    rec = EnergyRecord(
        n=n,
        time=(n + 1) * dt,
        E_n=E_n,
        E_half=E_half,
        E_next=bl.energy_after,
        D_viscous=bl.dissipation["viscous"],
        D_slip=bl.dissipation["slip"],
        D_biot_viscous=bl.dissipation["biot_viscous"],
        D_darcy=bl.dissipation["darcy"],
        D_plate_viscous=pl.dissipation,
        J_plate_velocity=pl.velocity_jump,
        J_plate_bending=pl.bending_jump,
        J_fluid=bl.jumps["fluid"],
        J_biot_kinetic=bl.jumps["biot_kinetic"],
        J_plate_kinetic=bl.jumps["plate_kinetic"],
        J_elastic=bl.jumps["elastic"],
        J_pressure=bl.jumps["pressure"],
        r_plate=r_plate,
        r_biotfluid=bl.relative_residual,
        solver_residual=sol.residual,
        drift=drift,
    )
    traj.states.append(after)
    traj.ale.append(geom.ale_next)
    traj.zeta_half.append(zeta_half)
    traj.certificates.append(geom.certificate)
    traj.records.append(rec)
    return True


def run(config: RunConfig, data: InitialData | None = None, progress: Callable[[int, int], None] | None = None) -> Trajectory:
    traj = initialize(config, data)
    N = config.n_steps
    for n in range(N):
        if not advance(traj):
            break
        if progress is not None:
            progress(n + 1, N)
    return traj
