from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from fpsisplit.biot_fluid import (
    FullState,
    PhysicalParams,
    StepData,
    StepError,
    assemble_step,
    biot_fluid_ledger,
    biot_fluid_step,
    coercive_closed_form,
    discrete_ale_velocity,
    fluid_operators,
    fluid_strain_sq,
    form_value,
    make_geometry,
    pack_unknowns,
    pressure_block_bound,
    solve_step,
    unpack_solution,
    verify_biot_fluid_energy_identity,
)
from fpsisplit.driver import initialize
from fpsisplit.geometry import solve_ale_map


def _band(grid, rng, scale):
    return scale * grid.project(rng.standard_normal((2, grid.M)))


@pytest.fixture(scope="module")
def start(coarse_config):
    traj = initialize(coarse_config)
    return traj


def _step_inputs(traj, rng, params=None):
    disc, cfg = traj.disc, traj.config
    s = traj.states[0]
    dt = cfg.dt
    omega_half = s.omega + dt * _band(disc.grid, rng, 0.1)
    zeta_half = _band(disc.grid, rng, 0.1)
    geom = make_geometry(disc, s.omega, omega_half, s.eta, dt, cfg.thresholds, ale=traj.ale[0])
    before = FullState(s.u, s.pi, s.eta, s.eta_prev, s.p, omega_half, zeta_half, dt)
    return disc, geom, before, params or cfg.params


def _zero_state(disc, dt):
    z2 = np.zeros((2, disc.grid.M))
    return FullState(np.zeros(disc.n_u), np.zeros(disc.nq), np.zeros((disc.nd, 2)), np.zeros((disc.nd, 2)), np.zeros(disc.nd), z2, z2, dt)


def test_params_validation():
    PhysicalParams().validate()
    PhysicalParams(mu_v=0.0, lam_v=0.0).validate()
    for bad in (dict(kappa=0.0), dict(mu_v=-1.0), dict(mu_v=0.0, lam_v=1.0), dict(h=-1.0)):
        with pytest.raises(ValueError):
            replace(PhysicalParams(), **bad).validate()


def test_zero_data_zero_solution(coarse_disc):
    dt = 0.01
    z2 = np.zeros((2, coarse_disc.grid.M))
    geom = make_geometry(coarse_disc, z2, z2, np.zeros((coarse_disc.nd, 2)), dt)
    after, sol = biot_fluid_step(coarse_disc, geom, _zero_state(coarse_disc, dt), PhysicalParams())
    for arr in (after.u, after.eta, after.p, after.zeta, sol.pi):
        assert np.abs(arr).max() == 0.0


def test_manufactured_solution_recovered(start, rng):
    disc, geom, before, params = _step_inputs(start, rng)
    data = StepData(before.u, before.eta, before.eta_prev, before.p, before.zeta)
    system = assemble_step(disc, geom, data, params, before.dt)
    u = rng.standard_normal(disc.n_u)
    u[disc.Vu.constrained] = 0
    x = pack_unknowns(system, u, rng.standard_normal(disc.nq), rng.standard_normal((disc.nd, 2)), rng.standard_normal(disc.nd))
    system.b = system.A @ x
    sol = solve_step(system)
    assert np.allclose(pack_unknowns(system, sol.u, sol.pi, sol.eta, sol.p), x, rtol=0, atol=1e-8)


def test_convection_skew(start, rng):
    disc, geom, before, params = _step_inputs(start, rng)
    C = fluid_operators(disc, geom, before.u, params.nu)["conv"]
    v = rng.standard_normal(disc.n_u)
    assert abs(v @ (C @ v)) <= 1e-12 * np.abs(C).sum()
    assert abs(C + C.T).max() <= 1e-12 * abs(C).max()


def test_constraint_satisfied(start, rng):
    disc, geom, before, params = _step_inputs(start, rng)
    after, sol = biot_fluid_step(disc, geom, before, params)
    data = StepData(before.u, before.eta, before.eta_prev, before.p, before.zeta)
    G = assemble_step(disc, geom, data, params, before.dt).G
    assert np.abs(G @ after.u).max() <= 1e-10 * max(1.0, np.abs(after.u).max())


def test_solution_satisfies_weak_form(start, rng):
    """Galerkin consistency: the unreduced form annihilates test functions on the free dofs."""
    disc, geom, before, params = _step_inputs(start, rng)
    data = StepData(before.u, before.eta, before.eta_prev, before.p, before.zeta)
    system = assemble_step(disc, geom, data, params, before.dt)
    sol = solve_step(system)
    x = pack_unknowns(system, sol.u, sol.pi, sol.eta, sol.p)
    assert np.linalg.norm(system.A @ x - system.b) <= 1e-10 * np.linalg.norm(system.b)
    back = unpack_solution(system, x)
    assert np.array_equal(back.u, sol.u) and np.array_equal(back.eta, sol.eta)


@pytest.mark.parametrize("visc", [0.0, 1.0], ids=["poroelastic", "poroviscoelastic"])
def test_energy_identity(start, rng, visc):
    params = PhysicalParams(mu_v=visc, lam_v=visc)
    disc, geom, before, params = _step_inputs(start, rng, params)
    after, _ = biot_fluid_step(disc, geom, before, params)
    led = biot_fluid_ledger(disc, before, after, geom, params)
    assert led.relative_residual <= 1e-9
    assert verify_biot_fluid_energy_identity(disc, before, after, geom, params) == led.relative_residual
    assert min(led.dissipation.values()) >= 0 and min(led.jumps.values()) >= 0
    assert led.energy_after <= led.energy_before
    if visc == 0.0:
        assert led.dissipation["biot_viscous"] == 0.0
    # every jump term is needed for closure
    for key, val in led.jumps.items():
        if val > 1e-6 * led.energy_before:
            assert abs(led.residual - val) > 1e-9 * led.energy_before, key


def test_coercivity_and_darcy_bound(start, rng):
    disc, geom, before, params = _step_inputs(start, rng)
    data = StepData(before.u, before.eta, before.eta_prev, before.p, before.zeta)
    system = assemble_step(disc, geom, data, params, before.dt)
    for _ in range(5):
        u = rng.standard_normal(disc.n_u)
        u[disc.Vu.constrained] = 0
        eta, p = rng.standard_normal((disc.nd, 2)), rng.standard_normal(disc.nd)
        a, b = form_value(system, u, eta, p), coercive_closed_form(system, u, eta, p)
        assert a == pytest.approx(b, rel=1e-9) and b > 0
        lhs, rhs = pressure_block_bound(system, p)
        assert lhs >= rhs > 0


def test_viscous_dissipation_positive(start, rng):
    disc = start.disc
    u = rng.standard_normal(disc.n_u)
    u[disc.Vu.constrained] = 0
    assert fluid_strain_sq(disc, u, start.ale[0]) > 0
    assert fluid_strain_sq(disc, np.zeros(disc.n_u), start.ale[0]) == 0


def test_ale_velocity_examples(coarse_disc):
    disc, dt, eps = coarse_disc, 0.01, 0.02
    z = disc.grid.samples
    base = 0.01 * np.vstack([np.cos(2 * z), np.sin(3 * z)])
    kw = dict(mesh=disc.annulus, grid=disc.grid)
    assert np.abs(discrete_ale_velocity(base, base, dt, **kw)).max() <= 1e-15
    bump = eps * np.vstack([np.cos(z), np.sin(z)])
    w1 = discrete_ale_velocity(base + dt * bump, base, dt, **kw)
    w2 = discrete_ale_velocity(base + 0.5 * dt * bump, base, 0.5 * dt, **kw)
    ext = solve_ale_map(bump, disc.annulus, disc.grid).values - disc.annulus.nodes
    assert np.allclose(w1, ext, atol=1e-10) and np.allclose(w2, ext, atol=1e-9)
    ids = disc.annulus.interface_nodes()
    ang = np.arctan2(disc.annulus.nodes[ids, 1], disc.annulus.nodes[ids, 0])
    expected = disc.grid.evaluate(bump, ang).T
    assert np.abs(w1[ids] - expected).max() <= 1e-12
    with pytest.raises(ValueError):
        discrete_ale_velocity(base, base, dt)


def test_failed_certificate_refuses_assembly(coarse_disc):
    z = coarse_disc.grid.samples
    far = 1.2 * np.vstack([np.cos(z), np.sin(z)])
    geom = make_geometry(coarse_disc, far, far, np.zeros((coarse_disc.nd, 2)), 0.01)
    assert not geom.certificate.ok
    data = StepData(np.zeros(coarse_disc.n_u), np.zeros((coarse_disc.nd, 2)), np.zeros((coarse_disc.nd, 2)), np.zeros(coarse_disc.nd), np.zeros((2, coarse_disc.grid.M)))
    with pytest.raises(StepError, match="certificate"):
        assemble_step(coarse_disc, geom, data, PhysicalParams(), 0.01)


def test_solver_tolerance_enforced(start, rng):
    disc, geom, before, params = _step_inputs(start, rng)
    with pytest.raises(StepError, match="tolerance") as info:
        biot_fluid_step(disc, geom, before, params, tol=1e-30)
    assert info.value.residual is not None and info.value.residual > 1e-30
