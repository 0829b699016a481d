from __future__ import annotations

import numpy as np
import pytest

from fpsisplit.diagnostics import ledger_closure, monotonicity_violations
from fpsisplit.driver import (
    COMPLETE,
    PARTIAL,
    InitialData,
    InitialDataError,
    RunConfig,
    initialize,
    kinematic_drift,
    project_velocity,
    reconstruct,
    run,
)
from fpsisplit.geometry import Thresholds


@pytest.fixture(scope="module")
def coarse_run(coarse_config):
    return run(coarse_config)


def test_zero_data_stays_zero(tiny_config):
    traj = run(tiny_config, InitialData())
    assert traj.outcome == COMPLETE and len(traj.records) == tiny_config.n_steps
    assert np.abs(traj.energies()).max() == 0.0
    assert np.abs(traj.final.u).max() == 0.0 and np.abs(traj.final.eta).max() == 0.0


def test_rejects_degenerate_initial_data(tiny_config):
    with pytest.raises(InitialDataError, match="initial data rejected"):
        initialize(tiny_config, InitialData(eta_radial=-0.95))


def test_config_validation():
    with pytest.raises(ValueError, match="multiple"):
        RunConfig(dt=0.03, T=0.1).validate()
    with pytest.raises(ValueError):
        RunConfig(dt=-0.1).validate()


def test_initial_state(coarse_config):
    traj = initialize(coarse_config)
    disc, s = traj.disc, traj.states[0]
    assert np.allclose(s.omega, disc.reg.trace(s.eta), atol=0)
    assert kinematic_drift(traj)[0] == 0.0
    X = disc.disk.nodes
    assert np.allclose(s.xi, coarse_config.initial.xi0(X))
    _, _, res = project_velocity(disc, disc.interpolate_velocity(coarse_config.initial.u0), traj.ale[0])
    assert res <= 1e-10


def test_projection_fixes_constrained_fields(coarse_disc, coarse_config):
    traj = initialize(coarse_config)
    u, _, res = project_velocity(coarse_disc, traj.states[0].u, traj.ale[0])
    assert res <= 1e-10
    assert np.allclose(u, traj.states[0].u, atol=1e-10)


def test_run_closes_ledger(coarse_run, coarse_config):
    assert coarse_run.outcome == COMPLETE
    assert len(coarse_run.records) == coarse_config.n_steps
    assert ledger_closure(coarse_run.records) <= 1e-8
    assert max(r.r_biotfluid for r in coarse_run.records) <= 1e-9
    assert max(r.r_plate for r in coarse_run.records) <= 1e-11
    assert monotonicity_violations(coarse_run.records) == []
    e = coarse_run.energies()
    assert np.all(np.diff(e) <= 1e-12 * e[0])
    assert coarse_run.certified_horizon == pytest.approx(coarse_config.T)


def test_records_chain(coarse_run):
    recs = coarse_run.records
    for a, b in zip(recs, recs[1:]):
        assert b.E_n == pytest.approx(a.E_next, rel=1e-14)
    assert [r.n for r in recs] == list(range(len(recs)))


def test_reconstructions(coarse_run):
    dt = coarse_run.dt
    s2 = coarse_run.snapshot(2)
    pw = reconstruct(coarse_run, 1.5 * dt, "piecewise")
    assert np.array_equal(pw.eta, s2.eta)
    mid = reconstruct(coarse_run, 1.5 * dt, "interpolant")
    assert np.allclose(mid.eta, 0.5 * (coarse_run.snapshot(1).eta + s2.eta))
    at = reconstruct(coarse_run, 2 * dt, "interpolant")
    assert np.allclose(at.u, s2.u)
    star = reconstruct(coarse_run, 1.5 * dt, "star")
    assert np.array_equal(star.zeta, coarse_run.zeta_half[1]) and np.array_equal(star.eta, s2.eta)
    assert np.array_equal(reconstruct(coarse_run, 0.0, "star").zeta, coarse_run.states[0].zeta)
    with pytest.raises(ValueError):
        reconstruct(coarse_run, coarse_run.certified_horizon + dt, "piecewise")
    with pytest.raises(ValueError):
        reconstruct(coarse_run, 0.0, "cubic")


def test_drift_small_and_nonnegative(coarse_run):
    d = kinematic_drift(coarse_run)
    assert len(d) == len(coarse_run.states) and (d >= 0).all()
    assert np.allclose(d[1:], [r.drift for r in coarse_run.records])


def test_partial_run_stops_at_failing_step(tiny_config):
    cfg = tiny_config.replace(T=0.2, initial=InitialData(eta_radial=0.1), thresholds=Thresholds(alpha=1.09))
    traj = run(cfg)
    assert traj.outcome == PARTIAL
    n = len(traj.records)
    assert 0 < n < cfg.n_steps
    assert traj.breakdown_time == pytest.approx((n + 1) * cfg.dt)
    assert traj.certified_horizon == pytest.approx(n * cfg.dt)
    assert "tangent" in traj.failure
    assert all(c.ok for c in traj.certificates)


def test_progress_callback(tiny_config):
    seen = []
    run(tiny_config, progress=lambda i, n: seen.append((i, n)))
    assert seen[-1][1] == tiny_config.n_steps and len(seen) == tiny_config.n_steps
