from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpsisplit.mesh import build_interface_grid
from fpsisplit.plate import laplacian, l2sq, plate_energy, plate_ledger, solve_mode, solve_plate_step, verify_plate_energy_identity


def _band(grid, rng, scale=1.0):
    return scale * grid.project(rng.standard_normal((2, grid.M)))


def test_zero_data(grid64):
    w, z = solve_plate_step(np.zeros((2, 64)), np.zeros((2, 64)), 0.5, 0.1, grid64)
    assert not w.any() and not z.any()


def test_single_mode_closed_form(grid64):
    dt, m = 0.1, 1
    zeta = np.vstack([np.cos(m * grid64.samples), np.zeros(64)])
    w, z = solve_plate_step(np.zeros((2, 64)), zeta, 1.0, dt, grid64)
    factor = (1 / dt) / (1 / dt + 1 + dt)
    assert factor == pytest.approx(0.9009009009)
    assert np.allclose(z[0], factor * zeta[0], atol=1e-14) and np.allclose(w[0], dt * factor * zeta[0], atol=1e-14)
    assert not z[1].any()


def test_mean_mode_is_free_flight(grid64):
    w0 = np.array([[0.2] * 64, [-0.1] * 64])
    z0 = np.array([[1.0] * 64, [0.5] * 64])
    w, z = solve_plate_step(w0, z0, 0.3, 0.05, grid64)
    assert np.allclose(z, z0) and np.allclose(w, w0 + 0.05 * z0)


def test_solve_mode_matches_vector_solve(grid64, rng):
    w0, z0 = _band(grid64, rng), _band(grid64, rng)
    dt = 0.01
    w, z = solve_plate_step(w0, z0, 1.0, dt, grid64)
    cw, cz = grid64.coefficients(w0), grid64.coefficients(z0)
    ew, ez = grid64.coefficients(w), grid64.coefficients(z)
    for m in (0, 3, 16):
        a, b = solve_mode(cw[0, m], cz[0, m], m, dt)
        assert a == pytest.approx(ew[0, m], abs=1e-13) and b == pytest.approx(ez[0, m], abs=1e-13)


def test_step_independent_of_h(grid64, rng):
    w0, z0 = _band(grid64, rng), _band(grid64, rng)
    a = solve_plate_step(w0, z0, 1.0, 0.1, grid64)
    b = solve_plate_step(w0, z0, 0.01, 0.1, grid64)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_invalid_parameters(grid64):
    with pytest.raises(ValueError):
        solve_plate_step(np.zeros((2, 64)), np.zeros((2, 64)), 0.0, 0.1, grid64)
    with pytest.raises(ValueError):
        solve_plate_step(np.zeros((2, 64)), np.zeros((2, 64)), 1.0, -0.1, grid64)


def test_energy_parseval(grid64):
    z = grid64.samples
    omega = np.vstack([np.cos(2 * z), np.zeros(64)])
    zeta = np.vstack([np.zeros(64), np.sin(3 * z)])
    # |omega_zz|^2 = 16 pi, |zeta|^2 = pi
    assert plate_energy(omega, zeta, 0.5, grid64) == pytest.approx(0.25 * (np.pi + 16 * np.pi))
    assert l2sq(laplacian(omega, grid64), grid64) == pytest.approx(16 * np.pi)


def test_trapezoid_exact_for_band(grid64):
    assert l2sq(np.vstack([np.cos(16 * grid64.samples), np.zeros(64)]), grid64) == pytest.approx(np.pi)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([1.0, 0.1, 0.01]), st.sampled_from([0.1, 0.01]))
def test_energy_identity_and_stability(seed, h, dt):
    grid = build_interface_grid(64, 16)
    rng = np.random.default_rng(seed)
    w0, z0 = _band(grid, rng), _band(grid, rng)
    w1, z1 = solve_plate_step(w0, z0, h, dt, grid)
    led = plate_ledger((w0, z0), (w1, z1), h, dt, grid)
    assert led.residual <= 1e-11 * max(1.0, led.energy_before)
    assert led.energy_after <= led.energy_before * (1 + 1e-14)
    assert min(led.dissipation, led.velocity_jump, led.bending_jump) >= 0


def test_dropping_terms_breaks_balance(grid64, rng):
    w0, z0 = _band(grid64, rng), _band(grid64, rng)
    w1, z1 = solve_plate_step(w0, z0, 1.0, 0.1, grid64)
    led = plate_ledger((w0, z0), (w1, z1), 1.0, 0.1, grid64)
    assert led.dissipation_free_residual > 1e-3 and led.jump_free_residual > 1e-3
    assert led.residual < 1e-11 * led.energy_before


def test_perturbation_polynomial(grid64, rng):
    """Residual of the balance with a perturbed velocity is a polynomial in eps with no constant term."""
    w0, z0 = _band(grid64, rng), _band(grid64, rng)
    w1, z1 = solve_plate_step(w0, z0, 1.0, 0.1, grid64)
    d = _band(grid64, rng)
    eps = np.array([1e-3, 1e-2, 1e-1, 1.0])
    res = []
    for e in eps:
        zp = z1 + e * d
        res.append(verify_plate_energy_identity((w0, z0), (w0 + 0.1 * zp, zp), 1.0, 0.1, grid64))
    coef = np.polyfit(eps, res, 2)
    assert np.allclose(np.polyval(coef, eps), res, rtol=1e-8, atol=1e-12)
    assert abs(coef[2]) < 1e-10 and coef[0] > 0


def test_mode_decoupling(grid64, rng):
    z = grid64.samples
    w0 = np.vstack([np.cos(5 * z), np.sin(2 * z)])
    w1, z1 = solve_plate_step(w0, np.zeros((2, 64)), 1.0, 0.05, grid64)
    c = np.abs(grid64.coefficients(w1))
    assert np.abs(np.delete(c[0], 5)).max() < 1e-14 and np.abs(np.delete(c[1], 2)).max() < 1e-14
