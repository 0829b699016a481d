from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpsisplit.geometry import (
    DeformationField,
    GeometryError,
    HarmonicExtender,
    Thresholds,
    annulus_path_length,
    biot_jacobian,
    certify_geometry,
    curve_length_under_map,
    interface_frame,
    lagrangian_map,
    polyline_length,
    solve_ale_map,
    transformed_divergence_biot,
    transformed_gradient_biot,
)
from fpsisplit.mesh import INTERFACE, build_annulus_mesh, build_disk_mesh, build_interface_grid


def _field(mesh, fn):
    return DeformationField(mesh, fn(mesh.nodes))


def test_lagrangian_map_examples(disk2):
    zero = _field(disk2, lambda x: np.zeros_like(x))
    assert np.allclose(lagrangian_map(zero, np.array([0.3, 0.4])), [0.3, 0.4])
    shift = _field(disk2, lambda x: np.tile([0.1, 0.0], (len(x), 1)))
    assert np.allclose(lagrangian_map(shift, np.array([0.5, 0.0])), [0.6, 0.0])
    stretch = _field(disk2, lambda x: np.column_stack([0.1 * x[:, 0], 0 * x[:, 0]]))
    assert np.allclose(lagrangian_map(stretch, np.array([0.5, 0.0])), [0.55, 0.0], atol=1e-14)


def test_biot_jacobian_affine(disk2):
    assert np.allclose(biot_jacobian(_field(disk2, np.zeros_like)), 1.0)
    a, b = 0.2, -0.1
    f = _field(disk2, lambda x: np.column_stack([a * x[:, 0], b * x[:, 1]]))
    assert np.allclose(biot_jacobian(f), (1 + a) * (1 + b), atol=1e-13)


def test_transformed_gradient_analytic(disk2):
    a = 0.25
    f = _field(disk2, lambda x: np.column_stack([a * x[:, 0], 0 * x[:, 0]]))
    g = transformed_gradient_biot(f, disk2.nodes[:, 0])
    assert np.allclose(g[:, 0], 1 / (1 + a), atol=1e-13) and np.allclose(g[:, 1], 0, atol=1e-13)
    zero = _field(disk2, np.zeros_like)
    gv = transformed_gradient_biot(zero, disk2.nodes)
    assert np.allclose(gv, np.eye(2), atol=1e-13)
    assert np.allclose(transformed_divergence_biot(zero, disk2.nodes), 2.0, atol=1e-13)


def test_transformed_gradient_singular(disk2):
    f = _field(disk2, lambda x: np.column_stack([-x[:, 0], 0 * x[:, 0]]))
    with pytest.raises(GeometryError, match="element"):
        transformed_gradient_biot(f, disk2.nodes[:, 0])


def test_ale_identity(annulus2, grid64):
    ale = solve_ale_map(np.zeros((2, 64)), annulus2, grid64)
    assert np.allclose(ale.values, annulus2.nodes, atol=1e-14)
    assert np.allclose(ale.jac, 1.0, atol=1e-13)


def test_ale_radial_oracle():
    eps = 0.05
    errors = []
    for level in (1, 2):
        mesh = build_annulus_mesh(level)
        grid = build_interface_grid(64, 16)
        z = grid.samples
        ale = solve_ale_map(eps * np.vstack([np.cos(z), np.sin(z)]), mesh, grid)
        r = np.linalg.norm(mesh.nodes, axis=1)
        f = -(eps / 3) * r + (4 * eps / 3) / r
        exact = mesh.nodes + f[:, None] * mesh.nodes / r[:, None]
        errors.append(np.abs(ale.values - exact).max())
        assert ale.residual < 1e-10
    assert errors[1] < errors[0] / 3
    assert errors[1] < 2e-3 * eps


def test_harmonic_extension_residual(annulus2, grid64, rng):
    ext = HarmonicExtender(annulus2)
    omega = 0.02 * grid64.project(rng.standard_normal((2, 64)))
    _, res = ext.extend(ext.boundary_data(omega, grid64))
    assert res < 1e-10


def test_frame_examples(grid64):
    z = grid64.samples
    fr = interface_frame(np.zeros((2, 64)), grid64)
    assert np.allclose(fr.normal, [np.cos(z), np.sin(z)]) and np.allclose(fr.tangent, [-np.sin(z), np.cos(z)])
    assert np.allclose(fr.arc, 1.0)
    eps = 0.1
    fr = interface_frame(eps * np.vstack([np.cos(z), np.sin(z)]), grid64)
    assert np.allclose(fr.normal, (1 + eps) * np.vstack([np.cos(z), np.sin(z)]), atol=1e-13)
    assert np.allclose(fr.tangent, (1 + eps) * np.vstack([-np.sin(z), np.cos(z)]), atol=1e-13)
    assert np.allclose(fr.arc, 1 + eps)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_frame_norms_agree(seed):
    grid = build_interface_grid(64, 16)
    rng = np.random.default_rng(seed)
    omega = 0.05 * grid.project(rng.standard_normal((2, 64)))
    fr = interface_frame(omega, grid)
    assert np.allclose((fr.normal**2).sum(0), fr.arc**2)
    assert np.allclose((fr.tangent**2).sum(0), fr.arc**2)
    assert np.allclose((fr.normal * fr.tangent).sum(0), 0, atol=1e-14)


def test_certificate_trivial(disk2, annulus2, grid64):
    ale = solve_ale_map(np.zeros((2, 64)), annulus2, grid64)
    cert = certify_geometry(_field(disk2, np.zeros_like), np.zeros((2, 64)), ale, grid64)
    assert cert.min_det_b == pytest.approx(1.0) and cert.min_jac_f == pytest.approx(1.0) and cert.max_jac_f == pytest.approx(1.0)
    assert cert.min_tangent_norm == pytest.approx(1.0)
    assert cert.injectivity_ok and cert.clearance_ok and cert.ok and cert.violations() == []


def test_certificate_clearance_and_compression(disk2, annulus2, grid64):
    z = grid64.samples
    big = 1.2 * np.vstack([np.cos(z), np.sin(z)])
    ale = solve_ale_map(np.zeros((2, 64)), annulus2, grid64)
    cert = certify_geometry(_field(disk2, np.zeros_like), big, ale, grid64)
    assert not cert.clearance_ok and not cert.ok
    squash = _field(disk2, lambda x: -0.95 * x)
    cert = certify_geometry(squash, np.zeros((2, 64)), ale, grid64)
    assert cert.min_det_b < Thresholds().c0
    assert any("det" in v for v in cert.violations())


def test_certificate_pinch(disk2, annulus2, grid64):
    """Pull two opposite samples together so the curve nearly self-touches."""
    z = grid64.samples
    pinch = -0.98 * np.vstack([np.cos(z) * np.exp(-8 * np.sin(z) ** 2) * 0, np.sin(z) * np.abs(np.sin(z))])
    pinch = grid64.project(pinch)
    ale = solve_ale_map(np.zeros((2, 64)), annulus2, grid64)
    cert = certify_geometry(_field(disk2, np.zeros_like), pinch, ale, grid64)
    assert not cert.injectivity_ok


def test_path_length_examples():
    assert annulus_path_length(np.array([1.5, 0.0]), np.array([1.5, 0.0])) == 0.0
    th = 1.1
    p2 = 1.5 * np.array([math.cos(th), math.sin(th)])
    assert annulus_path_length(np.array([1.5, 0.0]), p2) == pytest.approx(1.5 * th)
    with pytest.raises(GeometryError):
        annulus_path_length(np.array([0.5, 0.0]), p2)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(1.0001, 1.9999),
    st.floats(0, 2 * math.pi),
    st.floats(1.0001, 1.9999),
    st.floats(0, 2 * math.pi),
)
def test_path_length_bounds(r1, t1, r2, t2):
    p1 = np.array([r1 * math.cos(t1), r1 * math.sin(t1)])
    p2 = np.array([r2 * math.cos(t2), r2 * math.sin(t2)])
    e = float(np.linalg.norm(p1 - p2))
    L = float(annulus_path_length(p1, p2))
    assert e * (1 - 1e-12) <= L <= 5 * e * (1 + 1e-12) + 1e-15


def test_curve_length_examples(disk2):
    poly = np.array([[0.0, 0.0], [0.3, 0.2], [-0.1, 0.5]])
    ident = _field(disk2, np.zeros_like)
    assert curve_length_under_map(ident, poly) == pytest.approx(polyline_length(poly))
    double = _field(disk2, lambda x: x.copy())
    assert curve_length_under_map(double, poly) == pytest.approx(2 * polyline_length(poly))
