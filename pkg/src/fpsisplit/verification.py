"""Property checks with pass/fail results.

Each check returns a ``CheckResult``.  The same functions back the
``verify`` subcommand (coarse sizes) and the acceptance test (full sizes).
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .biot_fluid import (
    PhysicalParams,
    StepData,
    assemble_step,
    coercive_closed_form,
    form_value,
    make_geometry,
    pressure_block_bound,
)
from .diagnostics import (
    dt_report,
    emit_energy_csv,
    h_report,
    monotonicity_violations,
)
from .driver import InitialData, RunConfig, Trajectory, discretization, initialize, run
from .geometry import (
    DeformationField,
    annulus_path_length,
    biot_jacobian,
    curve_length_under_map,
    interface_curve,
    interface_frame,
    lagrangian_map,
    max_map_gradient,
    polyline_length,
    solve_ale_map,
    transformed_gradient_biot,
)
from .mesh import INTERFACE, OUTER, build_disk_mesh, build_interface_grid
from .plate import plate_ledger, solve_plate_step
from .regularizer import Mollifier, build_regularization_operator, extend

# committed stress-test datum (also in data/stress_test.toml)
STRESS = InitialData(eta_radial=0.05, eta_shear=0.03, xi_rotation=0.2, u_swirl=0.3, p_amplitude=0.1)
STRESS_CONFIG = RunConfig(dt=0.5 / 32, T=0.5, delta=0.25, n_refine=2, M=64, K=16, initial=STRESS)
COARSE_CONFIG = RunConfig(dt=0.01, T=0.5, delta=0.25, n_refine=1, M=32, K=8, initial=STRESS)


@dataclass
class CheckResult:
    criterion: int | str
    name: str
    passed: bool
    detail: str
    elapsed: float = 0.0
    metrics: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.criterion}. {self.name}: {self.detail} ({self.elapsed:.1f}s)"


def _timed(criterion, name: str, budget: float, fn: Callable[[], tuple[bool, str, dict]]) -> CheckResult:
    t0 = time.perf_counter()
    ok, detail, metrics = fn()
    ok = bool(ok)
    elapsed = time.perf_counter() - t0
    if elapsed > budget:
        ok = False
        detail += f"; runtime {elapsed:.1f}s over budget {budget:.0f}s"
    return CheckResult(criterion, name, ok, detail, elapsed, metrics)


def _random_band(grid, rng, amplitude: float) -> np.ndarray:
    m = np.arange(grid.K + 1)
    coef = amplitude * (rng.standard_normal((2, grid.K + 1)) + 1j * rng.standard_normal((2, grid.K + 1))) / (1 + m) ** 2
    coef[:, 0] = coef[:, 0].real
    if 2 * grid.K == grid.M:
        coef[:, -1] = coef[:, -1].real
    return grid.from_coefficients(coef)


# ----------------------------------------------------------------------------
# 1. plate identity
# ----------------------------------------------------------------------------


def check_plate_identity(n_steps: int = 1000, seed: int = 0, budget: float = 10.0) -> CheckResult:
    def body():
        rng = np.random.default_rng(seed)
        grid = build_interface_grid(64, 16)
        worst = 0.0
        cases = [(h, dt) for h in (1.0, 0.1, 0.01) for dt in (0.1, 0.01)]
        for i in range(n_steps):
            h, dt = cases[i % len(cases)]
            w = _random_band(grid, rng, 1.0)
            z = _random_band(grid, rng, 1.0)
            w1, z1 = solve_plate_step(w, z, h, dt, grid)
            led = plate_ledger((w, z), (w1, z1), h, dt, grid)
            worst = max(worst, led.residual / max(1.0, led.energy_before))
        return worst <= 1e-11, f"max relative residual {worst:.2e} over {n_steps} steps (tol 1e-11)", {"max_residual": worst}

    return _timed(1, "plate-step energy equality", budget, body)


# ----------------------------------------------------------------------------
# 2. Biot/fluid identity
# ----------------------------------------------------------------------------


def regime_runs(base: RunConfig = COARSE_CONFIG, n_steps: int = 50) -> dict[str, Trajectory]:
    out = {}
    for name, visc in (("poroelastic", 0.0), ("poroviscoelastic", 1.0)):
        params = PhysicalParams(mu_v=visc, lam_v=visc)
        out[name] = run(base.replace(params=params, T=n_steps * base.dt))
    return out


def check_biot_fluid_identity(runs: dict[str, Trajectory] | None = None, n_steps: int = 50, budget: float = 120.0) -> CheckResult:
    holder: dict = {}

    def body():
        trajs = runs if runs is not None else regime_runs(n_steps=n_steps)
        holder["runs"] = trajs
        parts, ok = [], True
        metrics = {}
        for name, tr in trajs.items():
            worst = max((r.r_biotfluid for r in tr.records), default=0.0)
            complete = len(tr.records) == n_steps
            ok &= complete and worst <= 1e-9
            parts.append(f"{name} {len(tr.records)} steps max {worst:.2e}")
            metrics[name] = worst
        return ok, "; ".join(parts) + " (tol 1e-9)", metrics

    res = _timed(2, "Biot/fluid-step energy equality", budget, body)
    res.metrics["runs"] = holder.get("runs")
    return res


# ----------------------------------------------------------------------------
# 3. coercivity audit
# ----------------------------------------------------------------------------


def check_coercivity(config: RunConfig = COARSE_CONFIG, n_vectors: int = 20, seed: int = 1, budget: float = 30.0) -> CheckResult:
    def body():
        rng = np.random.default_rng(seed)
        traj = initialize(config)
        disc = traj.disc
        s = traj.states[0]
        dt = config.dt
        omega_next = s.omega + dt * _random_band(disc.grid, rng, 0.05)
        geom = make_geometry(disc, s.omega, omega_next, s.eta, dt, config.thresholds, ale=traj.ale[0])
        data = StepData(s.u, s.eta, s.eta_prev, s.p, s.zeta)
        system = assemble_step(disc, geom, data, config.params, dt)
        worst, bound_ok = 0.0, True
        for _ in range(n_vectors):
            u = rng.standard_normal(disc.n_u)
            u[disc.Vu.constrained] = 0.0
            eta = rng.standard_normal((disc.nd, 2))
            p = rng.standard_normal(disc.nd)
            a = form_value(system, u, eta, p)
            b = coercive_closed_form(system, u, eta, p)
            worst = max(worst, abs(a - b) / abs(b))
            lhs, rhs = pressure_block_bound(system, p)
            bound_ok &= lhs >= rhs
        ok = worst <= 1e-9 and bound_ok
        return ok, f"max relative mismatch {worst:.2e} (tol 1e-9); Darcy bound {'holds' if bound_ok else 'violated'}", {"max_mismatch": worst}

    return _timed(3, "coercivity formula audit", budget, body)


# ----------------------------------------------------------------------------
# 4. geometry oracles
# ----------------------------------------------------------------------------


def _central_weights(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Offsets and weights of the central first-derivative stencil."""
    k = order // 2
    offs = np.arange(-k, k + 1, dtype=float)
    V = np.vander(offs, increasing=True).T
    rhs = np.zeros(len(offs))
    rhs[1] = 1.0
    return offs, np.linalg.solve(V, rhs)


def check_geometry_oracles(seed: int = 2, budget: float = 30.0) -> CheckResult:
    def body():
        rng = np.random.default_rng(seed)
        disk = build_disk_mesh(2)
        grid = build_interface_grid(64, 8)
        X = disk.nodes
        eta = 0.05 * np.column_stack([np.sin(2 * X[:, 1]) + X[:, 0] ** 2, np.cos(X[:, 0] * X[:, 1])])
        field = DeformationField(disk, eta)
        P = X[disk.triangles]
        cent = P.mean(axis=1)
        eps = 1e-6
        # Lagrangian map gradient and Jacobian
        fd = np.stack(
            [(lagrangian_map(field, cent + eps * e) - lagrangian_map(field, cent - eps * e)) / (2 * eps) for e in np.eye(2)],
            axis=2,
        )
        err_F = np.abs(fd - field.deformation_gradient).max()
        err_J = np.abs(np.linalg.det(fd) - biot_jacobian(field)).max()
        # transformed gradient: grad f = (grad_b f) F
        f = np.sin(X[:, 0]) * X[:, 1]
        gb = transformed_gradient_biot(field, f)
        from .regularizer import extend as _extend

        fdf = np.stack([(_extend(disk, f, cent + eps * e) - _extend(disk, f, cent - eps * e)) / (2 * eps) for e in np.eye(2)], axis=1)
        err_gb = np.abs(np.einsum("ek,ekj->ej", gb, fd) - fdf).max()
        # ALE map gradient
        from .mesh import build_annulus_mesh

        ann = build_annulus_mesh(2)
        omega = _random_band(grid, rng, 0.05)
        ale = solve_ale_map(omega, ann, grid)
        Pa = ann.nodes[ann.triangles]
        ca = Pa.mean(axis=1)
        fda = np.stack([(ale(ca + eps * e) - ale(ca - eps * e)) / (2 * eps) for e in np.eye(2)], axis=2)
        err_ale = max(np.abs(fda - ale.grad).max(), np.abs(np.linalg.det(fda) - ale.jac).max())
        # interface frame against a high-order z-difference of the curve
        offs, wts = _central_weights(12)
        hz = 0.02
        z = grid.samples
        dcurve = sum(w * (np.vstack([np.cos(z + o * hz), np.sin(z + o * hz)]) + grid.evaluate(omega, z + o * hz)) for o, w in zip(offs, wts)) / hz
        fr = interface_frame(omega, grid)
        err_t = np.abs(fr.tangent - dcurve).max()
        err_n = np.abs(fr.normal - np.vstack([dcurve[1], -dcurve[0]])).max()
        # ALE trace boundary condition
        ids = ann.interface_nodes()
        zi = np.arctan2(ann.nodes[ids, 1], ann.nodes[ids, 0])
        err_trace = np.abs(ale.values[ids] - ann.nodes[ids] - grid.evaluate(omega, zi).T).max()
        outer = ann.nodes_with_tag(OUTER)
        err_trace = max(err_trace, np.abs(ale.values[outer] - ann.nodes[outer]).max())
        grad_err = max(err_F, err_J, err_gb, err_ale)
        frame_err = max(err_t, err_n)
        ok = grad_err <= 1e-6 and frame_err <= 1e-10 and err_trace <= 1e-12
        detail = f"gradient/Jacobian FD error {grad_err:.1e} (tol 1e-6); frame {frame_err:.1e} (tol 1e-10); ALE trace {err_trace:.1e} (tol 1e-12)"
        return ok, detail, {"grad": grad_err, "frame": frame_err, "trace": err_trace}

    return _timed(4, "geometry oracle equivalence", budget, body)


# ----------------------------------------------------------------------------
# 5. annulus path metric and curve lengths
# ----------------------------------------------------------------------------


def _annulus_points(rng, n: int) -> np.ndarray:
    r = rng.uniform(1.0, 2.0, n)
    r = np.clip(r, 1.0 + 1e-9, 2.0 - 1e-9)
    t = rng.uniform(0, 2 * np.pi, n)
    return np.column_stack([r * np.cos(t), r * np.sin(t)])


def check_path_metric(n_pairs: int = 10_000, n_maps: int = 100, seed: int = 3, budget: float = 10.0) -> CheckResult:
    def body():
        rng = np.random.default_rng(seed)
        a, b = _annulus_points(rng, n_pairs), _annulus_points(rng, n_pairs)
        L = annulus_path_length(a, b)
        E = np.linalg.norm(a - b, axis=1)
        bad = int(np.sum(L < E * (1 - 1e-12)) + np.sum(L > 5 * E * (1 + 1e-12)))
        ratio_max = float(np.max(L / E))
        from .mesh import build_annulus_mesh

        disk = build_disk_mesh(1)
        ann = build_annulus_mesh(1)
        grid = build_interface_grid(32, 6)
        curve_bad = 0
        for i in range(n_maps):
            if i % 2 == 0:
                mapping = solve_ale_map(_random_band(grid, rng, 0.05), ann, grid)
                steps = rng.integers(3, 12)
                r = rng.uniform(1.1, 1.9, steps)
                th = np.cumsum(rng.uniform(-0.2, 0.2, steps))
                poly = np.column_stack([r * np.cos(th), r * np.sin(th)])
            else:
                X = disk.nodes
                c = rng.standard_normal((2, 3)) * 0.05
                mapping = DeformationField(disk, np.column_stack([c[0, 0] * X[:, 0] ** 2 + c[0, 1] * X[:, 1], c[1, 0] * X[:, 0] * X[:, 1] + c[1, 2]]))
                steps = rng.integers(3, 12)
                rr = 0.9 * np.sqrt(rng.uniform(0, 1, steps))
                th = rng.uniform(0, 2 * np.pi, steps)
                poly = np.column_stack([rr * np.cos(th), rr * np.sin(th)])
            img = curve_length_under_map(mapping, poly)
            if img > max_map_gradient(mapping) * polyline_length(poly) * (1 + 1e-12):
                curve_bad += 1
        ok = bad == 0 and curve_bad == 0
        detail = f"{bad} path-length violations in {n_pairs} pairs (max ratio {ratio_max:.3f}); {curve_bad} curve-length violations in {n_maps} maps"
        return ok, detail, {"violations": bad, "curve_violations": curve_bad}

    return _timed(5, "annulus path metric and curve-length bound", budget, body)


# ----------------------------------------------------------------------------
# 6. regularizer
# ----------------------------------------------------------------------------


def brute_force_mollify(mesh, values: np.ndarray, x: np.ndarray, delta: float, n_r: int = 400, n_t: int = 800) -> float:
    """Convolution at x by a polar Gauss x trapezoid grid over the kernel ball."""
    from .mesh import gauss_interval

    g, w = gauss_interval(n_r)
    r = delta * g
    wr = delta * w * r
    t = 2 * np.pi * np.arange(n_t) / n_t
    pts = x[None, None, :] + r[:, None, None] * np.stack([np.cos(t), np.sin(t)], axis=1)[None, :, :]
    kern = Mollifier(delta)(pts - x)
    vals = extend(mesh, values, pts.reshape(-1, 2)).reshape(n_r, n_t)
    return float(np.sum(kern * vals * wr[:, None]) * 2 * np.pi / n_t)


def check_regularizer(n_refine: int = 2, delta: float = 0.25, n_oracle: int = 4, seed: int = 4, budget: float = 30.0) -> CheckResult:
    def body():
        rng = np.random.default_rng(seed)
        mesh = build_disk_mesh(n_refine)
        grid = build_interface_grid(64, 16)
        op = build_regularization_operator(mesh, grid, delta)
        X = mesh.nodes
        one = np.ones(mesh.n_nodes)
        err_c = max(np.abs(op.S_nodes @ one - 1).max(), np.abs(op.S_iface @ one - 1).max())
        ids = mesh.interface_nodes()
        inner_r = np.linalg.norm(X[ids], axis=1).min() * np.cos(np.pi / len(ids))
        interior = np.linalg.norm(X, axis=1) + delta < inner_r
        A = rng.standard_normal((2, 2))
        b = rng.standard_normal(2)
        aff = X @ A.T + b
        err_a = np.abs(op.nodal(aff)[interior] - aff[interior]).max()
        f = np.sin(2 * X[:, 0]) + X[:, 1] ** 2
        g = np.cos(X[:, 0] * X[:, 1])
        lin = np.abs(op.nodal(2.5 * f - 1.5 * g) - (2.5 * op.nodal(f) - 1.5 * op.nodal(g))).max()
        z = grid.samples
        probe = np.vstack([X[rng.choice(mesh.n_nodes, n_oracle, replace=False)], np.column_stack([np.cos(z[:2]), np.sin(z[:2])])])
        rows = np.vstack([op.S_nodes.toarray(), op.S_iface.toarray()])
        idx_nodes = [int(np.argmin(np.linalg.norm(X - p, axis=1))) for p in probe[:n_oracle]]
        ours = [rows[i] @ f for i in idx_nodes] + [op.S_iface[j] @ f for j in range(2)]
        ours = [float(np.ravel(v)[0]) for v in ours]
        brute = [brute_force_mollify(mesh, f, p, delta) for p in probe]
        err_o = max(abs(a - c) for a, c in zip(ours, brute))
        ok = err_c <= 1e-8 and err_a <= 1e-8 and err_o <= 1e-6 and lin <= 1e-13
        detail = f"constants {err_c:.1e}, affine {err_a:.1e} (tol 1e-8); brute force {err_o:.1e} (tol 1e-6); linearity {lin:.1e}"
        return ok, detail, {"constant": err_c, "affine": err_a, "oracle": err_o, "linearity": lin}

    return _timed(6, "regularizer reproduction and oracle", budget, body)


# ----------------------------------------------------------------------------
# 7-10. studies on the stress-test datum
# ----------------------------------------------------------------------------


def check_self_convergence(base: RunConfig = STRESS_CONFIG, budget: float = 600.0, holder: dict | None = None) -> CheckResult:
    def body():
        T = base.T
        dts = [T / 16, T / 32, T / 64, T / 128]
        trajs = [run(base.replace(dt=dt)) for dt in dts]
        rep = dt_report(dts, trajs)
        if holder is not None:
            holder["trajs"] = trajs
            holder["report"] = rep
        ok = all(rep.checks.values()) and all(t.outcome == "COMPLETE" for t in trajs)
        orders = rep.drift_orders
        # informational: order estimates with an O(dt) error, extrapolated
        extrapolated = 2 * orders[-1] - orders[-2] if len(orders) >= 2 else math.nan
        detail = (
            "Cauchy differences " + ", ".join(f"{d:.3e}" for d in rep.differences)
            + " ratios " + ", ".join(f"{r:.2f}" for r in rep.ratios)
            + " (min 1.5); drift orders " + ", ".join(f"{o:.3f}" for o in orders) + " (min 1)"
            + f", extrapolated {extrapolated:.3f}"
        )
        return ok, detail, {"ratios": rep.ratios, "drift_orders": orders, "checks": dict(rep.checks), "extrapolated_order": extrapolated}

    return _timed(7, "scheme self-convergence", budget, body)


def check_singular_limit(base: RunConfig = STRESS_CONFIG, hs=(1.0, 0.5, 0.25, 0.125, 0.0625), budget: float = 900.0, holder: dict | None = None) -> CheckResult:
    def body():
        trajs = [run(base.replace(params=PhysicalParams(**{**base.params.__dict__, "h": h}))) for h in hs]
        rep = h_report(list(hs), trajs)
        if holder is not None:
            holder["trajs"] = trajs
            holder["report"] = rep
        per_h = [r.plate_energy / h for r, h in zip(rep.runs, hs)]
        ok = all(rep.checks.values())
        detail = (
            f"horizons {'identical' if rep.checks['horizon_identical'] else 'differ'} ({rep.runs[0].horizon:g}); "
            f"plate energy / h spread {max(per_h) / min(per_h):.2f} (max 2); "
            "consecutive differences " + ", ".join(f"{d:.3e}" for d in rep.differences)
            + (" decreasing" if rep.checks["differences_decreasing"] else " NOT decreasing")
        )
        return ok, detail, {"checks": rep.checks, "differences": rep.differences, "plate_per_h": per_h}

    return _timed(8, "singular-limit study", budget, body)


def check_monotone(trajs: list[Trajectory], budget: float = 1.0) -> CheckResult:
    def body():
        bad = sum(len(monotonicity_violations(t.records)) for t in trajs)
        steps = sum(len(t.records) for t in trajs)
        return bad == 0, f"{bad} violations over {steps} steps in {len(trajs)} runs", {"violations": bad}

    return _timed(9, "monotone energy decay", budget, body)


def check_determinism(config: RunConfig, budget: float = 120.0) -> CheckResult:
    def body():
        with tempfile.TemporaryDirectory() as tmp:
            paths = []
            for k in range(2):
                discretization.cache_clear()
                paths.append(emit_energy_csv(run(config), Path(tmp) / f"energy_{k}.csv"))
            same = paths[0].read_bytes() == paths[1].read_bytes()
        return same, "energy CSVs bit-identical" if same else "energy CSVs differ", {}

    return _timed(10, "determinism", budget, body)


def coarse_suite() -> list[CheckResult]:
    """Module invariants on coarse meshes (the ``verify`` subcommand)."""
    results = [
        check_plate_identity(n_steps=240),
        check_geometry_oracles(),
        check_path_metric(n_pairs=2000, n_maps=20),
        check_regularizer(n_refine=1, delta=0.4, n_oracle=2),
        check_coercivity(n_vectors=5),
    ]
    bf = check_biot_fluid_identity(runs=regime_runs(n_steps=10), n_steps=10)
    results.append(bf)
    runs = bf.metrics.pop("runs") or {}
    results.append(check_monotone(list(runs.values())))
    results.append(check_determinism(COARSE_CONFIG.replace(T=5 * COARSE_CONFIG.dt)))
    return results
