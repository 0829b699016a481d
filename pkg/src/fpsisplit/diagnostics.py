"""Energy ledgers, refinement and parameter sweeps, and field export."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .biot_fluid import Discretization, FullState, PhysicalParams, biot_l2sq, fluid_l2sq
from .driver import COMPLETE, PARTIAL, EnergyRecord, InitialData, RunConfig, Trajectory, kinematic_drift, run
from .plate import plate_energy

CSV_FORMAT = "%.17g"
# relative roundoff allowance for E^{n+1} <= E^{n+1/2} <= E^n
MONOTONE_SLACK = 1e-12


# ----------------------------------------------------------------------------
# energy CSV
# ----------------------------------------------------------------------------


def emit_energy_csv(traj: Trajectory, path: str | Path) -> Path:
    """One row per accepted step; columns are ``EnergyRecord.columns()``."""
    path = Path(path)
    cols = EnergyRecord.columns()
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for rec in traj.records:
            vals = rec.values()
            fh.write(",".join([str(int(vals[0]))] + [CSV_FORMAT % v for v in vals[1:]]) + "\n")
    return path


def read_energy_csv(path: str | Path) -> list[EnergyRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != EnergyRecord.columns():
            raise ValueError(f"unexpected energy CSV header in {path}")
        return [EnergyRecord(int(row[0]), *(float(v) for v in row[1:])) for row in reader]


def residual_statistics(records: Sequence[EnergyRecord]) -> dict[str, float]:
    rp = np.array([r.r_plate for r in records]) if records else np.zeros(1)
    rb = np.array([r.r_biotfluid for r in records]) if records else np.zeros(1)
    return {
        "max_r_plate": float(rp.max()),
        "mean_r_plate": float(rp.mean()),
        "max_r_biotfluid": float(rb.max()),
        "mean_r_biotfluid": float(rb.mean()),
    }


def monotonicity_violations(records: Sequence[EnergyRecord], slack: float = MONOTONE_SLACK) -> list[int]:
    """Steps where E^{n+1} <= E^{n+1/2} <= E^n fails beyond roundoff."""
    bad = []
    for r in records:
        if r.E_half > r.E_n + slack * max(r.E_n, 1e-300) or r.E_next > r.E_half + slack * max(r.E_half, 1e-300):
            bad.append(r.n)
    return bad


def ledger_closure(records: Sequence[EnergyRecord]) -> float:
    """|E^0 - E^N - sum(D + jumps)| relative to max(1, E^0)."""
    if not records:
        return 0.0
    total = sum(r.dissipation + r.jumps for r in records)
    e0 = records[0].E_n
    return abs(e0 - records[-1].E_next - total) / max(1.0, e0)


# ----------------------------------------------------------------------------
# run summaries and sweeps
# ----------------------------------------------------------------------------


def terminal_distance(disc: Discretization, a: FullState, b: FullState) -> float:
    """L2 distance of (u, eta, p) on the reference domains."""
    ones = np.ones(disc.annulus.n_triangles)
    return math.sqrt(fluid_l2sq(disc, a.u - b.u, ones) + biot_l2sq(disc, a.eta - b.eta) + biot_l2sq(disc, a.p - b.p))


def terminal_norm(disc: Discretization, s: FullState) -> dict[str, float]:
    ones = np.ones(disc.annulus.n_triangles)
    return {
        "u": math.sqrt(fluid_l2sq(disc, s.u, ones)),
        "eta": math.sqrt(biot_l2sq(disc, s.eta)),
        "p": math.sqrt(biot_l2sq(disc, s.p)),
    }


@dataclass
class RunSummary:
    value: float
    outcome: str
    horizon: float
    steps: int
    terminal: dict[str, float]
    drift_max: float
    plate_energy: float
    plate_share: float
    max_r_plate: float
    max_r_biotfluid: float
    monotone_violations: int
    failure: str = ""


def summarize_run(value: float, traj: Trajectory) -> RunSummary:
    disc = traj.disc
    fin = traj.final
    stats = residual_statistics(traj.records)
    e_plate = plate_energy(fin.omega, fin.zeta, traj.config.params.h, disc.grid)
    e_total = traj.energies()[-1]
    return RunSummary(
        value=value,
        outcome=traj.outcome,
        horizon=traj.certified_horizon,
        steps=len(traj.records),
        terminal=terminal_norm(disc, fin),
        drift_max=float(kinematic_drift(traj).max()),
        plate_energy=e_plate,
        plate_share=e_plate / e_total if e_total > 0 else 0.0,
        max_r_plate=stats["max_r_plate"],
        max_r_biotfluid=stats["max_r_biotfluid"],
        monotone_violations=len(monotonicity_violations(traj.records)),
        failure=traj.failure,
    )


@dataclass
class SweepReport:
    parameter: str
    values: list[float]
    runs: list[RunSummary]
    differences: list[float] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    orders: list[float] = field(default_factory=list)
    drift_orders: list[float] = field(default_factory=list)
    checks: dict[str, bool] = field(default_factory=dict)

    @property
    def outcome(self) -> str:
        return COMPLETE if all(r.outcome == COMPLETE for r in self.runs) else PARTIAL

    def to_dict(self) -> dict:
        return asdict(self) | {"outcome": self.outcome}


def _ratios(seq: Sequence[float]) -> list[float]:
    return [a / b if b > 0 else math.inf for a, b in zip(seq[:-1], seq[1:])]


def _orders(seq: Sequence[float]) -> list[float]:
    return [math.log2(r) if 0 < r < math.inf else math.nan for r in _ratios(seq)]


def consecutive_differences(trajs: Sequence[Trajectory]) -> list[float]:
    return [terminal_distance(a.disc, a.final, b.final) for a, b in zip(trajs[:-1], trajs[1:])]


def h_report(hs: Sequence[float], trajs: Sequence[Trajectory]) -> SweepReport:
    """Singular-limit report; pure function of the trajectories."""
    runs = [summarize_run(h, t) for h, t in zip(hs, trajs)]
    diffs = consecutive_differences(trajs)
    per_h = [r.plate_energy / h for r, h in zip(runs, hs)]
    positive = [v for v in per_h if v > 0]
    linear = bool(not positive or max(positive) <= 2.0 * min(positive))
    checks = {
        "horizon_identical": len({round(r.horizon, 12) for r in runs}) == 1,
        "plate_energy_linear_in_h": linear,
        "differences_decreasing": all(b <= a for a, b in zip(diffs[:-1], diffs[1:])),
    }
    return SweepReport("h", list(hs), runs, diffs, _ratios(diffs), _orders(diffs), [], checks)


def h_sweep(base: RunConfig, hs: Sequence[float], data: InitialData | None = None) -> tuple[SweepReport, list[Trajectory]]:
    for h in hs:
        if not 0 < h <= 1:
            raise ValueError(f"h must lie in (0, 1], got {h}")
    trajs = [run(base.replace(params=_with(base.params, h=h)), data) for h in hs]
    return h_report(hs, trajs), trajs


def dt_report(dts: Sequence[float], trajs: Sequence[Trajectory], min_ratio: float = 1.5) -> SweepReport:
    runs = [summarize_run(dt, t) for dt, t in zip(dts, trajs)]
    diffs = consecutive_differences(trajs)
    drifts = [r.drift_max for r in runs]
    ratios = _ratios(diffs)
    drift_orders = _orders(drifts)
    checks = {
        "cauchy_decreasing": all(b < a for a, b in zip(diffs[:-1], diffs[1:])) or all(d == 0 for d in diffs),
        "cauchy_ratio": all(r >= min_ratio for r in ratios) or all(d == 0 for d in diffs),
        "drift_order_ge_1": all(o >= 1.0 for o in drift_orders) or all(d == 0 for d in drifts),
    }
    return SweepReport("dt", list(dts), runs, diffs, ratios, _orders(diffs), drift_orders, checks)


def dt_refinement(base: RunConfig, levels: int = 4, data: InitialData | None = None) -> tuple[SweepReport, list[Trajectory]]:
    """Runs at dt, dt/2, ... (``levels`` runs) and reports Cauchy orders."""
    if levels < 3:
        raise ValueError("at least three refinement levels are needed")
    dts = [base.dt / 2**k for k in range(levels)]
    trajs = [run(base.replace(dt=dt), data) for dt in dts]
    return dt_report(dts, trajs), trajs


def delta_report(deltas: Sequence[float], trajs: Sequence[Trajectory]) -> SweepReport:
    runs = [summarize_run(d, t) for d, t in zip(deltas, trajs)]
    checks = {
        "ledger_closes": all(r.max_r_biotfluid <= 1e-9 and r.max_r_plate <= 1e-9 for r in runs),
        # observational only
        "horizon_nonincreasing": all(b.horizon <= a.horizon for a, b in zip(runs[:-1], runs[1:])),
    }
    return SweepReport("delta", list(deltas), runs, consecutive_differences(trajs), [], [], [], checks)


def delta_sweep(base: RunConfig, deltas: Sequence[float] = (0.4, 0.2, 0.1), data: InitialData | None = None) -> tuple[SweepReport, list[Trajectory]]:
    trajs = [run(base.replace(delta=d), data) for d in deltas]
    return delta_report(deltas, trajs), trajs


def _with(params: PhysicalParams, **changes) -> PhysicalParams:
    from dataclasses import replace

    return replace(params, **changes)


# ----------------------------------------------------------------------------
# field export (legacy VTK, ASCII)
# ----------------------------------------------------------------------------


def _write_vtk(path: Path, points: np.ndarray, cells: np.ndarray, point_data: dict[str, np.ndarray]) -> None:
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nfpsisplit field export\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(points)} double\n")
        for x, y in points:
            fh.write(f"{float(x)!r} {float(y)!r} 0.0\n")
        fh.write(f"CELLS {len(cells)} {4 * len(cells)}\n")
        for a, b, c in cells:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {len(cells)}\n" + "5\n" * len(cells))
        fh.write(f"POINT_DATA {len(points)}\n")
        for name, vals in point_data.items():
            if vals.ndim == 1:
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                fh.writelines(f"{float(v)!r}\n" for v in vals)
            else:
                fh.write(f"VECTORS {name} double\n")
                fh.writelines(f"{float(a)!r} {float(b)!r} 0.0\n" for a, b in vals)


def read_vtk(path: str | Path) -> dict[str, np.ndarray]:
    """Parse a file written by ``export_fields``; keys: points, cells, fields."""
    lines = Path(path).read_text().splitlines()
    out: dict[str, np.ndarray] = {}
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        if not parts:
            i += 1
            continue
        key = parts[0]
        if key == "POINTS":
            n = int(parts[1])
            out["points"] = np.array([[float(v) for v in lines[i + 1 + k].split()[:2]] for k in range(n)])
            i += n + 1
        elif key == "CELLS":
            n = int(parts[1])
            out["cells"] = np.array([[int(v) for v in lines[i + 1 + k].split()[1:]] for k in range(n)])
            i += n + 1
        elif key == "SCALARS":
            n = len(out["points"])
            out[parts[1]] = np.array([float(lines[i + 2 + k]) for k in range(n)])
            i += n + 2
        elif key == "VECTORS":
            n = len(out["points"])
            out[parts[1]] = np.array([[float(v) for v in lines[i + 1 + k].split()[:2]] for k in range(n)])
            i += n + 1
        else:
            i += 1
    return out


def export_fields(disc: Discretization, state: FullState, ale_values: np.ndarray, path: str | Path) -> list[Path]:
    """Write reference and mapped meshes with nodal fields.

    Files: biot_reference.vtk, biot_mapped.vtk (nodes moved by eta),
    fluid_reference.vtk, fluid_mapped.vtk (nodes moved by the ALE map;
    velocity at mesh vertices) and interface.txt (z, omega, zeta samples).
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    nv = disc.annulus.n_nodes
    u = np.column_stack([state.u[:nv], state.u[disc.nu_s : disc.nu_s + nv]])
    biot = {"eta": state.eta, "xi": state.xi, "p": state.p}
    files = []
    for name, pts, cells, data in (
        ("biot_reference.vtk", disc.disk.nodes, disc.disk.triangles, biot),
        ("biot_mapped.vtk", disc.disk.nodes + state.eta, disc.disk.triangles, biot),
        ("fluid_reference.vtk", disc.annulus.nodes, disc.annulus.triangles, {"u": u}),
        ("fluid_mapped.vtk", ale_values, disc.annulus.triangles, {"u": u}),
    ):
        _write_vtk(out / name, pts, cells, data)
        files.append(out / name)
    iface = np.column_stack([disc.grid.samples, state.omega.T, state.zeta.T])
    np.savetxt(out / "interface.txt", iface, fmt=CSV_FORMAT, header="z omega_x omega_y zeta_x zeta_y")
    files.append(out / "interface.txt")
    return files


def export_trajectory_fields(traj: Trajectory, path: str | Path, n: int = -1) -> list[Path]:
    idx = n % len(traj.states)
    return export_fields(traj.disc, traj.states[idx], traj.ale[idx].values, path)
