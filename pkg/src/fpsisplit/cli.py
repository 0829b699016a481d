"""Command line entry point.

Exit codes: 0 success, 2 run stopped early (certificate failure) without
``--allow-partial``, 1 error or failed verification.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

from .config import ConfigError, apply_override, dump_config, effective_config, load_config, normalize, sweep_settings, to_run_config
from .diagnostics import delta_report, dt_report, emit_energy_csv, export_trajectory_fields, h_report, summarize_run
from .driver import COMPLETE, PARTIAL, RunConfig, run
from .biot_fluid import StepError

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2
COMMANDS = ("run", "sweep-h", "sweep-dt", "sweep-delta", "verify", "export")
WORKERS_ENV = "FPSISPLIT_WORKERS"

log = logging.getLogger("fpsisplit")


class UsageError(Exception):
    pass


@dataclass
class CommandSpec:
    command: str
    config_path: Path | None
    overrides: list[str] = field(default_factory=list)
    out: Path = Path("out")
    allow_partial: bool = False
    step: int = -1
    config: dict = field(default_factory=dict)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # raise instead of exiting
        raise UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fpsisplit", description="Split-step moving-interface solver with exact energy ledgers.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, default=None, help="TOML config (default: bundled stress-test datum)")
        s.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        s.add_argument("--out", type=Path, default=Path("out"))
        s.add_argument("--allow-partial", action="store_true")
        if name == "export":
            s.add_argument("--step", type=int, default=-1, help="time level to export (default: last)")
    return p


def default_config_path() -> Path:
    return Path(str(resources.files("fpsisplit") / "data" / "stress_test.toml"))


def parse(args: Sequence[str]) -> CommandSpec:
    """Validate arguments and the effective configuration."""
    ns = _build_parser().parse_args(list(args))
    path = ns.config
    cfg = load_config(path if path is not None else default_config_path())
    for item in ns.overrides:
        apply_override(cfg, item)
    to_run_config(cfg)  # type and invariant check
    return CommandSpec(ns.command, path, ns.overrides, ns.out, ns.allow_partial, getattr(ns, "step", -1), cfg)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _map_runs(configs: list[RunConfig]):
    if _workers() > 1 and len(configs) > 1:
        with ThreadPoolExecutor(_workers()) as pool:
            return list(pool.map(run, configs))
    return [run(c) for c in configs]


def _json(obj) -> str:
    def clean(o):
        if isinstance(o, float) and not math.isfinite(o):
            return str(o)
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        return o

    return json.dumps(clean(obj), indent=2, default=lambda o: o.item() if hasattr(o, "item") else str(o))


def _status(outcomes: list[str], allow_partial: bool) -> int:
    if all(o == COMPLETE for o in outcomes) or allow_partial:
        return EXIT_OK
    return EXIT_PARTIAL


def _echo(spec: CommandSpec) -> None:
    spec.out.mkdir(parents=True, exist_ok=True)
    (spec.out / "effective_config.toml").write_text(dump_config(effective_config(spec.config)))


def _cmd_run(spec: CommandSpec) -> int:
    cfg = to_run_config(spec.config)
    traj = run(cfg)
    emit_energy_csv(traj, spec.out / "energy.csv")
    summary = summarize_run(cfg.dt, traj)
    (spec.out / "summary.json").write_text(_json(summary.__dict__))
    print(f"{traj.outcome}: {len(traj.records)} steps, horizon {traj.certified_horizon:g}, E {traj.energies()[0]:.6e} -> {traj.energies()[-1]:.6e}")
    if traj.outcome == PARTIAL:
        print(f"certificate failure at t={traj.breakdown_time:g}: {traj.failure}")
    return _status([traj.outcome], spec.allow_partial)


def _sweep(spec: CommandSpec, name: str, values: list[float], configs: list[RunConfig], report_fn) -> int:
    trajs = _map_runs(configs)
    for v, t in zip(values, trajs):
        stem = f"{name}={v:g}"
        emit_energy_csv(t, spec.out / f"energy_{stem}.csv")
        (spec.out / f"report_{stem}.json").write_text(_json(summarize_run(v, t).__dict__))
    rep = report_fn(values, trajs)
    (spec.out / "summary.json").write_text(_json(rep.to_dict()))
    for r in rep.runs:
        print(f"{name}={r.value:g}: {r.outcome}, horizon {r.horizon:g}, drift {r.drift_max:.3e}")
    for key, ok in rep.checks.items():
        print(f"  {key}: {'yes' if ok else 'no'}")
    return _status([r.outcome for r in rep.runs], spec.allow_partial)


def _cmd_sweep_h(spec: CommandSpec) -> int:
    base = to_run_config(spec.config)
    hs = sweep_settings(spec.config)["h"]
    for h in hs:
        if not 0 < h <= 1:
            raise ConfigError(f"sweep h values must lie in (0, 1], got {h}")
    configs = [base.replace(params=replace(base.params, h=h)) for h in hs]
    return _sweep(spec, "h", hs, configs, h_report)


def _cmd_sweep_dt(spec: CommandSpec) -> int:
    base = to_run_config(spec.config)
    levels = sweep_settings(spec.config)["dt_levels"]
    if levels < 3:
        raise ConfigError("sweep.dt_levels must be at least 3")
    dts = [base.dt / 2**k for k in range(levels)]
    return _sweep(spec, "dt", dts, [base.replace(dt=dt) for dt in dts], dt_report)


def _cmd_sweep_delta(spec: CommandSpec) -> int:
    base = to_run_config(spec.config)
    deltas = sweep_settings(spec.config)["delta"]
    return _sweep(spec, "delta", deltas, [base.replace(delta=d) for d in deltas], delta_report)


def _cmd_export(spec: CommandSpec) -> int:
    traj = run(to_run_config(spec.config))
    files = export_trajectory_fields(traj, spec.out / "fields", spec.step)
    emit_energy_csv(traj, spec.out / "energy.csv")
    print(f"{traj.outcome}: wrote {len(files)} field files to {spec.out / 'fields'}")
    return _status([traj.outcome], spec.allow_partial)


def _cmd_verify(spec: CommandSpec) -> int:
    from .verification import coarse_suite

    results = coarse_suite()
    width = max(len(r.name) for r in results)
    print(f"{'check':<{width}}  result  detail")
    for r in results:
        print(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.detail}")
    failed = [r for r in results if not r.passed]
    (spec.out / "verify.json").write_text(_json([{"name": r.name, "passed": r.passed, "detail": r.detail} for r in results]))
    return EXIT_OK if not failed else EXIT_ERROR


HANDLERS = {
    "run": _cmd_run,
    "sweep-h": _cmd_sweep_h,
    "sweep-dt": _cmd_sweep_dt,
    "sweep-delta": _cmd_sweep_delta,
    "verify": _cmd_verify,
    "export": _cmd_export,
}


def execute(spec: CommandSpec) -> int:
    _echo(spec)
    return HANDLERS[spec.command](spec)


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = parse(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        return execute(spec)
    except (ConfigError, StepError, ValueError, OSError) as exc:
        print(f"error during {spec.command}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
