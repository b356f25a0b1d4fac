"""Run orchestration behind the command line: simulate, mms_verify, extension_test.

Every entry point returns an integer exit code (see ``EXIT_CODES``) and
writes its artifacts below the configured output directory, which the
``NSFLAB_OUTPUT_DIR`` environment variable overrides.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, manufactured_from
from .constitutive import FluidParams
from .elliptic import SolverError, attach_extensions, extend_temperature, extend_velocity
from .grid import write_snapshot
from .mms import BoundaryIncompatible, MMSProblem, mms_source, spatial_dt, spatial_study, temporal_study
from .monitor import CSV_COLUMNS, Monitor, compatibility_gate, compatibility_residuals
from .norms import lq_norm, sup_norm, w1inf_norm
from .state import State
from .stepper import StepError, StepperConfig, run

logger = logging.getLogger(__name__)

OUTPUT_ENV = "NSFLAB_OUTPUT_DIR"

EXIT_CODES = {
    "completed": 0,
    "verification-failed": 1,
    "config-error": 2,
    "hitting-time": 3,
    "blowup-suspected": 4,
    "positivity-loss": 5,
    "compatibility-failed": 6,
    "solver-error": 7,
}


def output_dir(cfg: RunConfig) -> Path:
    path = Path(os.environ.get(OUTPUT_ENV) or cfg.output["dir"])
    path.mkdir(parents=True, exist_ok=True)
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set)):
        return [_jsonable(v) for v in (sorted(obj) if isinstance(obj, set) else obj)]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_diagnostics(path: Path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow(r.row())


def state_norms(state: State) -> dict:
    out = {"t": state.t, "amplitude": sup_norm(state.rho, state.theta, state.u),
           "w1inf_theta_u": w1inf_norm(state.theta, state.u), "mass": state.grid.integrate(state.rho.values)}
    for name in ("rho", "theta", "u"):
        f = getattr(state, name)
        out[name] = {"min": float(f.values.min()), "max": float(f.values.max()),
                     "l2": lq_norm(f, 2), "sup": sup_norm(f)}
    return out


@dataclass
class Problem:
    """Everything a run needs, assembled from a configuration at one resolution."""

    params: FluidParams
    bd: object
    initial: State
    stepper: StepperConfig


def build_problem(cfg: RunConfig) -> Problem:
    """Extensions are attached to the boundary data; an ``mms`` block adds its forcing."""
    grid = cfg.grid
    if cfg.mms is not None:
        fs = mms_source(manufactured_from(cfg), cfg.fluid_params(), grid)
        prob = MMSProblem.build(fs, grid)
        sc = prob.config(cfg.stepper["dt"], cfg.stepper["t_end"], cfg.mms["source_scale"],
                         cfg.stepper["p"], cfg.stepper["q"], cfl_safety=cfg.stepper["cfl_safety"])
        return Problem(prob.params, prob.bd, prob.initial, sc)
    params = cfg.fluid_params()
    bd = cfg.boundary_data()
    initial = cfg.initial_state()
    attach_extensions(bd, params, initial.theta)
    return Problem(params, bd, initial, cfg.stepper_config())


def run_simulation(cfg: RunConfig) -> int:
    """Extensions, compatibility gate, monitored run; writes diagnostics.csv, summary.json and snapshots."""
    out = output_dir(cfg)
    summary: dict = {"mode": "simulate", "grid": {"counts": cfg.grid.counts, "extents": cfg.grid.extents}}
    try:
        prob = build_problem(cfg)
    except (SolverError, ValueError, BoundaryIncompatible) as e:
        summary.update(status="solver-error", message=str(e))
        write_json(out / "summary.json", summary)
        logger.error("setup failed: %s", e)
        return EXIT_CODES["solver-error"]

    residuals = compatibility_residuals(prob.initial.rho, prob.initial.theta, prob.initial.u, prob.bd, prob.params)
    summary["compatibility"] = residuals
    failed = compatibility_gate(residuals, cfg.monitor.compat_thresholds)
    if failed:
        summary.update(status="compatibility-failed", message="; ".join(failed))
        write_json(out / "summary.json", summary)
        logger.error("compatibility gate: %s", "; ".join(failed))
        return EXIT_CODES["compatibility-failed"]

    every = cfg.output["snapshot_every"]
    snapdir = out / "snapshots"
    hooks = []
    if every > 0:
        snapdir.mkdir(exist_ok=True)
        _snapshot(snapdir, 0, prob.initial)
        hooks.append(lambda k, s: _snapshot(snapdir, k, s) if k % every == 0 else None)

    monitor = Monitor(prob.params, prob.bd, cfg.monitor)
    try:
        res = run(prob.initial, prob.params, prob.bd, prob.stepper, monitor=monitor, hooks=hooks, store_every=None)
    except StepError as e:
        write_diagnostics(out / "diagnostics.csv", monitor.records)
        summary.update(status="solver-error", message=str(e), step=e.step_index)
        write_json(out / "summary.json", summary)
        logger.error("%s", e)
        return EXIT_CODES["solver-error"]

    if every > 0 and res.steps % every != 0:
        _snapshot(snapdir, res.steps, res.final)
    write_diagnostics(out / "diagnostics.csv", res.records)
    flags = sorted({f for r in res.records for f in r.flags})
    recs = res.records
    summary.update(
        status=res.status,
        exit_code=EXIT_CODES[res.status],
        message=res.message,
        steps=res.steps,
        M=monitor.M,
        T_M=res.T_M,
        flags=flags,
        initial=state_norms(prob.initial),
        final=state_norms(res.final),
        mass_drift=abs(res.final.grid.integrate(res.final.rho.values) - recs[0].mass) if recs else None,
        min_principle={"rho_ok": all(r.rho_ok for r in recs),
                       "theta_ok": None if any(r.theta_ok is None for r in recs) else all(r.theta_ok for r in recs)},
        max_energy_residual={"momentum": max((abs(r.energy_residual_momentum) for r in recs), default=0.0),
                             "heat": max((abs(r.energy_residual_heat) for r in recs), default=0.0)},
    )
    write_json(out / "summary.json", summary)
    return EXIT_CODES[res.status]


def _snapshot(snapdir: Path, k: int, s: State) -> None:
    write_snapshot(snapdir / f"step_{k:07d}.nsff", {"rho": s.rho, "theta": s.theta, "u": s.u}, s.t)


# ---------------------------------------------------------------------------
# MMS verification


def _setup(cfg: RunConfig) -> dict:
    g = cfg.grid
    return {"extents": g.extents, "topology": g.topology,
            "boundary": {f: bc.value for f, bc in g.boundary_map.items()}}


def level_counts(base: int, levels: int) -> list[int]:
    return [base * 2**j for j in range(levels)]


def mms_verify(cfg: RunConfig, levels: int = 3) -> int:
    """Refinement study on the declared manufactured solution; writes convergence.csv and mms_summary.json.

    Nonzero exit when an observed order at the finest pair falls short of
    ``expected_order``; all-zero error columns count as attained.
    """
    if cfg.mms is None:
        raise ConfigError(["mode mms_verify needs an 'mms' section"])
    if levels < 2:
        raise ConfigError([f"--levels must be at least 2, got {levels}"])
    out = output_dir(cfg)
    m = cfg.mms
    setup = _setup(cfg)
    counts = level_counts(cfg.grid.counts[0], levels)
    try:
        fs = mms_source(manufactured_from(cfg), cfg.fluid_params(), cfg.grid)
        rows = spatial_study(fs, setup, counts, m["t_end"], m["dt_coeff"], m["source_scale"],
                             cfl_safety=cfg.stepper["cfl_safety"])
        trows = []
        if m.get("temporal"):
            tb = m["temporal"]
            trows = temporal_study(fs, setup, int(tb["n"]), m["t_end"], [float(v) for v in tb["dts"]],
                                   m["source_scale"], cfl_safety=cfg.stepper["cfl_safety"])
    except (SolverError, StepError, RuntimeError, BoundaryIncompatible) as e:
        write_json(out / "mms_summary.json", {"status": "solver-error", "message": str(e)})
        logger.error("%s", e)
        return EXIT_CODES["solver-error"]

    fields = ("rho", "theta", "u")
    with open(out / "convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["study", "level", "n", "h", "dt"] + [f"err_{k}" for k in fields] + [f"order_{k}" for k in fields])
        for study, rs in (("space", rows), ("time", trows)):
            for r in rs:
                w.writerow([study, r.level, r.n, repr(r.h), repr(r.dt)]
                           + [repr(r.errors[k]) for k in fields]
                           + [repr(r.orders[k]) if k in r.orders else "" for k in fields])

    expected = m["expected_order"]
    verdict = {}
    for k in fields:
        verdict[k] = _attained(rows, k, expected.get(k))
    if trows:
        verdict["time"] = all(_attained(trows, k, expected.get("time", 0.9)) for k in fields)
    ok = all(v is not False for v in verdict.values())
    write_json(out / "mms_summary.json", {
        "status": "passed" if ok else "failed",
        "counts": counts,
        "expected_order": expected,
        "observed": {k: rows[-1].orders.get(k) for k in fields},
        "observed_time": {k: trows[-1].orders.get(k) for k in fields} if len(trows) > 1 else None,
        "attained": verdict,
    })
    for r in rows:
        logger.info("n=%d errors %s orders %s", r.n, r.errors, r.orders)
    return EXIT_CODES["completed"] if ok else EXIT_CODES["verification-failed"]


def _attained(rows, key, expected) -> bool | None:
    if expected is None:
        return None
    if all(r.errors[key] == 0.0 for r in rows):
        return True
    last = [r.orders.get(key) for r in rows if r.orders.get(key) is not None]
    return bool(last) and bool(np.isfinite(last[-1])) and last[-1] >= expected


def mms_solver_leg(cfg: RunConfig, n: int | None = None):
    """The run mms_verify performs at one level (default: the configured counts), for replay comparisons."""
    n = n or cfg.grid.counts[0]
    from .mms import make_grid

    grid = make_grid(_setup(cfg), n)
    fs = mms_source(manufactured_from(cfg), cfg.fluid_params(grid), grid)
    prob = MMSProblem.build(fs, grid)
    dt = spatial_dt(max(grid.spacing), cfg.mms["t_end"], cfg.mms["dt_coeff"])
    return prob.run(dt, cfg.mms["t_end"], cfg.mms["source_scale"], cfl_safety=cfg.stepper["cfl_safety"],
                    store_every=None)


# ---------------------------------------------------------------------------
# extension test


def extension_test(cfg: RunConfig) -> int:
    """Solve both lifting problems and compare with the optional closed-form oracles."""
    out = output_dir(cfg)
    params = cfg.fluid_params()
    bd = cfg.boundary_data()
    initial = cfg.initial_state()
    report: dict = {"mode": "extension_test", "counts": cfg.grid.counts}
    try:
        th = extend_temperature(bd, initial.theta)
        u = extend_velocity(bd, params)
    except (SolverError, ValueError) as e:
        report.update(status="solver-error", message=str(e))
        write_json(out / "extension_report.json", report)
        return EXIT_CODES["solver-error"]
    m = cfg.grid.mesh
    report["theta_ext"] = {"min": float(th.values.min()), "max": float(th.values.max())}
    report["u_ext"] = {"sup": sup_norm(u)}
    ok = True
    ext = cfg.extension_test or {}
    tol = ext.get("tol", 1e-4)
    if ext.get("theta_exact") is not None:
        err = float(np.abs(th.values - ext["theta_exact"](*m)).max())
        report["theta_sup_error"] = err
        ok &= err <= tol
    if ext.get("u_exact") is not None:
        exact = np.stack([c(*m) for c in ext["u_exact"]])
        err = float(np.abs(u.values - exact).max())
        report["u_sup_error"] = err
        ok &= err <= tol
    report["tol"] = tol
    report["status"] = "passed" if ok else "failed"
    write_json(out / "extension_report.json", report)
    return EXIT_CODES["completed"] if ok else EXIT_CODES["verification-failed"]


def execute(cfg: RunConfig, levels: int | None = None) -> int:
    if cfg.mode == "simulate":
        return run_simulation(cfg)
    if cfg.mode == "mms_verify":
        return mms_verify(cfg, levels or 3)
    return extension_test(cfg)
