"""Run orchestration: one scenario to disk, and concurrent parameter sweeps."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import logging
import math
import os
from pathlib import Path

import numpy as np

from .config import ConfigError, ScenarioConfig
from .diagnostics import compare_to_oracle, run_diagnostics, step_table
from .energy import total_energy
from .io import (atomic_write, header_block, snapshot_binary, snapshot_csv, write_json,
                 write_table)
from .jko import Trajectory, jko_step
from .reference import fv_evolve

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_DIAGNOSTICS = 0, 1, 2, 3

TRAJECTORY_COLUMNS = ["n", "t", "E_diff", "E_ext", "E_cpl", "E_total", "d2_step", "mass_u",
                      "mass_v", "L2_u", "L2_v", "Linf_u", "Linf_v", "M2_u", "M2_v",
                      "inner_residual", "inner_iterations", "el_residual_u", "el_residual_v"]


@dataclass
class RunResult:
    status: int
    out_dir: Path
    trajectory: Trajectory | None = None
    diagnostics: dict = field(default_factory=dict)
    oracle_gap: tuple = (float("nan"), float("nan"))
    error: str = ""

    @property
    def final_energy(self) -> float:
        if self.trajectory is None or not self.trajectory.energies:
            return float("nan")
        return self.trajectory.energies[-1].total


def _write_snapshot(out_dir: Path, z, n, t, header, fmt):
    if fmt in ("csv", "both"):
        atomic_write(out_dir / "snapshots" / f"step_{n:06d}.csv", snapshot_csv(z, n, t, header))
    if fmt in ("binary", "both"):
        atomic_write(out_dir / "snapshots" / f"step_{n:06d}.bin", snapshot_binary(z, n, t, header))


def run_scenario(cfg: ScenarioConfig, out_dir=None, strict: bool = False, progress=None) -> RunResult:
    """Run ``cfg`` and write its artifacts under ``out_dir``.

    Artifacts: ``config.yaml``, ``trajectory.csv``, ``snapshots/``,
    ``diagnostics.json`` and, with the oracle enabled, ``oracle_final.csv``.
    On a solver failure the steps completed so far are still written and the
    status is :data:`EXIT_SOLVER`.
    """
    out_dir = Path(out_dir) if out_dir is not None else cfg.output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    sha = cfg.sha256
    grid, U, V, z0, params = cfg.build()
    hdr = header_block("trajectory", sha, {"scenario": cfg.name, "m": params.m, "h": params.h,
                                           "lambda": params.lam, "grid": grid.to_dict()})
    atomic_write(out_dir / "config.yaml", cfg.to_yaml())
    out = cfg.data["output"]
    diag_cfg = cfg.data["diagnostics"]
    inner = cfg.inner_config()
    every, fmt = int(out["snapshot_every"]), out["snapshot_format"]
    snap_hdr = header_block("snapshot", sha, {"scenario": cfg.name})

    traj = Trajectory(states=[z0], params=params)
    traj.energies.append(total_energy(z0, params, U, V))
    if fmt != "none":
        _write_snapshot(out_dir, z0, 0, 0.0, snap_hdr, fmt)
    status, error = EXIT_OK, ""
    z = z0
    n_steps = cfg.n_steps
    el = bool(diag_cfg["el_residuals"])
    for n in range(1, n_steps + 1):
        try:
            rep = jko_step(z, params, U, V, inner, el_residuals=el)
            if not (np.all(np.isfinite(rep.z_next.u.values)) and np.all(np.isfinite(rep.z_next.v.values))):
                raise FloatingPointError("non-finite density after the inner solve")
        except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
            status, error = EXIT_SOLVER, f"step {n}: {type(exc).__name__}: {exc}"
            logger.error("solver failure at %s", error)
            break
        traj.states.append(rep.z_next)
        traj.reports.append(rep)
        traj.energies.append(rep.energy)
        z = rep.z_next
        if fmt != "none" and every > 0 and (n % every == 0 or n == n_steps):
            _write_snapshot(out_dir, z, n, n * params.h, snap_hdr, fmt)
        if progress is not None:
            progress(n, rep)
    write_table(out_dir / "trajectory.csv", step_table(traj), hdr, TRAJECTORY_COLUMNS)

    result = RunResult(status, out_dir, traj, error=error)
    report = {"status": "ok" if status == EXIT_OK else "solver_failure", "error": error,
              "n_steps_completed": traj.n_steps, "n_steps_requested": n_steps,
              "inner_nonconverged_steps": [i + 1 for i, r in enumerate(traj.reports) if not r.converged]}
    if status == EXIT_OK and cfg.data["oracle"]["enabled"]:
        t_end = traj.n_steps * params.h
        z_fv = fv_evolve(z0, params, U, V, t_end, cfg.fv_config())
        result.oracle_gap = compare_to_oracle(traj, z_fv, t_end)
        report["oracle"] = {"t": t_end, "flux_scheme": cfg.data["oracle"]["flux_scheme"],
                            "l1_gap_u": result.oracle_gap[0], "l1_gap_v": result.oracle_gap[1]}
        atomic_write(out_dir / "oracle_final.csv",
                     snapshot_csv(z_fv, traj.n_steps, t_end, header_block("oracle_snapshot", sha)))
    if diag_cfg["enabled"] and traj.n_steps >= 1:
        d = run_diagnostics(traj, U, V, lp_exponents=cfg.lp_exponents(),
                            energy_slack=float(diag_cfg["energy_slack"]), c_max=float(diag_cfg["c_max"]),
                            weak_form=bool(diag_cfg["weak_form"]), holder=bool(diag_cfg["holder"]))
        report["diagnostics"] = d.as_dict()
        result.diagnostics = report["diagnostics"]
        if strict and status == EXIT_OK and not d.passed:
            status = result.status = EXIT_DIAGNOSTICS
    write_json(out_dir / "diagnostics.json", report, header_block("diagnostics", sha))
    return result


# -- sweeps ---------------------------------------------------------------------------

SWEEP_COLUMNS = ["value", "status", "exit_code", "n_steps", "E_total_final", "oracle_gap_u",
                 "oracle_gap_v", "energy_monotone", "square_distance_bound", "mass_conserved",
                 "diagnostics_passed", "error"]


def _label(axis, value) -> str:
    return f"{axis}={value}".replace("/", "_")


def _sweep_row(yaml_text, base_dir, source, axis, value, out_dir, strict) -> dict:
    row = dict.fromkeys(SWEEP_COLUMNS, "")
    row.update(value=value, oracle_gap_u=float("nan"), oracle_gap_v=float("nan"),
               E_total_final=float("nan"), n_steps=0)
    try:
        cfg = ScenarioConfig.from_yaml(yaml_text, base_dir, source, overrides=[(axis, value)])
    except ConfigError as exc:
        row.update(status="config_error", exit_code=EXIT_CONFIG, error=" | ".join(exc.lines()))
        return row
    try:
        res = run_scenario(cfg, out_dir, strict=strict)
    except Exception as exc:  # isolate any failure to its own row
        row.update(status="solver_failure", exit_code=EXIT_SOLVER, error=f"{type(exc).__name__}: {exc}")
        return row
    d = res.diagnostics
    row.update(status={EXIT_OK: "ok", EXIT_SOLVER: "solver_failure",
                       EXIT_DIAGNOSTICS: "diagnostics_failure"}[res.status],
               exit_code=res.status, n_steps=res.trajectory.n_steps, E_total_final=res.final_energy,
               oracle_gap_u=res.oracle_gap[0], oracle_gap_v=res.oracle_gap[1], error=res.error)
    for key, col in (("energy_monotone", "energy_monotone"),
                     ("square_distance_bound", "square_distance_bound"),
                     ("mass_conserved", "mass_conserved"), ("passed", "diagnostics_passed")):
        row[col] = bool(d[key]) if key in d else ""
    return row


def run_sweep(cfg: ScenarioConfig, axis: str, values, out_dir=None, strict: bool = False,
              max_workers: int | None = None) -> tuple[list, Path]:
    """One run per value of the dotted key ``axis``, run concurrently.

    Returns the summary rows (in input order) and the path of ``summary.csv``.
    """
    values = list(values)
    root = Path(out_dir) if out_dir is not None else cfg.output_dir()
    root.mkdir(parents=True, exist_ok=True)
    text = cfg.to_yaml()
    jobs = [(text, str(cfg.base_dir), cfg.source, axis, v, str(root / _label(axis, v)), strict)
            for v in values]
    if not jobs:
        rows = []
    elif max_workers == 1 or len(jobs) == 1:
        rows = [_sweep_row(*j) for j in jobs]
    else:
        workers = max_workers or min(len(jobs), os.cpu_count() or 1)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_sweep_row, *j) for j in jobs]
            rows = []
            for j, fut in zip(jobs, futures):
                try:
                    rows.append(fut.result())
                except Exception as exc:
                    row = dict.fromkeys(SWEEP_COLUMNS, "")
                    row.update(value=j[4], status="solver_failure", exit_code=EXIT_SOLVER,
                               error=f"{type(exc).__name__}: {exc}", n_steps=0,
                               E_total_final=math.nan, oracle_gap_u=math.nan, oracle_gap_v=math.nan)
                    rows.append(row)
    hdr = header_block("sweep_summary", cfg.sha256, {"axis": axis, "values": values})
    path = write_table(root / "summary.csv", rows, hdr, SWEEP_COLUMNS)
    return rows, path
