"""Command-line interface: ``pnp-jko run|sweep|validate|compare``.

Exit codes: 0 ok, 1 configuration error, 2 solver failure, 3 diagnostics
failure (only with ``--strict``). Relative output directories are resolved
against ``$PNP_JKO_OUTPUT_ROOT`` when it is set.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys

import numpy as np

from .config import ConfigError, ScenarioConfig, _yaml_scalar, parse_override
from .io import read_table
from .runner import EXIT_CONFIG, EXIT_DIAGNOSTICS, EXIT_OK, run_scenario, run_sweep


def _load(args) -> ScenarioConfig:
    overrides = [parse_override(s) for s in args.set or []]
    return ScenarioConfig.load(args.config, overrides)


def _parse_values(text: str) -> list:
    text = text.strip().strip("[]")
    return [_yaml_scalar(v) for v in text.split(",") if v.strip()]


def cmd_validate(args) -> int:
    cfg = _load(args)
    print(f"{args.config}: ok ({cfg.n_steps} steps, grid {cfg.grid().shape}, sha256 {cfg.sha256[:16]})")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args)

    def progress(n, rep):
        if args.verbose:
            print(f"step {n:5d}  E={rep.energy.total:.10g}  kkt={rep.inner_residual:.2e}  it={rep.inner_iterations}")

    res = run_scenario(cfg, args.output, strict=args.strict, progress=progress)
    d = res.diagnostics
    print(f"wrote {res.out_dir}  ({res.trajectory.n_steps} steps, E_final={res.final_energy:.12g})")
    if res.error:
        print(f"solver failure: {res.error}", file=sys.stderr)
    if d:
        print(f"diagnostics: {'pass' if d['passed'] else 'FAIL'}")
    if not math.isnan(res.oracle_gap[0]):
        print(f"oracle L1 gap: u={res.oracle_gap[0]:.3e} v={res.oracle_gap[1]:.3e}")
    return res.status


def cmd_sweep(args) -> int:
    cfg = _load(args)
    values = _parse_values(args.values)
    rows, path = run_sweep(cfg, args.axis, values, args.output, strict=args.strict,
                           max_workers=args.workers)
    for r in rows:
        print(f"{args.axis}={r['value']}: {r['status']}  E_final={r['E_total_final']}  "
              f"gap=({r['oracle_gap_u']}, {r['oracle_gap_v']})")
    print(f"summary: {path}")
    if args.strict and any(r["exit_code"] != EXIT_OK for r in rows):
        return EXIT_DIAGNOSTICS
    return EXIT_OK


def cmd_compare(args) -> int:
    ha, a = read_table(args.traj_a)
    hb, b = read_table(args.traj_b)
    if ha.get("config_sha256") != hb.get("config_sha256"):
        print("note: trajectories come from different configurations")
    common = [c for c in a if c in b and isinstance(a[c], np.ndarray)]
    worst = 0.0
    if len(a.get("n", [])) != len(b.get("n", [])):
        print(f"row counts differ: {len(a.get('n', []))} vs {len(b.get('n', []))}")
    for c in common:
        k = min(len(a[c]), len(b[c]))
        diff = np.abs(a[c][:k] - b[c][:k])
        both_nan = np.isnan(a[c][:k]) & np.isnan(b[c][:k])
        dmax = float(np.max(np.where(both_nan, 0.0, diff))) if k else 0.0
        worst = max(worst, dmax) if not math.isnan(dmax) else math.inf
        print(f"{c:18s} max|diff| = {dmax:.3e}")
    same = worst <= args.tol and len(a.get("n", [])) == len(b.get("n", []))
    print("identical within tolerance" if same else "trajectories differ")
    return EXIT_DIAGNOSTICS if (args.strict and not same) else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pnp-jko", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, output=True):
        sp.add_argument("config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key by dotted path, e.g. model.h=1e-3")
        if output:
            sp.add_argument("-o", "--output", help="output directory (default: output.dir)")
            sp.add_argument("--strict", action="store_true", help="exit 3 if a diagnostic fails")

    sp = sub.add_parser("run", help="run one scenario")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="run one scenario per value of a config key")
    common(sp)
    sp.add_argument("--axis", required=True, help="dotted config key, e.g. model.h")
    sp.add_argument("--values", required=True, help="comma separated list, may be empty")
    sp.add_argument("--workers", type=int, default=None)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("validate", help="check a config without running it")
    common(sp, output=False)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("compare", help="column-wise difference of two trajectory CSVs")
    sp.add_argument("traj_a")
    sp.add_argument("traj_b")
    sp.add_argument("--tol", type=float, default=0.0)
    sp.add_argument("--strict", action="store_true", help="exit 3 if the trajectories differ")
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for line in exc.lines():
            print(line, file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
