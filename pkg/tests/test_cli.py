import json
import subprocess
import sys

import numpy as np
import pytest

from pnp_jko import runner
from pnp_jko.cli import main
from pnp_jko.config import OUTPUT_ROOT_ENV, ScenarioConfig
from pnp_jko.io import read_snapshot, read_table

CONFIG = """\
name: cli_minimal
seed: 3
grid: {lower: 0.0, upper: 1.0, n_cells: 48}
model: {m: 1.0, h: 0.01, n_steps: 10}
potentials:
  U: {kind: quadratic, a: 1.0, center: 0.5}
  V: {kind: double_well, a: 20.0, centers: [0.3, 0.7]}
initial:
  u: {kind: gaussian, bumps: [{center: 0.3, width: 0.08}], noise: 0.05}
  v: {kind: uniform}
diagnostics: {lp_exponents: [2.0, .inf]}
output: {dir: out, snapshot_every: 5, snapshot_format: both}
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "scenario.yaml"
    path.write_text(CONFIG)
    return path


def test_run_writes_artifacts(config, tmp_path):
    out = tmp_path / "run"
    assert main(["run", str(config), "-o", str(out)]) == 0
    hdr, cols = read_table(out / "trajectory.csv")
    assert len(cols["n"]) == 11
    assert np.all(np.diff(cols["E_total"]) <= 0)
    assert hdr["artifact"] == "trajectory" and len(hdr["config_sha256"]) == 64
    for name in ("step_000000", "step_000005", "step_000010"):
        assert (out / "snapshots" / f"{name}.csv").is_file()
        assert (out / "snapshots" / f"{name}.bin").is_file()
    _, z = read_snapshot(out / "snapshots" / "step_000010.bin")
    assert abs(z.u.mass - 1) <= 1e-10
    report = json.loads((out / "diagnostics.json").read_text())
    assert report["header"]["config_sha256"] == hdr["config_sha256"]
    assert report["diagnostics"]["passed"] is True
    assert (out / "config.yaml").read_text().startswith("diagnostics:")


def test_runs_are_bit_identical(config, tmp_path):
    main(["run", str(config), "-o", str(tmp_path / "a")])
    main(["run", str(config), "-o", str(tmp_path / "b")])
    for name in ("trajectory.csv", "diagnostics.json", "snapshots/step_000010.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_lp_check_marked_inapplicable(config, tmp_path):
    out = tmp_path / "inap"
    assert main(["run", str(config), "-o", str(out), "--set", "model.h=0.5",
                 "--set", "model.n_steps=2"]) == 0
    lp = json.loads((out / "diagnostics.json").read_text())["diagnostics"]["lp_propagation"]
    assert lp["2.0"]["status"] == "inapplicable"


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: bad\nmodel:\n  m: 0.5\n  h: -1\n")
    assert main(["run", str(bad)]) == 1
    err = capsys.readouterr().err
    assert f"{bad}:3: model.m" in err and f"{bad}:4: model.h" in err
    assert main(["validate", str(tmp_path / "missing.yaml")]) == 1


def test_validate(config, capsys):
    assert main(["validate", str(config), "--set", "grid.n_cells=64"]) == 0
    assert "ok" in capsys.readouterr().out


def test_output_root_env(config, tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    assert main(["run", str(config), "--set", "model.n_steps=1"]) == 0
    assert (tmp_path / "root" / "out" / "trajectory.csv").is_file()


def test_solver_failure_keeps_partial_artifacts(config, tmp_path, monkeypatch):
    real = runner.jko_step
    calls = {"n": 0}

    def flaky(*a, **kw):
        calls["n"] += 1
        if calls["n"] == 4:
            raise FloatingPointError("injected")
        return real(*a, **kw)

    monkeypatch.setattr(runner, "jko_step", flaky)
    out = tmp_path / "fail"
    assert main(["run", str(config), "-o", str(out)]) == 2
    _, cols = read_table(out / "trajectory.csv")
    assert len(cols["n"]) == 4
    report = json.loads((out / "diagnostics.json").read_text())
    assert report["status"] == "solver_failure" and "injected" in report["error"]


def test_strict_diagnostics_failure(config, tmp_path):
    args = ["run", str(config), "-o", str(tmp_path / "s"), "--set", "diagnostics.c_max=0.5"]
    assert main(args) == 0
    assert main(args + ["--strict"]) == 3


def test_sweep_over_m(config, tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep", str(config), "-o", str(out), "--axis", "model.m", "--values", "1,2,3",
                 "--set", "output.snapshot_format=none", "--workers", "2"]) == 0
    _, cols = read_table(out / "summary.csv")
    assert list(cols["value"]) == [1.0, 2.0, 3.0]
    assert list(cols["energy_monotone"]) == [1.0] * 3
    assert (out / "model.m=2" / "trajectory.csv").is_file()


def test_sweep_over_h_oracle_gap_decreases(tmp_path):
    cfg = tmp_path / "sw.yaml"
    cfg.write_text("""\
name: sweep_h
grid: {lower: 0.0, upper: 1.0, n_cells: 64}
model: {m: 1.0, h: 0.004, t_final: 0.1}
potentials:
  U: {kind: quadratic, a: 2.0, center: 0.5}
  V: {kind: quadratic, a: 1.5, center: 0.4}
initial:
  u: {kind: gaussian, bumps: [{center: 0.3, width: 0.1}]}
  v: {kind: gaussian, bumps: [{center: 0.7, width: 0.1}]}
oracle: {enabled: true}
diagnostics: {weak_form: false, holder: false}
output: {snapshot_format: none}
""")
    rows, _ = runner.run_sweep(ScenarioConfig.load(cfg), "model.h",
                               [4e-3, 2e-3, 1e-3], tmp_path / "sw")
    gaps = [max(r["oracle_gap_u"], r["oracle_gap_v"]) for r in rows]
    assert gaps[0] > gaps[1] > gaps[2]


def test_sweep_isolates_bad_rows(config, tmp_path):
    out = tmp_path / "iso"
    assert main(["sweep", str(config), "-o", str(out), "--axis", "model.m",
                 "--values", "1,0.5", "--workers", "1"]) == 0
    _, cols = read_table(out / "summary.csv")
    assert cols["status"] == ["ok", "config_error"]


def test_empty_sweep(config, tmp_path):
    out = tmp_path / "empty"
    assert main(["sweep", str(config), "-o", str(out), "--axis", "model.h", "--values", ""]) == 0
    hdr, cols = read_table(out / "summary.csv")
    assert hdr["artifact"] == "sweep_summary"
    assert all(len(c) == 0 for c in cols.values())


def test_compare(config, tmp_path, capsys):
    main(["run", str(config), "-o", str(tmp_path / "a")])
    main(["run", str(config), "-o", str(tmp_path / "b"), "--set", "seed=9"])
    a, b = tmp_path / "a" / "trajectory.csv", tmp_path / "b" / "trajectory.csv"
    assert main(["compare", str(a), str(a), "--strict"]) == 0
    assert "identical within tolerance" in capsys.readouterr().out
    assert main(["compare", str(a), str(b)]) == 0
    assert main(["compare", str(a), str(b), "--strict"]) == 3


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "pnp_jko.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "sweep" in res.stdout
