"""Scenario configuration: YAML schema, validation and scenario construction.

A scenario file is a nested mapping::

    name: two_bumps
    seed: 0
    grid: {lower: 0.0, upper: 1.0, n_cells: 128}
    model: {m: 1.0, h: 0.01, n_steps: 100}
    potentials:
      U: {kind: quadratic, a: 1.0, center: 0.5}
      V: {kind: double_well, a: 50.0, centers: [0.3, 0.7]}
    initial:
      u: {kind: gaussian, bumps: [{center: 0.3, width: 0.1}]}
      v: {kind: uniform}

Every other section is optional and falls back to :data:`DEFAULTS`.
Validation errors carry the line of the offending key in the source file.
"""
from __future__ import annotations

import copy
import hashlib
import math
import os
from pathlib import Path

import numpy as np
import yaml

from .energy import ModelParams
from .grid import Grid, ScalarField, State, normalize
from .jko import InnerSolverConfig
from .reference import FLUX_SCHEMES, FVConfig

OUTPUT_ROOT_ENV = "PNP_JKO_OUTPUT_ROOT"

DEFAULTS = {
    "name": "scenario",
    "seed": 0,
    "grid": {"lower": 0.0, "upper": 1.0, "n_cells": 128},
    "model": {"m": 1.0, "h": 0.01, "n_steps": 10, "t_final": None},
    "potentials": {"U": {"kind": "zero"}, "V": {"kind": "zero"}},
    "initial": {"u": {"kind": "uniform"}, "v": {"kind": "uniform"}},
    "transport": {"mode": "exact_1d", "epsilon": None},
    "inner": {"method": "auto", "tol": None, "max_iter": None, "max_step": 1.0},
    "oracle": {"enabled": False, "flux_scheme": "scharfetter_gummel", "cfl_safety": 0.9,
               "dt_max": 1e-3},
    "diagnostics": {"enabled": True, "lp_exponents": [2.0], "weak_form": True, "holder": True,
                    "el_residuals": True, "energy_slack": 1e-8, "c_max": 10.0},
    "output": {"dir": "runs", "snapshot_every": 10, "snapshot_format": "csv"},
}

POTENTIAL_KINDS = ("zero", "quadratic", "double_well", "tabulated")
DENSITY_KINDS = ("uniform", "gaussian", "tabulated")
SNAPSHOT_FORMATS = ("csv", "binary", "both", "none")


class ConfigError(ValueError):
    """Collects validation problems as ``(dotted key, line, message)``."""

    def __init__(self, problems, source=None):
        self.problems = list(problems)
        self.source = source
        super().__init__("\n".join(self.lines()))

    def lines(self):
        where = f"{self.source}:" if self.source else "line "
        out = []
        for key, line, msg in self.problems:
            loc = f"{where}{line}: " if line is not None else ""
            out.append(f"{loc}{key}: {msg}")
        return out


# -- YAML with line numbers --------------------------------------------------------

def _line_map(node, prefix="", out=None) -> dict:
    """Dotted key -> 1-based line from a composed YAML node tree."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[key] = k.start_mark.line + 1
            _line_map(v, key, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            key = f"{prefix}.{i}"
            out[key] = v.start_mark.line + 1
            _line_map(v, key, out)
    return out


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("U", "V", "u", "v"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_dotted(data: dict, key: str, value) -> None:
    """Assign ``data[a][b][c] = value`` for ``key = "a.b.c"``, creating sections."""
    parts = key.split(".")
    node = data
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = value


def get_dotted(data: dict, key: str):
    node = data
    for p in key.split("."):
        node = node[p]
    return node


def parse_override(text: str):
    """``"model.h=1e-3"`` -> ``("model.h", 0.001)``; values are parsed as YAML."""
    if "=" not in text:
        raise ConfigError([(text, None, "override must look like key=value")])
    key, raw = text.split("=", 1)
    return key.strip(), _yaml_scalar(raw)


def _yaml_scalar(raw: str):
    val = yaml.safe_load(raw)
    # YAML 1.1 reads "1e-3" as a string
    if isinstance(val, str):
        try:
            return float(val)
        except ValueError:
            return val
    return val


# -- validation ---------------------------------------------------------------------

class _Checker:
    def __init__(self, lines):
        self.lines = lines
        self.problems = []

    def fail(self, key, msg):
        # missing keys are reported at the line of the nearest parent
        probe, line = key, self.lines.get(key)
        while line is None and "." in probe:
            probe = probe.rsplit(".", 1)[0]
            line = self.lines.get(probe)
        self.problems.append((key, line, msg))

    def number(self, d, key, path, lo=-math.inf, hi=math.inf, lo_open=False, integer=False,
               optional=False):
        val = d.get(key)
        full = f"{path}.{key}"
        if val is None:
            if not optional:
                self.fail(full, "is required")
            return None
        if isinstance(val, str):
            try:
                val = float(val)
                d[key] = val
            except ValueError:
                pass
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            self.fail(full, f"expected a number, got {val!r}")
            return None
        if integer and int(val) != val:
            self.fail(full, f"expected an integer, got {val!r}")
            return None
        if not math.isfinite(val) or val < lo or val > hi or (lo_open and val == lo):
            bracket = "(" if lo_open else "["
            self.fail(full, f"{val!r} outside {bracket}{lo}, {hi}]")
            return None
        return val

    def choice(self, d, key, path, options):
        val = d.get(key)
        if val not in options:
            self.fail(f"{path}.{key}", f"{val!r} is not one of {list(options)}")
        return val

    def flag(self, d, key, path):
        if not isinstance(d.get(key), bool):
            self.fail(f"{path}.{key}", f"expected true/false, got {d.get(key)!r}")


def _check_point(chk, val, dim, key):
    try:
        pt = np.asarray(val, dtype=float)
    except (TypeError, ValueError):
        chk.fail(key, f"expected a number or list of numbers, got {val!r}")
        return
    if pt.size not in (1, dim) or not np.all(np.isfinite(pt)):
        chk.fail(key, f"expected {dim} finite coordinate(s), got {val!r}")


def _check_file(chk, spec, key, base_dir):
    f = spec.get("file")
    if f is None and "values" not in spec:
        chk.fail(key, "tabulated data needs 'file' or 'values'")
    elif f is not None and not _resolve(f, base_dir).is_file():
        chk.fail(f"{key}.file", f"file not found: {f}")


def _validate(data: dict, lines: dict, base_dir: Path) -> None:
    chk = _Checker(lines)
    unknown = set(data) - set(DEFAULTS)
    for k in sorted(unknown):
        chk.fail(k, "unknown section")
    if not isinstance(data.get("name"), str) or not data["name"]:
        chk.fail("name", "expected a non-empty string")
    seed = data.get("seed")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        chk.fail("seed", f"expected a nonnegative integer, got {seed!r}")

    g = data["grid"]
    dim = 1
    try:
        lower, upper, n = (np.atleast_1d(g[k]) for k in ("lower", "upper", "n_cells"))
        dim = max(len(lower), len(upper), len(n))
        if dim not in (1, 2):
            chk.fail("grid", f"only 1-D and 2-D grids are supported, got dim={dim}")
        Grid.uniform(g["lower"], g["upper"], g["n_cells"])
    except (KeyError, TypeError, ValueError) as exc:
        chk.fail("grid", str(exc))

    m = data["model"]
    chk.number(m, "m", "model", lo=1.0)
    chk.number(m, "h", "model", lo=0.0, lo_open=True)
    if m.get("t_final") is not None:
        chk.number(m, "t_final", "model", lo=0.0)
    else:
        chk.number(m, "n_steps", "model", lo=0, integer=True)

    for name in ("U", "V"):
        spec = data["potentials"].get(name)
        key = f"potentials.{name}"
        if not isinstance(spec, dict):
            chk.fail(key, "expected a mapping with a 'kind'")
            continue
        kind = chk.choice(spec, "kind", key, POTENTIAL_KINDS)
        if kind == "quadratic":
            chk.number(spec, "a", key, optional=True)
            _check_point(chk, spec.get("center", 0.5), dim, f"{key}.center")
        elif kind == "double_well":
            chk.number(spec, "a", key, optional=True)
            c = spec.get("centers")
            if not isinstance(c, list) or len(c) != 2:
                chk.fail(f"{key}.centers", "expected a list of two well centres")
            else:
                for i, ci in enumerate(c):
                    _check_point(chk, ci, dim, f"{key}.centers.{i}")
        elif kind == "tabulated":
            _check_file(chk, spec, key, base_dir)

    for name in ("u", "v"):
        spec = data["initial"].get(name)
        key = f"initial.{name}"
        if not isinstance(spec, dict):
            chk.fail(key, "expected a mapping with a 'kind'")
            continue
        kind = chk.choice(spec, "kind", key, DENSITY_KINDS)
        if kind == "gaussian":
            bumps = spec.get("bumps")
            if not isinstance(bumps, list) or not bumps:
                chk.fail(f"{key}.bumps", "expected a non-empty list of bumps")
            else:
                for i, b in enumerate(bumps):
                    bk = f"{key}.bumps.{i}"
                    if not isinstance(b, dict):
                        chk.fail(bk, "expected a mapping with center and width")
                        continue
                    _check_point(chk, b.get("center"), dim, f"{bk}.center")
                    chk.number(b, "width", bk, lo=0.0, lo_open=True)
                    chk.number(b, "weight", bk, lo=0.0, lo_open=True, optional=True)
        elif kind == "tabulated":
            _check_file(chk, spec, key, base_dir)
        chk.number(spec, "noise", key, lo=0.0, hi=1.0, optional=True)

    t = data["transport"]
    chk.choice(t, "mode", "transport", ("exact_1d", "entropic"))
    if t.get("epsilon") is not None:
        chk.number(t, "epsilon", "transport", lo=0.0, lo_open=True)
    if t.get("mode") == "exact_1d" and dim != 1:
        chk.fail("transport.mode", "exact_1d transport needs a 1-D grid")

    i = data["inner"]
    chk.choice(i, "method", "inner", ("auto", "newton", "lbfgs", "proximal"))
    if i.get("tol") is not None:
        chk.number(i, "tol", "inner", lo=0.0, lo_open=True)
    if i.get("max_iter") is not None:
        chk.number(i, "max_iter", "inner", lo=1, integer=True)
    chk.number(i, "max_step", "inner", lo=0.0, hi=1.0, lo_open=True)
    if i.get("method") == "newton" and t.get("mode") != "exact_1d":
        chk.fail("inner.method", "newton needs transport.mode = exact_1d")
    if i.get("method") == "proximal" and t.get("mode") != "entropic":
        chk.fail("inner.method", "proximal needs transport.mode = entropic")

    o = data["oracle"]
    chk.flag(o, "enabled", "oracle")
    chk.choice(o, "flux_scheme", "oracle", FLUX_SCHEMES)
    chk.number(o, "cfl_safety", "oracle", lo=0.0, hi=1.0, lo_open=True)
    chk.number(o, "dt_max", "oracle", lo=0.0, lo_open=True)

    d = data["diagnostics"]
    for k in ("enabled", "weak_form", "holder", "el_residuals"):
        chk.flag(d, k, "diagnostics")
    ps = d.get("lp_exponents")
    if not isinstance(ps, list):
        chk.fail("diagnostics.lp_exponents", "expected a list")
    else:
        for j, p in enumerate(ps):
            if p in ("inf", ".inf"):
                continue
            if isinstance(p, bool) or not isinstance(p, (int, float)) or not p > 1:
                chk.fail(f"diagnostics.lp_exponents.{j}", f"exponent must be > 1 or inf, got {p!r}")
    chk.number(d, "energy_slack", "diagnostics", lo=0.0)
    chk.number(d, "c_max", "diagnostics", lo=0.0, lo_open=True)

    out = data["output"]
    if not isinstance(out.get("dir"), str) or not out["dir"]:
        chk.fail("output.dir", "expected a path")
    chk.number(out, "snapshot_every", "output", lo=0, integer=True)
    chk.choice(out, "snapshot_format", "output", SNAPSHOT_FORMATS)

    if chk.problems:
        raise ConfigError(chk.problems)


# -- the config object -----------------------------------------------------------------

class ScenarioConfig:
    """Validated scenario; ``data`` holds the full nested mapping with defaults."""

    def __init__(self, data: dict, base_dir=".", source=None, lines=None):
        self.base_dir = Path(base_dir)
        self.source = source
        merged = _merge(DEFAULTS, data)
        try:
            _validate(merged, lines or {}, self.base_dir)
        except ConfigError as exc:
            raise ConfigError(exc.problems, source) from None
        self.data = merged

    # construction
    @classmethod
    def from_yaml(cls, text: str, base_dir=".", source=None, overrides=()) -> "ScenarioConfig":
        try:
            node = yaml.compose(text, Loader=yaml.SafeLoader)
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = mark.line + 1 if mark is not None else None
            raise ConfigError([("<yaml>", line, str(exc).splitlines()[0])], source) from None
        raw = {} if raw is None else raw
        if not isinstance(raw, dict):
            raise ConfigError([("<root>", 1, "top level must be a mapping")], source)
        lines = _line_map(node) if node is not None else {}
        for key, value in overrides:
            set_dotted(raw, key, value)
            lines.setdefault(key, None)
        return cls(raw, base_dir, source, lines)

    @classmethod
    def load(cls, path, overrides=()) -> "ScenarioConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError([("<file>", None, f"config file not found: {path}")])
        return cls.from_yaml(path.read_text(), path.parent, str(path), overrides)

    def with_overrides(self, overrides) -> "ScenarioConfig":
        data = copy.deepcopy(self.data)
        for key, value in overrides:
            set_dotted(data, key, value)
        return ScenarioConfig(data, self.base_dir, self.source)

    # serialization
    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True, default_flow_style=False)

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.to_yaml().encode()).hexdigest()

    def __eq__(self, other):
        return isinstance(other, ScenarioConfig) and self.to_yaml() == other.to_yaml()

    def __repr__(self):
        return f"ScenarioConfig(name={self.name!r}, sha256={self.sha256[:12]})"

    # accessors
    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def n_steps(self) -> int:
        m = self.data["model"]
        if m.get("t_final") is not None:
            return int(round(m["t_final"] / m["h"]))
        return int(m["n_steps"])

    @property
    def t_final(self) -> float:
        return self.n_steps * float(self.data["model"]["h"])

    def grid(self) -> Grid:
        g = self.data["grid"]
        return Grid.uniform(g["lower"], g["upper"], g["n_cells"])

    def inner_config(self) -> InnerSolverConfig:
        i, t = self.data["inner"], self.data["transport"]
        return InnerSolverConfig(method=i["method"], transport=t["mode"], tol=i["tol"],
                                 max_iter=i["max_iter"], epsilon=t["epsilon"],
                                 max_step=float(i["max_step"]))

    def fv_config(self) -> FVConfig:
        o = self.data["oracle"]
        return FVConfig(cfl_safety=float(o["cfl_safety"]), dt_max=float(o["dt_max"]),
                        flux_scheme=o["flux_scheme"])

    def lp_exponents(self) -> list:
        return [math.inf if p in ("inf", ".inf") else float(p)
                for p in self.data["diagnostics"]["lp_exponents"]]

    def output_dir(self) -> Path:
        out = Path(self.data["output"]["dir"])
        if out.is_absolute():
            return out
        return Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / out

    def build(self):
        """``(grid, U, V, z0, params)`` for this scenario."""
        grid = self.grid()
        U = potential_field(self.data["potentials"]["U"], grid, self.base_dir)
        V = potential_field(self.data["potentials"]["V"], grid, self.base_dir)
        rng = np.random.default_rng(self.seed)
        u0 = initial_density(self.data["initial"]["u"], grid, self.base_dir, rng)
        v0 = initial_density(self.data["initial"]["v"], grid, self.base_dir, rng)
        params = ModelParams.from_potentials(self.data["model"]["m"], self.data["model"]["h"], U, V)
        return grid, U, V, State(u0, v0), params


def _resolve(path, base_dir) -> Path:
    p = Path(path)
    return p if p.is_absolute() else Path(base_dir) / p


def _tabulated(spec: dict, grid: Grid, base_dir) -> np.ndarray:
    if "values" in spec:
        vals = np.asarray(spec["values"], dtype=float)
    else:
        vals = np.loadtxt(_resolve(spec["file"], base_dir), delimiter=",", comments="#", ndmin=1)
    if vals.size != int(np.prod(grid.shape)):
        raise ConfigError([("tabulated", None, f"{vals.size} values for a grid of shape {grid.shape}")])
    return vals.reshape(grid.shape)


def _sq_dist(grid: Grid, center) -> np.ndarray:
    c = np.broadcast_to(np.atleast_1d(np.asarray(center, dtype=float)), (grid.dim,))
    return sum((x - ci) ** 2 for x, ci in zip(grid.coords, c))


def potential_field(spec: dict, grid: Grid, base_dir=".") -> ScalarField:
    """``zero``, ``quadratic`` (``a |x - c|^2``), ``double_well``
    (``a |x - c1|^2 |x - c2|^2``) or ``tabulated`` cell values."""
    kind = spec["kind"]
    a = float(spec.get("a", 1.0))
    if kind == "zero":
        vals = np.zeros(grid.shape)
    elif kind == "quadratic":
        vals = a * _sq_dist(grid, spec.get("center", 0.5))
    elif kind == "double_well":
        c1, c2 = spec["centers"]
        vals = a * _sq_dist(grid, c1) * _sq_dist(grid, c2)
    elif kind == "tabulated":
        vals = _tabulated(spec, grid, base_dir)
    else:
        raise ValueError(f"unknown potential kind {kind!r}")
    return ScalarField(vals, grid)


def initial_density(spec: dict, grid: Grid, base_dir=".", rng=None):
    """Unit-mass initial density; ``noise`` multiplies by ``1 + noise * U(-1, 1)``."""
    kind = spec["kind"]
    if kind == "uniform":
        vals = np.ones(grid.shape)
    elif kind == "gaussian":
        vals = np.zeros(grid.shape)
        for b in spec["bumps"]:
            w = float(b["width"])
            vals += float(b.get("weight", 1.0)) * np.exp(-_sq_dist(grid, b["center"]) / (2 * w * w))
    elif kind == "tabulated":
        vals = _tabulated(spec, grid, base_dir)
        if np.any(vals < 0) or vals.sum() <= 0:
            raise ConfigError([("tabulated", None, "initial density must be nonnegative and nonzero")])
    else:
        raise ValueError(f"unknown density kind {kind!r}")
    noise = float(spec.get("noise", 0.0) or 0.0)
    if noise > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        vals = vals * (1 + noise * rng.uniform(-1, 1, grid.shape))
    return normalize(vals, grid)
