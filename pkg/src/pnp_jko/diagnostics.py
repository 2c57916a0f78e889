"""Post-hoc checks of a computed trajectory against the a-priori estimates.

Every check returns the measured slack alongside its verdict, so a pass can
always be traced back to a number.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
import json
import math

import numpy as np

from .elliptic import ibp_identity_check, solve_poisson_neumann
from .energy import diffusion_density
from .grid import Grid, State, _vals, lp_norm, second_moment
from .transport import product_distance_sq

SCHEMA_VERSION = "1.0"


# -- energy and distance -----------------------------------------------------------

def check_energy_monotonicity(traj, slack: float = 1e-8):
    """Return ``(ok, max_increase, n_violations)`` over consecutive steps."""
    E = np.array([e.total for e in traj.energies])
    inc = np.diff(E)
    worst = float(inc.max()) if inc.size else 0.0
    n_bad = int(np.sum(inc > slack))
    return n_bad == 0, worst, n_bad


def check_square_distance(traj):
    """Slack of ``sum d^2/(2h) <= E(z0) - min_n E(z_n) + sum inner residuals``."""
    E = np.array([e.total for e in traj.energies])
    h = traj.params.h
    lhs = sum(r.step_distance_sq for r in traj.reports) / (2 * h)
    rhs = E[0] - E.min() + sum(r.inner_residual for r in traj.reports)
    slack = float(rhs - lhs)
    return slack >= 0, slack


def check_mass(traj, tol: float = 1e-10):
    worst = max(max(abs(z.u.mass - 1), abs(z.v.mass - 1)) for z in traj.states)
    return worst <= tol, float(worst)


def fit_holder_constant(traj, max_lag_fraction: float = 0.25, mode: str | None = None,
                        epsilon: float | None = None, max_pairs: int = 4000) -> dict:
    """Fit ``d(z(t1), z(t2)) ~ C sqrt(t2 - t1 + h)`` by least squares.

    Pairs with ``t2 - t1 <= max_lag_fraction * T`` are used; if there are more
    than ``max_pairs`` the pair list is thinned with a fixed stride.
    """
    h = traj.params.h
    N = traj.n_steps
    mode = mode or ("exact_1d" if traj.grid.dim == 1 else "entropic")
    max_lag = max(1, int(math.floor(max_lag_fraction * N)))
    pairs = [(i, j) for i in range(N + 1) for j in range(i + 1, min(N, i + max_lag) + 1)]
    if len(pairs) > max_pairs:
        pairs = pairs[:: int(math.ceil(len(pairs) / max_pairs))]
    if not pairs:
        return {"C": float("nan"), "C_max": float("nan"), "n_pairs": 0}
    d = np.array([math.sqrt(max(product_distance_sq(traj.states[j], traj.states[i], mode, epsilon), 0.0))
                  for i, j in pairs])
    s = np.array([math.sqrt((j - i) * h + h) for i, j in pairs])
    C = float(np.dot(d, s) / np.dot(s, s))
    return {"C": C, "C_max": float(np.max(d / s)), "n_pairs": len(pairs)}


# -- L^p propagation -----------------------------------------------------------------

@dataclass
class LpReport:
    p: float
    status: str
    factor_bound: float = float("nan")
    step_ratios: list = field(default_factory=list)
    slack: float = float("nan")
    continuous_C: float = float("nan")

    @property
    def ok(self) -> bool:
        return self.status != "fail"


def _lp_sum(z: State, p: float) -> float:
    """``||u||_p^p + ||v||_p^p``."""
    return lp_norm(z.u, p) ** p + lp_norm(z.v, p) ** p


def _lp_pair(z: State, p: float) -> float:
    """``||u||_p + ||v||_p`` (also for ``p = inf``)."""
    return lp_norm(z.u, p) + lp_norm(z.v, p)


def check_lp_propagation(traj, p: float) -> LpReport:
    """Per-step factor ``1/(1 - lam (p-1) h)`` and the exponential bound.

    ``status`` is ``"inapplicable"`` when ``h >= 1/(lam (p-1))`` or
    ``p = inf`` (no per-step statement exists there); the continuous
    constant ``C = max_t (||u||_p + ||v||_p) / (exp(lam t) (||u0||_p + ||v0||_p))``
    is reported either way.
    """
    params = traj.params
    lam, h = params.lam, params.h
    base = _lp_pair(traj.states[0], p)
    C = max(_lp_pair(z, p) / (math.exp(lam * t) * base) for z, t in zip(traj.states, traj.times))
    if math.isinf(p) or (lam > 0 and h >= params.h0(p)):
        return LpReport(p, "inapplicable", continuous_C=float(C))
    bound = 1.0 / (1.0 - lam * (p - 1) * h)
    sums = [_lp_sum(z, p) for z in traj.states]
    ratios = [b / a for a, b in zip(sums[:-1], sums[1:])]
    slack = float(min(bound - r for r in ratios)) if ratios else float("inf")
    return LpReport(p, "pass" if slack >= 0 else "fail", bound, ratios, slack, float(C))


def check_linf_propagation(traj, c_max: float = 10.0):
    """Measured ``C`` of the ``L^inf`` bound and the slack ``c_max - C``."""
    rep = check_lp_propagation(traj, np.inf)
    return rep.continuous_C <= c_max, rep.continuous_C, c_max - rep.continuous_C


# -- weak form -------------------------------------------------------------------------

def _bump_1d(x, c, s):
    """``exp(1 - 1/(1 - r^2))`` for ``|r| < 1``, ``r = (x - c)/s``, and its derivative."""
    r = (x - c) / s
    inside = np.abs(r) < 1
    q = np.where(inside, 1 - r**2, 1.0)
    phi = np.where(inside, np.exp(1 - 1 / q), 0.0)
    d1 = np.where(inside, phi * (-2 * r / (s * q**2)), 0.0)
    return phi, d1


_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(4)


@dataclass(frozen=True)
class TestFunction:
    """Tensor product of smooth compactly supported bumps.

    ``centers`` and ``scales`` are absolute, one entry per axis.
    """

    centers: tuple
    scales: tuple
    label: str = ""

    def __call__(self, *coords):
        return np.prod([_bump_1d(x, c, s)[0] for x, c, s in zip(coords, self.centers, self.scales)], axis=0)

    def partial(self, axis: int, *coords):
        out = 1.0
        for k, (x, c, s) in enumerate(zip(coords, self.centers, self.scales)):
            out = out * _bump_1d(x, c, s)[1 if k == axis else 0]
        return out

    def cell_averages(self, grid: Grid) -> np.ndarray:
        """Cell averages by 4-point Gauss-Legendre in each direction."""
        per_axis = []
        for axis in range(grid.dim):
            edges = grid.axis_edges(axis)
            mid, half = 0.5 * (edges[1:] + edges[:-1]), 0.5 * np.diff(edges)
            c, s = self.centers[axis], self.scales[axis]
            per_axis.append(sum(0.5 * w * _bump_1d(mid + half * xg, c, s)[0]
                                for xg, w in zip(_GAUSS_X, _GAUSS_W)))
        if grid.dim == 1:
            return per_axis[0]
        return np.multiply.outer(per_axis[0], per_axis[1])

    def face_partial(self, grid: Grid, axis: int) -> np.ndarray:
        """``d phi / dx_axis`` at the centres of the interior faces normal to ``axis``."""
        axes = [grid.axis_midpoints(a) for a in range(grid.dim)]
        axes[axis] = grid.axis_edges(axis)[1:-1]
        coords = np.meshgrid(*axes, indexing="ij")
        return self.partial(axis, *coords)


def bump_test_functions(grid: Grid, scales=(0.1, 0.2, 0.3), centers=(0.3, 0.4, 0.5, 0.6, 0.7)) -> list:
    """Bumps at every scale and centre; both are fractions of the box side.

    In 2-D the centre fractions are used on the diagonal.
    """
    lower, upper = np.asarray(grid.lower), np.asarray(grid.upper)
    L = upper - lower
    return [TestFunction(tuple(lower + c * L), tuple(s * L), f"s={s},c={c}")
            for s in scales for c in centers]


def _face_fluxes(z: State, m: float, U, V) -> list:
    """Per species, per axis: ``grad rho^m + rho_face grad(pot +- psi)`` on interior faces."""
    grid = z.grid
    psi = solve_poisson_neumann(z.u.values - z.v.values, grid).psi.values
    out = []
    for rho, pot, sign in ((z.u.values, _vals(U), 1.0), (z.v.values, _vals(V), -1.0)):
        pressure = rho if m == 1 else rho**m
        phi_tot = pot + sign * psi
        fluxes = []
        for axis, dx in enumerate(grid.cell_width):
            lo = [slice(None)] * grid.dim
            hi = [slice(None)] * grid.dim
            lo[axis], hi[axis] = slice(None, -1), slice(1, None)
            rho_f = 0.5 * (rho[tuple(lo)] + rho[tuple(hi)])
            fluxes.append((np.diff(pressure, axis=axis) + rho_f * np.diff(phi_tot, axis=axis)) / dx)
        out.append(fluxes)
    return out


def weak_form_rhs(z: State, m: float, U, V, phi: TestFunction):
    """``(rhs_u, rhs_v)`` of the weak formulation at state ``z``.

    ``rhs_u = -int <grad u^m, grad phi> - int u <grad(U + psi), grad phi>`` and
    ``rhs_v`` with ``V - psi``. Gradients of ``u^m`` and of the potentials are
    face differences, ``u`` on a face is the mean of its two cells and
    ``grad phi`` is exact at the face centre.
    """
    grid = z.grid
    derivs = [phi.face_partial(grid, a) for a in range(grid.dim)]
    return tuple(-float(sum(np.sum(f * d) for f, d in zip(fl, derivs)) * grid.cell_volume)
                 for fl in _face_fluxes(z, m, U, V))


def check_weak_form(traj, U, V, test_functions=None, n1: int = 0, n2: int | None = None):
    """Weak-form mismatch between steps ``n1`` and ``n2`` for every test function.

    ``residual = int (rho(T2) - rho(T1)) phi - h sum_{n1 < n <= n2} rhs(z_n)``;
    the right-endpoint rule is the one the implicit step satisfies. Returns a
    dict with arrays ``u`` and ``v`` (one entry per test function).
    """
    if traj.n_steps < 2:
        raise ValueError("the weak-form check needs at least 3 states")
    grid = traj.grid
    n2 = traj.n_steps if n2 is None else n2
    fns = bump_test_functions(grid) if test_functions is None else test_functions
    h, vol = traj.params.h, grid.cell_volume
    # time-summed face fluxes, then one contraction per test function
    summed = None
    for n in range(n1 + 1, n2 + 1):
        fl = _face_fluxes(traj.states[n], traj.params.m, U, V)
        summed = fl if summed is None else [[a + b for a, b in zip(sa, sb)] for sa, sb in zip(summed, fl)]
    z1, z2 = traj.states[n1], traj.states[n2]
    res = {"u": [], "v": []}
    for phi in fns:
        avg = phi.cell_averages(grid)
        derivs = [phi.face_partial(grid, a) for a in range(grid.dim)]
        for key, d_rho, fl in (("u", z2.u.values - z1.u.values, summed[0]),
                               ("v", z2.v.values - z1.v.values, summed[1])):
            lhs = np.sum(d_rho * avg) * vol
            integral = -h * vol * sum(np.sum(f * d) for f, d in zip(fl, derivs))
            res[key].append(float(lhs - integral))
    return {"u": np.array(res["u"]), "v": np.array(res["v"]), "labels": [f.label for f in fns]}


# -- oracle, moments -------------------------------------------------------------------------

def compare_to_oracle(traj, oracle_final: State, t: float):
    """L1 gaps ``(||u_JKO(t) - u_FV(t)||_1, ||v_JKO(t) - v_FV(t)||_1)``."""
    if oracle_final.grid != traj.grid:
        raise ValueError("oracle and trajectory live on different grids")
    z = traj.at(t)
    vol = traj.grid.cell_volume
    return (float(np.abs(z.u.values - oracle_final.u.values).sum() * vol),
            float(np.abs(z.v.values - oracle_final.v.values).sum() * vol))


def second_moments(traj) -> np.ndarray:
    return np.array([second_moment(z.u) + second_moment(z.v) for z in traj.states])


def concentration_bounds(traj) -> np.ndarray:
    """``int (u |log u| + v |log v|)`` for m = 1, ``int (u^m + v^m)`` otherwise."""
    m = traj.params.m
    vol = traj.grid.cell_volume
    out = []
    for z in traj.states:
        if m == 1:
            val = np.sum(np.abs(diffusion_density(z.u.values, 1))) + np.sum(np.abs(diffusion_density(z.v.values, 1)))
        else:
            val = np.sum(z.u.values**m + z.v.values**m)
        out.append(float(val * vol))
    return np.array(out)


# -- aggregate report ------------------------------------------------------------------------

@dataclass
class DiagnosticsReport:
    energy_monotone: bool
    energy_max_violation: float
    square_distance_bound: bool
    square_distance_slack: float
    mass_conserved: bool
    mass_max_error: float
    holder_constant: float
    lp_propagation: dict
    linf_propagation: bool
    linf_constant: float
    linf_slack: float
    weak_residuals: dict
    ibp_gap: float
    el_residuals: list
    moments_bounded: bool
    second_moment_sup: float
    concentration_sup: float
    schema_version: str = SCHEMA_VERSION

    @property
    def passed(self) -> bool:
        return (self.energy_monotone and self.square_distance_bound and self.mass_conserved
                and all(v["status"] != "fail" for v in self.lp_propagation.values())
                and self.linf_propagation and self.moments_bounded)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(_jsonable(self.as_dict()), indent=2, sort_keys=True, **kw)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def run_diagnostics(traj, U, V, lp_exponents=(2.0,), energy_slack: float = 1e-8,
                    c_max: float = 10.0, weak_form: bool = True, holder: bool = True,
                    mass_tol: float = 1e-10) -> DiagnosticsReport:
    """Run every check on ``traj`` and collect the results."""
    mono, worst, _ = check_energy_monotonicity(traj, energy_slack)
    sq_ok, sq_slack = check_square_distance(traj)
    mass_ok, mass_err = check_mass(traj, mass_tol)
    lp = {}
    for p in lp_exponents:
        rep = check_lp_propagation(traj, float(p))
        lp[str(p)] = {"status": rep.status, "factor_bound": rep.factor_bound, "slack": rep.slack,
                      "continuous_C": rep.continuous_C}
    linf_ok, C, linf_slack = check_linf_propagation(traj, c_max)
    weak = {}
    if weak_form and traj.n_steps >= 2:
        w = check_weak_form(traj, U, V)
        weak = {"labels": w["labels"], "u": w["u"], "v": w["v"],
                "max_abs": float(max(np.abs(w["u"]).max(), np.abs(w["v"]).max()))}
    z_end = traj.states[-1]
    _, _, gap = ibp_identity_check(z_end.u.values - z_end.v.values, traj.grid) \
        if np.any(z_end.u.values != z_end.v.values) else (0.0, 0.0, 0.0)
    el = [max(r.el_residual_u, r.el_residual_v) for r in traj.reports]
    moments = second_moments(traj)
    conc = concentration_bounds(traj)
    bounded = bool(np.all(np.isfinite(moments)) and np.all(np.isfinite(conc)))
    return DiagnosticsReport(
        energy_monotone=mono, energy_max_violation=worst,
        square_distance_bound=sq_ok, square_distance_slack=sq_slack,
        mass_conserved=mass_ok, mass_max_error=mass_err,
        holder_constant=fit_holder_constant(traj)["C"] if holder and traj.n_steps >= 1 else float("nan"),
        lp_propagation=lp, linf_propagation=linf_ok, linf_constant=C, linf_slack=linf_slack,
        weak_residuals=weak, ibp_gap=float(gap), el_residuals=el,
        moments_bounded=bounded, second_moment_sup=float(moments.max()),
        concentration_sup=float(conc.max()))


def step_table(traj) -> list[dict]:
    """One row per state: energies, step distance, masses, norms, moments, residuals."""
    rows = []
    for n, (z, t, E) in enumerate(zip(traj.states, traj.times, traj.energies)):
        rep = traj.reports[n - 1] if n > 0 else None
        rows.append({
            "n": n, "t": float(t),
            "E_diff": E.diff, "E_ext": E.ext, "E_cpl": E.cpl, "E_total": E.total,
            "d2_step": rep.step_distance_sq if rep else 0.0,
            "mass_u": z.u.mass, "mass_v": z.v.mass,
            "L2_u": lp_norm(z.u, 2), "L2_v": lp_norm(z.v, 2),
            "Linf_u": lp_norm(z.u, np.inf), "Linf_v": lp_norm(z.v, np.inf),
            "M2_u": second_moment(z.u), "M2_v": second_moment(z.v),
            "inner_residual": rep.inner_residual if rep else 0.0,
            "inner_iterations": rep.inner_iterations if rep else 0,
            "el_residual_u": rep.el_residual_u if rep else float("nan"),
            "el_residual_v": rep.el_residual_v if rep else float("nan"),
        })
    return rows
