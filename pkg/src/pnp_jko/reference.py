"""Explicit finite-volume reference solver and auxiliary flows.

``fv_evolve`` integrates the drift-diffusion system

    u_t = Lap u^m + div(u grad(U + psi)),   v_t = Lap v^m + div(v grad(V - psi)),
    -Lap psi = u - v,

with zero flux through the boundary, independently of the minimizing-movement
code. ``heat_evolve`` and ``pme_evolve`` are the no-flux heat and porous-medium
flows used to probe JKO minimizers.

Face fluxes are written as ``J = A rho_left - B rho_right`` with
``A, B >= 0``, so forward Euler keeps densities nonnegative whenever
``dt * (A_right + B_left) / dx <= 1`` in every cell.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import logging

import numpy as np
from scipy.special import exprel

from .elliptic import apply_laplacian, poisson_potential
from .energy import ModelParams, diffusion_variation
from .grid import Density, Grid, State, _vals, boltzmann_entropy, lp_norm

logger = logging.getLogger(__name__)

FLUX_SCHEMES = ("scharfetter_gummel", "upwind")


class TimeStepUnderflowError(RuntimeError):
    pass


@dataclass(frozen=True)
class FVConfig:
    """Time stepping and flux options for the reference solver.

    ``flux_scheme="scharfetter_gummel"`` uses exponentially fitted face
    fluxes, second order in space and exact for Gibbs states.
    ``"upwind"`` is upwind drift with centred diffusion (first order).
    """

    cfl_safety: float = 0.9
    dt_max: float = 1e-3
    flux_scheme: str = "scharfetter_gummel"
    dt_min: float = 1e-14

    def __post_init__(self):
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if self.dt_max <= 0:
            raise ValueError("dt_max must be positive")
        if self.flux_scheme not in FLUX_SCHEMES:
            raise ValueError(f"flux_scheme must be one of {FLUX_SCHEMES}")


def bernoulli(x: np.ndarray) -> np.ndarray:
    """``B(x) = x / (exp(x) - 1)`` with ``B(0) = 1``."""
    with np.errstate(over="ignore"):
        return 1.0 / exprel(np.asarray(x, dtype=float))


def _scaled_bernoulli(delta, diff):
    """``D B(delta / D)``, continuous as ``D -> 0`` where it tends to ``max(-delta, 0)``."""
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        val = diff * bernoulli(delta / diff)
    return np.where((diff > 1e-300) & np.isfinite(val), val, np.maximum(-delta, 0.0))


def _slices(ndim, axis):
    lo = [slice(None)] * ndim
    hi = [slice(None)] * ndim
    lo[axis] = slice(None, -1)
    hi[axis] = slice(1, None)
    return tuple(lo), tuple(hi)


def _face_coefficients(left, right, delta, m, dx, scheme):
    """Coefficients ``(A, B)`` of the face flux ``A rho_left - B rho_right``.

    ``delta`` is the potential difference ``phi_right - phi_left``.
    """
    grad = delta / dx
    if scheme == "scharfetter_gummel":
        if m == 1:
            a = bernoulli(delta) / dx
        else:
            diff = m * (0.5 * (left + right)) ** (m - 1) / dx
            a = _scaled_bernoulli(grad, diff)
        # B(-x) = B(x) + x
        return a, a + grad
    a = np.maximum(-grad, 0.0)
    b = np.maximum(grad, 0.0)
    if m == 1:
        return a + 1.0 / dx, b + 1.0 / dx
    # centred difference of rho^m written in A/B form
    return a + left ** (m - 1) / dx, b + right ** (m - 1) / dx


def _divergence(rho, deltas, m, grid: Grid, scheme):
    """Return ``(d rho/dt, largest outgoing rate)``.

    ``deltas[axis]`` holds the potential differences across the interior
    faces along ``axis``. ``rho`` may carry leading batch axes.
    """
    rate = np.zeros_like(rho)
    out_rate = np.zeros_like(rho)
    lead = rho.ndim - grid.dim
    for axis, dx in enumerate(grid.cell_width):
        lo, hi = _slices(rho.ndim, lead + axis)
        a, b = _face_coefficients(rho[lo], rho[hi], deltas[axis], m, dx, scheme)
        flux = (a * rho[lo] - b * rho[hi]) / dx
        rate[lo] -= flux
        rate[hi] += flux
        out_rate[lo] += a / dx
        out_rate[hi] += b / dx
    peak = float(out_rate.max())
    if scheme == "upwind" and m != 1:
        # the A/B split carries rho^(m-1); linear stability needs m rho^(m-1)
        peak *= m
    return rate, peak


def _face_deltas(u, v, Uv, Vv, grid):
    """Differences of ``U + psi`` and ``V - psi`` across interior faces, per axis."""
    if grid.dim == 1:
        dx = grid.cell_width[0]
        w = u - v
        dpsi = -np.cumsum(w[:-1] - w.mean()) * dx**2
        dU, dV = np.diff(Uv), np.diff(Vv)
        return [np.stack([dU + dpsi, dV - dpsi])]
    psi = poisson_potential(u - v, grid)
    phi = np.stack([Uv + psi, Vv - psi])
    return [np.diff(phi, axis=1 + axis) for axis in range(grid.dim)]


def pnp_rhs(z: State, params: ModelParams, U, V, scheme: str = "scharfetter_gummel"):
    """Semi-discrete right-hand side ``(du/dt, dv/dt)`` and the largest outflow rate."""
    rho = np.stack([z.u.values, z.v.values])
    deltas = _face_deltas(z.u.values, z.v.values, _vals(U), _vals(V), z.grid)
    d, peak = _divergence(rho, deltas, params.m, z.grid, scheme)
    return d[0], d[1], peak


def fv_evolve(z0: State, params: ModelParams, U, V, t_final: float,
              cfg: FVConfig | None = None, callback=None) -> State:
    """Forward-Euler finite-volume solution at ``t_final``.

    The potential ``psi`` is recomputed from the current densities before
    every step. ``callback(t, state)`` is called after each step if given.
    """
    cfg = cfg or FVConfig()
    grid = z0.grid
    Uv, Vv = _vals(U), _vals(V)
    rho = np.stack([z0.u.values, z0.v.values]).astype(float)
    t = 0.0
    steps = 0
    while t < t_final * (1 - 1e-14):
        deltas = _face_deltas(rho[0], rho[1], Uv, Vv, grid)
        d, rate = _divergence(rho, deltas, params.m, grid, cfg.flux_scheme)
        dt = cfg.dt_max if rate == 0 else min(cfg.dt_max, cfg.cfl_safety / rate)
        dt = min(dt, t_final - t)
        if dt < cfg.dt_min and t_final - t > cfg.dt_min:
            raise TimeStepUnderflowError(f"time step {dt:.3e} underflowed at t={t:.6g}")
        rho = np.maximum(rho + dt * d, 0.0)
        t += dt
        steps += 1
        if callback is not None:
            callback(t, State.from_arrays(rho[0], rho[1], grid, check=False))
    logger.debug("fv_evolve: %d steps to t=%g", steps, t_final)
    return State.from_arrays(rho[0], rho[1], grid, check=False)


# -- auxiliary flows ---------------------------------------------------------

def _pme_rhs(rho, p, grid):
    return apply_laplacian(rho**p if p != 1 else rho, grid)


def _pme_dt(rho, p, grid, safety):
    # monotone (hence L^q-contracting) when dt * p * max(rho)^(p-1) * sum 2/dx^2 <= 1
    lap_scale = float(np.sum(2.0 / grid.cell_width**2))
    peak = float(rho.max())
    speed = p * peak ** (p - 1) if p != 1 else 1.0
    return safety / (lap_scale * max(speed, 1e-300))


def _flow_path(rho, p, t, grid, safety):
    """Integrate ``rho_t = Lap rho^p`` to time ``t``; return the states at each substep."""
    rho = np.asarray(rho, dtype=float).copy()
    times, states = [0.0], [rho.copy()]
    s = 0.0
    while s < t * (1 - 1e-14):
        dt = min(_pme_dt(rho, p, grid, safety), t - s)
        rho = np.maximum(rho + dt * _pme_rhs(rho, p, grid), 0.0)
        s += dt
        times.append(s)
        states.append(rho.copy())
    return np.array(times), states


def heat_evolve(rho: Density, t: float, safety: float = 0.9) -> Density:
    """No-flux heat flow by explicit Euler with the Neumann Laplacian."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    _, states = _flow_path(rho.values, 1, t, rho.grid, safety)
    return Density(states[-1], rho.grid, check=False)


def pme_evolve(rho: Density, p_exponent: float, t: float, safety: float = 0.9) -> Density:
    """No-flux porous-medium flow ``rho_t = Lap(rho^p)``, explicit Euler."""
    if p_exponent <= 1:
        raise ValueError("pme_evolve needs p_exponent > 1")
    if t < 0:
        raise ValueError("t must be nonnegative")
    _, states = _flow_path(rho.values, p_exponent, t, rho.grid, safety)
    return Density(states[-1], rho.grid, check=False)


# -- flow-interchange probes ---------------------------------------------------

def _face_pairing(a, b, grid):
    """``sum_faces (a_{i+1} - a_i)(b_{i+1} - b_i) / dx^2 * vol``."""
    total = 0.0
    for axis, dx in enumerate(grid.cell_width):
        total += np.sum(np.diff(a, axis=axis) * np.diff(b, axis=axis)) / dx**2
    return float(total * grid.cell_volume)


def diffusion_dissipation(rho: np.ndarray, m: float, grid: Grid) -> float:
    """Discrete ``(4/m) ||grad rho^(m/2)||^2``: the decay rate of ``E_diff`` under heat flow."""
    return _face_pairing(diffusion_variation(np.maximum(rho, 1e-300), m), rho, grid)


@dataclass
class DissipationReport:
    flow: str
    p_exponent: float
    times: np.ndarray
    d_ediff: np.ndarray
    ext_gap: np.ndarray
    d_ecpl: np.ndarray
    lp_norms: dict = field(default_factory=dict)
    entropy: np.ndarray | None = None
    avg_dissipation: np.ndarray | None = None
    dissipation_bound: np.ndarray | None = None

    @property
    def max_d_ecpl(self) -> float:
        return float(np.max(self.d_ecpl))

    @property
    def dissipation_slack(self) -> float:
        """``min_t (bound - average dissipation)``; nan for the PME probe."""
        if self.avg_dissipation is None:
            return float("nan")
        return float(np.min(self.dissipation_bound[1:] - self.avg_dissipation[1:]))

    def lp_nonincreasing(self, slack: float = 1e-12) -> bool:
        return all(np.all(np.diff(v) <= slack * max(1.0, v[0])) for v in self.lp_norms.values())

    def entropy_nonincreasing(self, slack: float = 1e-12) -> bool:
        if self.entropy is None:
            return True
        return bool(np.all(np.diff(self.entropy) <= slack * max(1.0, abs(self.entropy[0]))))

    def as_dict(self) -> dict:
        out = {"flow": self.flow, "p_exponent": self.p_exponent,
               "max_d_ediff": float(np.max(self.d_ediff)),
               "min_ext_gap": float(np.min(self.ext_gap)),
               "max_d_ecpl": self.max_d_ecpl,
               "lp_nonincreasing": self.lp_nonincreasing(),
               "entropy_nonincreasing": self.entropy_nonincreasing()}
        if self.avg_dissipation is not None:
            out["dissipation_slack"] = self.dissipation_slack
        return out


def dissipation_probe(z_min: State, params: ModelParams, U, V, flow: str = "heat",
                      p_exponent: float = 2.0, t_probe: float | None = None,
                      z_prev: State | None = None, safety: float = 0.9) -> DissipationReport:
    """Run the heat or PME flow from a JKO minimizer and record the derivatives.

    Derivatives are those of the semi-discrete flow, evaluated at every
    substep: ``d_ediff`` and ``d_ecpl`` are the time derivatives of the
    internal and coupling energies, ``ext_gap`` is
    ``lam * int(u^p + v^p) - d/dt E_ext`` (nonnegative when the bound holds).

    For ``flow="heat"`` and a given ``z_prev`` the report also holds the
    running average of the diffusion dissipation and its bound
    ``2 lam + [H(u_prev) - H(u(t))]/h + [H(v_prev) - H(v(t))]/h``.
    """
    if flow not in ("heat", "pme"):
        raise ValueError("flow must be 'heat' or 'pme'")
    grid = z_min.grid
    p = 1.0 if flow == "heat" else float(p_exponent)
    if flow == "pme" and p <= 1:
        raise ValueError("the PME probe needs p_exponent > 1")
    if t_probe is None:
        t_probe = 0.5 * params.h
    Uv, Vv = _vals(U), _vals(V)
    lap_U, lap_V = apply_laplacian(Uv, grid), apply_laplacian(Vv, grid)
    path_u, path_v, times = _lockstep(z_min, p, t_probe, grid, safety)
    vol = grid.cell_volume
    d_ediff, ext_gap, d_ecpl, diss = [], [], [], []
    for u, v in zip(path_u, path_v):
        ru = _pme_rhs(u, p, grid)
        rv = _pme_rhs(v, p, grid)
        d_ediff.append(float(np.sum(diffusion_variation(np.maximum(u, 1e-300), params.m) * ru
                                    + diffusion_variation(np.maximum(v, 1e-300), params.m) * rv) * vol))
        up, vp = (u, v) if p == 1 else (u**p, v**p)
        d_ext = float(np.sum(lap_U * up + lap_V * vp) * vol)
        ext_gap.append(params.lam * float(np.sum(up + vp) * vol) - d_ext)
        d_ecpl.append(-float(np.sum((u - v) * (up - vp)) * vol))
        if flow == "heat":
            diss.append(diffusion_dissipation(u, params.m, grid) + diffusion_dissipation(v, params.m, grid))
    report = DissipationReport(flow, p, times, np.array(d_ediff), np.array(ext_gap), np.array(d_ecpl))
    if flow == "pme":
        for q in sorted({2.0, p, np.inf}):
            report.lp_norms[q] = np.array([lp_norm(u, q, grid) + lp_norm(v, q, grid)
                                           for u, v in zip(path_u, path_v)])
    else:
        report.entropy = np.array([boltzmann_entropy(u, grid) + boltzmann_entropy(v, grid)
                                   for u, v in zip(path_u, path_v)])
        diss = np.array(diss)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (diss[1:] + diss[:-1]) * np.diff(times))])
        with np.errstate(invalid="ignore", divide="ignore"):
            report.avg_dissipation = np.where(times > 0, cum / np.where(times > 0, times, 1), diss[0])
        if z_prev is not None:
            h_prev = boltzmann_entropy(z_prev.u.values, grid) + boltzmann_entropy(z_prev.v.values, grid)
            report.dissipation_bound = 2 * params.lam + (h_prev - report.entropy) / params.h
        else:
            report.avg_dissipation = None
    return report


def _lockstep(z, p, t, grid, safety):
    """Both species on a common step sequence."""
    u, v = z.u.values.copy(), z.v.values.copy()
    times, pu, pv = [0.0], [u.copy()], [v.copy()]
    s = 0.0
    while s < t * (1 - 1e-14):
        dt = min(_pme_dt(u, p, grid, safety), _pme_dt(v, p, grid, safety), t - s)
        u = np.maximum(u + dt * _pme_rhs(u, p, grid), 0.0)
        v = np.maximum(v + dt * _pme_rhs(v, p, grid), 0.0)
        s += dt
        times.append(s)
        pu.append(u.copy())
        pv.append(v.copy())
    return pu, pv, np.array(times)
