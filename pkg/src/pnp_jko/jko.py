"""Minimizing-movement (JKO) steps for the two-species system.

One step maps ``z_prev`` to the minimizer of

    F_h(z) = (W2^2(u, u_prev) + W2^2(v, v_prev)) / (2h) + E(z)

over pairs of unit-mass densities on the grid. Two inner solvers are provided.

``newton``
    1-D only, exact transport. Works in cumulative-mass coordinates: the
    unknowns are the CDF values of ``u`` and ``v`` at interior cell edges. Mass
    is then conserved by construction, the coupling energy is diagonal
    (``psi' = -(F_u - F_v)`` in 1-D) and the Hessian of every term is banded,
    so a damped Newton iteration costs O(n) per step.
``proximal``
    Entropic transport, any dimension. Generalized Sinkhorn iterations in the
    log domain: each species alternates a KL-proximal update of its free
    marginal with the projection onto its fixed marginal ``u_prev``; the
    potential ``psi`` is frozen during a block and refreshed before the next.
    The cost is the entropic transport cost ``<C, pi> + eps sum pi (log pi - 1)``,
    so the scheme carries an extra O(eps / h) diffusion.
``lbfgs``
    Any dimension and either transport mode. Optimizes softmax logits of both
    densities with L-BFGS; gradients of the transport term come from the
    exact 1-D Kantorovich potential or from the debiased Sinkhorn potentials.

All stop on the KKT residual ``sum_i u_i vol |Psi_i - <Psi>_u|`` summed over
the two species, where ``Psi`` is the first variation of ``F_h``. A minimizer
has ``Psi`` constant on the support of each density.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import minimize

from .elliptic import cell_gradient, solve_poisson_neumann
from .energy import (EnergyBreakdown, ModelParams, diffusion_density, diffusion_variation,
                     total_energy)
from .grid import RHO_FLOOR, Density, Grid, State, _vals
from .transport import (GridLogKernel, _cdf_nodes, _locate_mass, default_epsilon,
                        product_distance_sq, quantile_function, sinkhorn_w2, w2_squared_1d)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class InnerSolverConfig:
    method: str = "auto"
    transport: str = "exact_1d"
    tol: float | None = None
    max_iter: int | None = None
    epsilon: float | None = None
    barrier: float = 1e-13
    sinkhorn_tol: float = 1e-10
    max_step: float = 1.0

    def resolved(self, grid: Grid) -> "InnerSolverConfig":
        method = self.method
        transport = self.transport
        if grid.dim > 1 and transport == "exact_1d":
            transport = "entropic"
        if method == "auto":
            method = "newton" if transport == "exact_1d" else "proximal"
        if method == "newton" and transport != "exact_1d":
            raise ValueError("the newton inner solver needs exact 1-D transport")
        if method == "proximal" and transport != "entropic":
            raise ValueError("the proximal inner solver needs entropic transport")
        if method not in ("newton", "lbfgs", "proximal"):
            raise ValueError(f"unknown inner solver {method!r}")
        tol = self.tol if self.tol is not None else {"newton": 1e-9}.get(method, 1e-6)
        max_iter = self.max_iter if self.max_iter is not None else \
            {"newton": 200, "proximal": 20000}.get(method, 3000)
        epsilon = self.epsilon
        if transport == "entropic" and epsilon is None:
            epsilon = default_epsilon(grid)
        return replace(self, method=method, transport=transport, tol=tol, max_iter=max_iter,
                       epsilon=epsilon)


@dataclass
class JKOStepReport:
    z_next: State
    F_h_value: float
    energy: EnergyBreakdown
    step_distance_sq: float
    inner_iterations: int
    inner_residual: float
    converged: bool
    el_residual_u: float = float("nan")
    el_residual_v: float = float("nan")


@dataclass
class Trajectory:
    states: list
    params: ModelParams
    reports: list = field(default_factory=list)
    energies: list = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return len(self.states) - 1

    @property
    def times(self) -> np.ndarray:
        return self.params.h * np.arange(len(self.states))

    def at(self, t: float) -> State:
        """Piecewise-constant interpolant, ``z_h(t) = z^(n)`` for ``nh <= t < (n+1)h``."""
        n = int(np.floor(t / self.params.h + 1e-12))
        return self.states[min(max(n, 0), self.n_steps)]

    @property
    def grid(self) -> Grid:
        return self.states[0].grid


# -- objective pieces ------------------------------------------------------------

def _mixed_start(rho: np.ndarray, grid: Grid, delta: float = 1e-12) -> np.ndarray:
    """Blend with the uniform density so that every cell is safely positive."""
    return (1 - delta) * rho + delta / grid.volume


def _psi_and_variation(u, v, grid, params, U, V):
    psi = solve_poisson_neumann(u - v, grid).psi.values
    phi_u = diffusion_variation(u, params.m) + U + psi
    phi_v = diffusion_variation(v, params.m) + V - psi
    return psi, phi_u, phi_v


def kkt_residual(rho: np.ndarray, Psi: np.ndarray, vol: float) -> float:
    w = rho * vol
    mean = np.sum(w * Psi) / np.sum(w)
    return float(np.sum(w * np.abs(Psi - mean)))


def _transport_terms(u, u_prev, grid, cfg, warm, need_grad=True):
    """``W2^2`` and its gradient with respect to cell values of ``u``."""
    if cfg.transport == "exact_1d":
        return w2_squared_1d(u, u_prev, grid, gradient=True)
    res, grad = sinkhorn_w2(Density(u, grid, check=False), Density(u_prev, grid, check=False),
                            cfg.epsilon, marginal_tol=cfg.sinkhorn_tol, gradient=True, warm=warm)
    return res.cost, grad


def step_kkt_residual(z: State, z_prev: State, params: ModelParams, U, V, cfg) -> float:
    """KKT residual of ``F_h`` at ``z`` (no barrier term)."""
    grid = z.grid
    vol = grid.cell_volume
    u, v = z.u.values, z.v.values
    _, phi_u, phi_v = _psi_and_variation(u, v, grid, params, _vals(U), _vals(V))
    out = 0.0
    for rho, rho_prev, phi, key in ((u, z_prev.u.values, phi_u, "u"), (v, z_prev.v.values, phi_v, "v")):
        _, gw = _transport_terms(rho, rho_prev, grid, cfg, {})
        out += kkt_residual(rho, gw / (2 * params.h * vol) + phi, vol)
    return out


# -- Newton in cumulative coordinates (1-D) -------------------------------------

class _CDFNewton:
    """Damped Newton with directions computed in cumulative-mass coordinates.

    The iterate is kept as cell values; only the Newton direction is solved
    for in CDF coordinates (where the Hessian is banded) and mapped back by
    differencing. Storing CDF values themselves would lose the small tail
    masses next to ``F = 1``.
    """

    def __init__(self, z_prev: State, params: ModelParams, U, V, cfg: InnerSolverConfig):
        self.grid = grid = z_prev.grid
        self.n = grid.n_cells[0]
        self.dx = grid.cell_width[0]
        self.h = params.h
        self.m = params.m
        self.mu = 0.0 if params.m == 1 else cfg.barrier
        self.prev = (z_prev.u.values, z_prev.v.values)
        self.pot = (_vals(U), _vals(V))
        self.cfg = cfg

    def _fpp(self, rho):
        if self.m == 1:
            return 1.0 / rho
        return self.m * rho ** (self.m - 2)

    def value(self, rhos):
        dx = self.dx
        if min(r.min() for r in rhos) <= 0:
            return np.inf
        total = 0.0
        for rho, prev, pot in zip(rhos, self.prev, self.pot):
            total += w2_squared_1d(rho, prev, self.grid) / (2 * self.h)
            total += np.sum(diffusion_density(rho, self.m) + pot * rho) * dx
            if self.mu > 0:
                total -= self.mu * np.sum(np.log(rho)) * dx
        diff = np.cumsum(rhos[0] - rhos[1])[:-1] * dx
        return total + 0.5 * np.sum(diff**2) * dx

    def grad_hess(self, rhos):
        n, dx, h = self.n, self.dx, self.h
        grads, blocks, Psis = [], [], []
        for rho, prev, pot in zip(rhos, self.prev, self.pot):
            _, gw = w2_squared_1d(rho, prev, self.grid, gradient=True)
            gu = gw / (2 * h) + (diffusion_variation(rho, self.m) + pot) * dx
            if self.mu > 0:
                gu = gu - self.mu / rho * dx
            Psis.append(gu / dx)
            grads.append((gu[:-1] - gu[1:]) / dx)
            blocks.append(self._hessian_block(rho, prev))
        diff = np.cumsum(rhos[0] - rhos[1])[:-1] * dx
        # psi up to a constant: psi_j - psi_last = sum_{k >= j} (F_u - F_v)_k dx
        psi = np.append(np.cumsum(diff[::-1])[::-1] * dx, 0.0)
        Psis = [Psis[0] + psi, Psis[1] - psi]
        g = np.concatenate(grads)
        g[: n - 1] += diff * dx
        g[n - 1:] -= diff * dx
        eye = sp.identity(n - 1) * dx
        H = sp.bmat([[blocks[0] + eye, -eye], [-eye, blocks[1] + eye]], format="csc")
        return g, H, Psis

    def _hessian_block(self, rho, prev):
        n, dx, h = self.n, self.dx, self.h
        # transport: (1/h) P1 mass matrix weighted by K_i = (T(x_{i+1}) - T(x_i)) / (rho_i dx)
        T = quantile_function(prev, self.grid, _cdf_nodes(rho, dx))
        Kd = np.maximum(np.diff(T), 0.0) / rho / h
        main = np.zeros(n + 1)
        main[:-1] += Kd / 3
        main[1:] += Kd / 3
        off = Kd / 6
        # internal energy (and barrier) on the edge difference
        c = self._fpp(rho) / dx
        if self.mu > 0:
            c = c + self.mu / rho**2 / dx
        main[:-1] += c
        main[1:] += c
        full = sp.diags([off - c, main, off - c], [-1, 0, 1], format="csr")
        return full[1:-1, 1:-1]

    def _to_cells(self, step):
        n, dx = self.n, self.dx
        return [np.diff(np.concatenate([[0.0], step[k * (n - 1):(k + 1) * (n - 1)], [0.0]])) / dx
                for k in range(2)]

    def _iterate(self, rhos, tol, max_iter, max_step):
        fx = self.value(rhos)
        it = 0
        while True:
            g, H, Psis = self.grad_hess(rhos)
            resid = sum(kkt_residual(r, P, self.dx) for r, P in zip(rhos, Psis))
            if resid <= tol:
                return rhos, it, True
            if it >= max_iter:
                return rhos, it, False
            it += 1
            step = spla.spsolve(H, -g)
            slope = float(g @ step)
            if not np.isfinite(slope) or slope >= 0:
                step, slope = -g, -float(g @ g)
            d = self._to_cells(step)
            alpha = max_step
            for rho, dr in zip(rhos, d):
                neg = dr < 0
                if np.any(neg):
                    alpha = min(alpha, 0.995 * float(np.min(rho[neg] / -dr[neg])))
            while alpha > 1e-14:
                trial = [r + alpha * dr for r, dr in zip(rhos, d)]
                fn = self.value(trial)
                # allow for rounding in F_h once decreases become unmeasurable
                if fn <= fx + 1e-4 * alpha * slope + 8 * np.finfo(float).eps * abs(fx):
                    break
                alpha *= 0.5
            else:
                # rounding floor reached; no further decrease is measurable
                return rhos, it, False
            rhos, fx = trial, fn

    def solve(self, z_start: State):
        cfg = self.cfg
        rhos = [_mixed_start(z_start.u.values, self.grid), _mixed_start(z_start.v.values, self.grid)]
        total = 0
        if self.m != 1:
            # barrier continuation: a small barrier from the start lets cells
            # overshoot far below it and Newton then crawls
            target = cfg.barrier
            mu = max(1e-4, target)
            while mu > target:
                self.mu = mu
                rhos, it, _ = self._iterate(rhos, max(cfg.tol, mu), cfg.max_iter, 1.0)
                total += it
                mu *= 0.1
            self.mu = target
        rhos, it, converged = self._iterate(rhos, cfg.tol, max(cfg.max_iter - total, 1), cfg.max_step)
        rhos = [r / (r.sum() * self.dx) for r in rhos]
        return rhos, total + it, converged


# -- L-BFGS on softmax logits ---------------------------------------------------

class _LogitLBFGS:
    def __init__(self, z_prev: State, params: ModelParams, U, V, cfg: InnerSolverConfig):
        self.grid = z_prev.grid
        self.shape = self.grid.shape
        self.N = int(np.prod(self.shape))
        self.vol = self.grid.cell_volume
        self.params = params
        self.prev = (z_prev.u.values, z_prev.v.values)
        self.pot = (_vals(U), _vals(V))
        self.cfg = cfg
        self.warm = ({}, {})
        self.last = None

    def densities(self, s):
        out = []
        for k in range(2):
            sk = s[k * self.N:(k + 1) * self.N]
            e = np.exp(sk - sk.max())
            out.append((e / (e.sum() * self.vol)).reshape(self.shape))
        return out

    def fun(self, s):
        h, vol = self.params.h, self.vol
        u, v = self.densities(s)
        psi, phi_u, phi_v = _psi_and_variation(u, v, self.grid, self.params, *self.pot)
        energy = total_energy(State.from_arrays(u, v, self.grid, check=False), self.params, *self.pot)
        total = energy.total
        grad = []
        resid = 0.0
        for k, (rho, phi) in enumerate(((u, phi_u), (v, phi_v))):
            cost, gw = _transport_terms(rho, self.prev[k], self.grid, self.cfg, self.warm[k])
            total += cost / (2 * h)
            Psi = gw / (2 * h * vol) + phi
            w = rho * vol
            mean = np.sum(w * Psi)
            grad.append((w * (Psi - mean)).ravel())
            resid += float(np.sum(np.abs(w * (Psi - mean))))
        self.last = (resid, total)
        return float(total), np.concatenate(grad)

    def solve(self, z_start: State):
        cfg = self.cfg
        s0 = np.concatenate([np.log(_mixed_start(r, self.grid)).ravel()
                             for r in (z_start.u.values, z_start.v.values)])
        state = {"it": 0, "converged": False}

        def callback(xk):
            state["it"] += 1
            if self.last is not None and self.last[0] <= cfg.tol:
                state["converged"] = True
                raise StopIteration

        _, g0 = self.fun(s0)
        if self.last[0] <= cfg.tol:
            return self.densities(s0), 0, True
        res = minimize(self.fun, s0, jac=True, method="L-BFGS-B", callback=callback,
                       options=dict(maxiter=cfg.max_iter, gtol=0.0, ftol=0.0, maxcor=20))
        s = res.x
        self.fun(s)
        converged = state["converged"] or self.last[0] <= cfg.tol
        return self.densities(s), max(state["it"], int(res.nit)), converged


# -- entropic proximal (generalized Sinkhorn) ------------------------------------

def _prox_log_mass(logp, Phi, sigma, m, vol, newton_iter=60):
    """Log of ``argmin_q sigma * f(q) + KL(q | p)`` cell by cell.

    ``f(q) = vol * phi(q / vol) + q * Phi`` with ``phi(r) = r log r`` (m = 1)
    or ``r^m / (m - 1)``.
    """
    if m == 1:
        return (logp - sigma * (1.0 - np.log(vol) + Phi)) / (1.0 + sigma)
    # sigma * c * exp((m-1) t) + t = L, convex increasing in t
    c = m / (m - 1) * vol ** (1 - m)
    L = logp - sigma * Phi
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.log(np.maximum(L, 1e-300) / (sigma * c)) / (m - 1)
    t = np.where(L <= 0, L, np.minimum(L, np.maximum(t1, 0.0)))
    finite = np.isfinite(t)
    t = np.where(finite, t, -np.inf)
    tf = t[finite]
    Lf = L[finite]
    for _ in range(newton_iter):
        e = sigma * c * np.exp((m - 1) * tf)
        step = (e + tf - Lf) / ((m - 1) * e + 1.0)
        tf = tf - step
        if np.max(np.abs(step), initial=0.0) <= 1e-14 * (1.0 + np.max(np.abs(tf), initial=0.0)):
            break
    t[finite] = tf
    return t


class _EntropicProximal:
    def __init__(self, z_prev: State, params: ModelParams, U, V, cfg: InnerSolverConfig):
        self.grid = z_prev.grid
        self.vol = self.grid.cell_volume
        self.params = params
        self.pot = (_vals(U), _vals(V))
        self.cfg = cfg
        self.eps = float(cfg.epsilon)
        self.kernel = GridLogKernel(self.grid, self.eps)
        self.sigma = 2 * params.h / self.eps
        with np.errstate(divide="ignore"):
            self.logbeta = [np.log(r * self.vol) for r in (z_prev.u.values, z_prev.v.values)]

    def _masses(self, la, lb):
        return np.exp(la + self.kernel.lse(lb))

    def residual(self, la, lb):
        q = [self._masses(a, b) for a, b in zip(la, lb)]
        rho = [x / self.vol for x in q]
        _, phi_u, phi_v = _psi_and_variation(rho[0], rho[1], self.grid, self.params, *self.pot)
        out = 0.0
        for r, a, phi in zip(rho, la, (phi_u, phi_v)):
            out += kkt_residual(r, self.eps / (2 * self.params.h) * a + phi, self.vol)
        return out, rho

    def solve(self, z_start: State):
        cfg, K, vol, m = self.cfg, self.kernel, self.vol, self.params.m
        la = [np.zeros(self.grid.shape), np.zeros(self.grid.shape)]
        lb = [lbeta - K.lse(a) for lbeta, a in zip(self.logbeta, la)]
        rho = [z_start.u.values, z_start.v.values]
        converged, it = False, 0
        resid = np.inf
        while it < cfg.max_iter:
            it += 1
            for k in range(2):
                psi = solve_poisson_neumann(rho[0] - rho[1], self.grid).psi.values
                Phi = self.pot[k] + (psi if k == 0 else -psi)
                lKb = K.lse(lb[k])
                la[k] = _prox_log_mass(lKb, Phi, self.sigma, m, vol) - lKb
                lb[k] = self.logbeta[k] - K.lse(la[k])
                rho[k] = self._masses(la[k], lb[k]) / vol
            if it % 10 == 0 or it == cfg.max_iter:
                resid, rho = self.residual(la, lb)
                if resid <= cfg.tol:
                    converged = True
                    break
        self.last_residual = float(resid)
        rho = [r / (r.sum() * vol) for r in rho]
        return rho, it, converged


# -- public API ------------------------------------------------------------------

def jko_step(z_prev: State, params: ModelParams, U, V,
             inner: InnerSolverConfig | None = None, zeta_fields=None,
             el_residuals: bool = True) -> JKOStepReport:
    """One minimizing-movement step from ``z_prev``."""
    grid = z_prev.grid
    cfg = (inner or InnerSolverConfig()).resolved(grid)
    solver_cls = {"newton": _CDFNewton, "lbfgs": _LogitLBFGS, "proximal": _EntropicProximal}[cfg.method]
    solver = solver_cls(z_prev, params, U, V, cfg)
    (u, v), iters, converged = solver.solve(z_prev)
    u = np.maximum(u, 0.0)
    v = np.maximum(v, 0.0)
    z_next = State.from_arrays(u, v, grid, check=False)
    energy = total_energy(z_next, params, U, V)
    dist = product_distance_sq(z_next, z_prev, cfg.transport, cfg.epsilon)
    if cfg.method == "proximal":
        # the residual of the entropic objective the solver actually minimizes
        resid = solver.last_residual
    else:
        resid = step_kkt_residual(z_next, z_prev, params, U, V, cfg)
    if not converged:
        logger.warning("inner solver stopped after %d iterations with KKT residual %.2e", iters, resid)
    report = JKOStepReport(z_next=z_next, F_h_value=dist / (2 * params.h) + energy.total,
                           energy=energy, step_distance_sq=dist, inner_iterations=iters,
                           inner_residual=resid, converged=converged)
    if el_residuals and grid.dim == 1 and cfg.transport == "exact_1d":
        report.el_residual_u, report.el_residual_v = euler_lagrange_residual(
            z_prev, z_next, params, U, V, zeta_fields)
    return report


def run_trajectory(z0: State, params: ModelParams, U, V, n_steps: int,
                   inner: InnerSolverConfig | None = None, el_residuals: bool = True,
                   progress=None) -> Trajectory:
    traj = Trajectory(states=[z0], params=params)
    traj.energies.append(total_energy(z0, params, U, V))
    z = z0
    for n in range(n_steps):
        rep = jko_step(z, params, U, V, inner, el_residuals=el_residuals)
        traj.states.append(rep.z_next)
        traj.reports.append(rep)
        traj.energies.append(rep.energy)
        z = rep.z_next
        if progress is not None:
            progress(n + 1, rep)
    return traj


# -- Euler-Lagrange residual ---------------------------------------------------------

@dataclass(frozen=True)
class VectorField1D:
    """Smooth scalar field ``zeta`` on an interval with derivative ``dzeta``."""

    zeta: object
    dzeta: object
    label: str = ""

    def __neg__(self):
        return VectorField1D(lambda x: -self.zeta(x), lambda x: -self.dzeta(x), f"-{self.label}")


def sine_fields(grid: Grid, modes=(1, 2, 3, 4)) -> list:
    """``sin(k pi (x - a)/L)``, which vanish at both ends of the interval."""
    a, L = grid.lower[0], grid.upper[0] - grid.lower[0]
    out = []
    for k in modes:
        w = k * np.pi / L
        out.append(VectorField1D(lambda x, w=w: np.sin(w * (x - a)),
                                 lambda x, w=w: w * np.cos(w * (x - a)), f"sin{k}"))
    return out


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


def _map_pairing(new: np.ndarray, old: np.ndarray, grid: Grid, zeta) -> float:
    """``int_0^1 (X_new(q) - X_old(q)) zeta(X_new(q)) dq`` on merged quantile pieces."""
    dx = grid.cell_width[0]
    edges = grid.axis_edges(0)
    cn, co = _cdf_nodes(new, dx), _cdf_nodes(old, dx)
    top = min(cn[-1], co[-1])
    q = np.unique(np.concatenate([cn, co]))
    q = np.append(q[q < top], top)
    qa, qb = q[:-1], q[1:]
    keep = qb - qa > 0
    qa, qb = qa[keep], qb[keep]
    qm = 0.5 * (qa + qb)
    kn, ko = _locate_mass(qm, cn, new), _locate_mass(qm, co, old)
    half = 0.5 * (qb - qa)
    total = 0.0
    for node, weight in zip(_GL_NODES, _GL_WEIGHTS):
        qq = qm + half * node
        xn = np.clip(edges[kn] + (qq - cn[kn]) / new[kn], edges[kn], edges[kn + 1])
        xo = np.clip(edges[ko] + (qq - co[ko]) / old[ko], edges[ko], edges[ko + 1])
        total += np.sum(weight * half * (xn - xo) * zeta(xn))
    return float(total)


def euler_lagrange_quadrature(z_prev: State, z_next: State, params: ModelParams, U, V,
                              field: VectorField1D):
    """Both sides of the optimality identity, evaluated by quadrature.

    ``lhs = (1/h) int (X_new - X_old) zeta(X_new) dq`` and
    ``rhs = int rho^m zeta' - int rho U' zeta -/+ int rho psi' zeta``
    (minus for ``u``, plus for ``v``). The gap is a consistency check: it
    shrinks with the mesh but not with the inner tolerance.
    """
    grid = z_next.grid
    dx = grid.cell_width[0]
    edges = grid.axis_edges(0)
    zeta_c = field.zeta(grid.coords[0])
    dzeta_int = np.diff(field.zeta(edges))
    psi = solve_poisson_neumann(z_next.u.values - z_next.v.values, grid).psi.values
    dpsi = cell_gradient(psi, grid)[0]
    out = []
    for rho, prev, pot, sign in ((z_next.u.values, z_prev.u.values, _vals(U), -1.0),
                                 (z_next.v.values, z_prev.v.values, _vals(V), 1.0)):
        lhs = _map_pairing(rho, prev, grid, field.zeta) / params.h
        dpot = np.gradient(pot, dx)
        rhs = (np.sum(rho**params.m * dzeta_int)
               - np.sum(rho * dpot * zeta_c) * dx
               + sign * np.sum(rho * dpsi * zeta_c) * dx)
        out.append((lhs, float(rhs)))
    return tuple(out)


def _edge_derivative(cell_grad: np.ndarray, dx: float) -> np.ndarray:
    """Gradient with respect to interior CDF values from a cell-value gradient."""
    return (cell_grad[:-1] - cell_grad[1:]) / dx


def euler_lagrange_terms(z_prev: State, z_next: State, params: ModelParams, U, V,
                         field: VectorField1D):
    """Both sides of the discrete optimality identity for one test field.

    The variation is the push-forward by ``x + eps zeta(x)``, which moves the
    CDF at an interior edge ``x_k`` by ``-eps rho(x_k) zeta(x_k)``, with
    ``rho(x_k)`` the smaller of the two neighbouring cell values. With ``D``
    the derivative at ``eps = 0``,

        lhs = D W2^2(rho, rho_prev) / (2h),    rhs = -D E(z),

    where only the species being varied moves. ``lhs = rhs`` for the exact
    minimizer of the discrete step; as the mesh is refined the two sides
    approach ``(1/h) int (x - T(x)) zeta rho`` and
    ``int rho^m zeta' - int rho U' zeta -/+ int rho psi' zeta``.
    """
    grid = z_next.grid
    dx = grid.cell_width[0]
    zeta_e = field.zeta(grid.axis_edges(0)[1:-1])
    u, v = z_next.u.values, z_next.v.values
    diff = np.cumsum(u - v)[:-1] * dx
    psi = np.append(np.cumsum(diff[::-1])[::-1] * dx, 0.0)
    out = []
    for rho, prev, pot, sign in ((u, z_prev.u.values, _vals(U), 1.0),
                                 (v, z_prev.v.values, _vals(V), -1.0)):
        # the smaller neighbour keeps the variation admissible in both
        # directions next to vacuum
        dF = -np.minimum(rho[:-1], rho[1:]) * zeta_e
        _, gw = w2_squared_1d(rho, prev, grid, gradient=True)
        lhs = float(_edge_derivative(gw, dx) @ dF) / (2 * params.h)
        ge = (diffusion_variation(rho, params.m) + pot + sign * psi) * dx
        rhs = -float(_edge_derivative(ge, dx) @ dF)
        out.append((lhs, rhs))
    return tuple(out)


def euler_lagrange_residual(z_prev: State, z_next: State, params: ModelParams, U, V,
                            zeta_fields=None, quadrature: bool = False) -> tuple[float, float]:
    """Max over the test fields of ``|lhs - rhs|`` for each species."""
    grid = z_next.grid
    if grid.dim != 1:
        raise ValueError("the Euler-Lagrange residual needs 1-D transport maps")
    fields = sine_fields(grid) if zeta_fields is None else zeta_fields
    terms = euler_lagrange_quadrature if quadrature else euler_lagrange_terms
    res_u = res_v = 0.0
    for f in fields:
        (lu, ru), (lv, rv) = terms(z_prev, z_next, params, U, V, f)
        res_u = max(res_u, abs(lu - ru))
        res_v = max(res_v, abs(lv - rv))
    return res_u, res_v
