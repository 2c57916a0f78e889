"""Quadratic Wasserstein distances between cell-averaged densities.

Two routes are provided:

* ``w2_exact_1d`` integrates the squared difference of the quantile functions
  exactly. Cell averages have piecewise-linear CDFs, hence piecewise-linear
  quantile functions; on the merged breakpoints of both quantile functions the
  integrand is a quadratic polynomial and Simpson's rule is exact.
* ``sinkhorn_w2`` is the debiased entropic cost (Sinkhorn divergence), solved
  in the log domain with epsilon-scaling and a kernel that factorizes over
  the grid axes. Works in 1-D and 2-D.
"""
from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np
from scipy.special import logsumexp

from .grid import Density, Grid, State, _vals

logger = logging.getLogger(__name__)

DEFAULT_EPS_FACTOR = 1e-3
MARGINAL_TOL = 1e-9


@dataclass
class TransportResult:
    cost: float
    mode: str
    map: np.ndarray | None = None
    plan: np.ndarray | None = None
    epsilon: float | None = None
    iterations: int = 0
    marginal_error: float = 0.0
    converged: bool = True


def default_epsilon(grid: Grid) -> float:
    return DEFAULT_EPS_FACTOR * grid.diameter**2


# -- exact 1-D ---------------------------------------------------------------

def _cdf_nodes(rho: np.ndarray, dx: float) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(rho * dx)])


def _quantile(q: np.ndarray, cells: np.ndarray, rho, cdf, edges) -> np.ndarray:
    # clamped to the cell: with near-denormal masses rounding in q is amplified
    x = edges[cells] + (q - cdf[cells]) / rho[cells]
    return np.clip(x, edges[cells], edges[cells + 1])


def _locate(q: np.ndarray, cdf: np.ndarray) -> np.ndarray:
    return np.clip(np.searchsorted(cdf, q, side="right") - 1, 0, len(cdf) - 2)


def _locate_mass(q: np.ndarray, cdf: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Like :func:`_locate` but only returns cells with positive mass.

    Quantile pieces one ulp long at the top of the CDF would otherwise land
    in trailing empty cells.
    """
    pos = np.flatnonzero(rho > 0)
    idx = np.clip(np.searchsorted(cdf[pos], q, side="right") - 1, 0, pos.size - 1)
    return pos[idx]


def _merged_pieces(a, b, grid: Grid):
    dx = grid.cell_width[0]
    edges = grid.axis_edges(0)
    ca, cb = _cdf_nodes(a, dx), _cdf_nodes(b, dx)
    top = min(ca[-1], cb[-1])
    q = np.unique(np.concatenate([ca, cb]))
    q = np.append(q[q < top], top)
    qa, qb = q[:-1], q[1:]
    keep = qb - qa > 0
    qa, qb = qa[keep], qb[keep]
    qm = 0.5 * (qa + qb)
    ka, kb = _locate_mass(qm, ca, a), _locate_mass(qm, cb, b)
    X = lambda s: _quantile(s, ka, a, ca, edges)
    Y = lambda s: _quantile(s, kb, b, cb, edges)
    return dict(qa=qa, qb=qb, qm=qm, ka=ka, kb=kb, X=X, Y=Y, ca=ca, cb=cb, edges=edges, dx=dx)


def w2_squared_1d(a: np.ndarray, b: np.ndarray, grid: Grid, gradient: bool = False):
    """Exact ``W_2^2`` between two 1-D cell-average arrays.

    With ``gradient=True`` also returns the derivative with respect to the
    cell values of ``a`` (a Kantorovich potential integrated over each cell).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    p = _merged_pieces(a, b, grid)
    qa, qb, qm = p["qa"], p["qb"], p["qm"]
    da, dm, db = p["X"](qa) - p["Y"](qa), p["X"](qm) - p["Y"](qm), p["X"](qb) - p["Y"](qb)
    length = qb - qa
    cost = float(np.sum(length / 6.0 * (da**2 + 4 * dm**2 + db**2)))
    if not gradient:
        return cost
    return cost, _w2_gradient(a, b, grid, p)


def _w2_gradient(a, b, grid: Grid, p) -> np.ndarray:
    """Cell integrals of ``2 G`` with ``G(x) = -int_x^L (s - T(s)) ds``.

    ``T = F_b^{-1} o F_a`` is piecewise linear in ``x`` with kinks at the cell
    edges and where ``F_a`` crosses a CDF node of ``b``; on cells without
    mass it is constant. Both integrals below are exact by Simpson's rule.
    """
    n = a.size
    ca, cb, edges, dx = p["ca"], p["cb"], p["edges"], p["dx"]
    cross = np.interp(cb, ca, edges)
    s = np.unique(np.concatenate([edges, cross]))
    sa, sb = s[:-1], s[1:]
    keep = sb - sa > 0
    sa, sb = sa[keep], sb[keep]
    sm = 0.5 * (sa + sb)
    k = np.clip(((sm - edges[0]) / dx).astype(int), 0, n - 1)
    fa = lambda x: ca[k] + a[k] * (x - edges[k])
    j = _locate(fa(sm), cb)
    bj = np.where(b[j] > 0, b[j], np.inf)
    T = lambda x: edges[j] + (fa(x) - cb[j]) / bj
    ra, rm, rb = sa - T(sa), sm - T(sm), sb - T(sb)
    width = sb - sa
    i1 = np.bincount(k, width / 6.0 * (ra + 4 * rm + rb), minlength=n)
    xa, xm, xb = sa - edges[k], sm - edges[k], sb - edges[k]
    i2 = np.bincount(k, width / 6.0 * (ra * xa + 4 * rm * xm + rb * xb), minlength=n)
    tail = np.concatenate([np.cumsum(i1[::-1])[::-1][1:], [0.0]])
    return -2.0 * dx * tail - 2.0 * i2


def quantile_function(rho, grid: Grid, q: np.ndarray) -> np.ndarray:
    rho = _vals(rho)
    cdf = _cdf_nodes(rho, grid.cell_width[0])
    q = np.clip(q, 0.0, cdf[-1])
    cells = _locate_mass(q, cdf, rho)
    return _quantile(q, cells, rho, cdf, grid.axis_edges(0))


def monotone_map(mu, nu, grid: Grid) -> np.ndarray:
    """Monotone rearrangement ``F_nu^{-1} o F_mu`` at the cell midpoints."""
    a = _vals(mu)
    dx = grid.cell_width[0]
    f_mid = _cdf_nodes(a, dx)[:-1] + 0.5 * a * dx
    return quantile_function(nu, grid, f_mid)


def w2_exact_1d(mu: Density, nu: Density) -> TransportResult:
    grid = mu.grid
    if grid.dim != 1:
        raise ValueError("exact transport is only available in 1-D")
    cost = w2_squared_1d(mu.values, nu.values, grid)
    return TransportResult(cost=max(cost, 0.0), mode="exact_1d", map=monotone_map(mu, nu, grid))


def brenier_map_pushforward_check(mu: Density, nu: Density, tmap: np.ndarray) -> float:
    """L^1 gap between ``nu`` and the histogram of ``mu`` pushed by ``tmap``.

    Returns ``inf`` when the map samples are not nondecreasing, since a
    non-monotone map cannot be the gradient of a convex function.
    """
    grid = mu.grid
    tmap = np.asarray(tmap, dtype=float)
    if np.any(np.diff(tmap) < -1e-12):
        return float("inf")
    dx = grid.cell_width[0]
    cells = np.clip(np.floor((tmap - grid.lower[0]) / dx).astype(int), 0, grid.n_cells[0] - 1)
    pushed = np.bincount(cells, mu.values * dx, minlength=grid.n_cells[0]) / dx
    return float(np.abs(pushed - nu.values).sum() * dx)


# -- entropic ----------------------------------------------------------------

def _sqdist(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - y[None, :, :]) ** 2).sum(-1)


class GridLogKernel:
    """Log-domain Gibbs kernel of the squared distance on a tensor grid.

    ``lse(h)[i] = log sum_j exp(h[j] - |x_i - x_j|^2 / eps)``. The kernel
    factorizes over axes, so one application costs ``O(N sum_a n_a)``
    instead of ``O(N^2)``.
    """

    def __init__(self, grid: Grid, eps: float):
        self.grid = grid
        self.eps = float(eps)
        self.mats = []
        for axis in range(grid.dim):
            x = grid.axis_midpoints(axis)
            self.mats.append(-((x[:, None] - x[None, :]) ** 2) / self.eps)

    def lse(self, h: np.ndarray) -> np.ndarray:
        out = np.asarray(h, dtype=float).reshape(self.grid.shape)
        for axis, M in enumerate(self.mats):
            o = np.moveaxis(out, axis, -1)
            out = np.moveaxis(logsumexp(o[..., None, :] + M, axis=-1), -1, axis)
        return out


def _log_weights(rho: np.ndarray, grid: Grid) -> np.ndarray:
    w = np.asarray(rho, dtype=float).reshape(grid.shape) * grid.cell_volume
    with np.errstate(divide="ignore"):
        return np.log(w)


def _eps_schedule(grid: Grid, eps: float) -> list:
    e = max(grid.diameter**2, eps)
    out = []
    while e > eps:
        out.append(e)
        e *= 0.5
    out.append(eps)
    return out


def _sinkhorn_potentials(grid: Grid, loga, logb, eps, max_iter, tol, f=None, g=None,
                         symmetric=False, kernels=None):
    """Log-domain Sinkhorn with epsilon-scaling; returns ``(value, f, g, iters, err)``.

    ``value = <a, f> + <b, g>`` is the entropic cost with ``KL(pi | a x b)``.
    Potentials are defined on the whole grid, including cells without mass.
    """
    kernels = {} if kernels is None else kernels

    def K(e):
        if e not in kernels:
            kernels[e] = GridLogKernel(grid, e)
        return kernels[e]

    schedule = [eps] if f is not None else _eps_schedule(grid, eps)
    f = np.zeros(grid.shape) if f is None else f
    g = np.zeros(grid.shape) if g is None else g
    a = np.exp(loga)
    it, err = 0, np.inf
    for k, e in enumerate(schedule):
        kern = K(e)
        final = k == len(schedule) - 1
        for _ in range(max_iter if final else 5):
            if symmetric:
                f = 0.5 * (f - e * kern.lse(f / e + loga))
                g = f
            else:
                f = -e * kern.lse(g / e + logb)
                g = -e * kern.lse(f / e + loga)
            it += 1
            if final and it % 5 == 0:
                err = _row_error(kern, f, g, loga, logb, a)
                if err < tol:
                    break
    kern = K(eps)
    if symmetric:
        # one exact half-step so the reported potential is a fixed point
        f = -eps * kern.lse(f / eps + loga)
        g = f
    err = _row_error(kern, f, g, loga, logb, a)
    value = float(np.sum(a * f) + np.sum(np.exp(logb) * g))
    return value, f, g, it, err


def _row_error(kern, f, g, loga, logb, a) -> float:
    rows = np.exp(loga + f / kern.eps + kern.lse(g / kern.eps + logb))
    return float(np.abs(rows - a).sum())


def sinkhorn_w2(mu: Density, nu: Density, epsilon: float | None = None, max_iter: int = 5000,
                marginal_tol: float = MARGINAL_TOL, return_plan: bool = False,
                gradient: bool = False, warm: dict | None = None):
    """Debiased entropic cost ``S(mu,nu) - S(mu,mu)/2 - S(nu,nu)/2``.

    With ``gradient=True`` returns ``(result, grad)`` where ``grad`` is the
    derivative of the debiased cost with respect to the cell values of ``mu``.
    ``warm`` is a mutable dict reused between calls to warm-start potentials;
    the ``nu``-``nu`` term is cached there while ``nu`` is unchanged.
    """
    grid = mu.grid
    eps = default_epsilon(grid) if epsilon is None else float(epsilon)
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    warm = {} if warm is None else warm
    kernels = warm.setdefault("kernels", {})
    loga, logb = _log_weights(mu.values, grid), _log_weights(nu.values, grid)

    def run(key, la, lb, symmetric):
        prev = warm.get(key)
        f0, g0 = prev if prev is not None else (None, None)
        val, f, g, it, err = _sinkhorn_potentials(grid, la, lb, eps, max_iter, marginal_tol,
                                                  f0, g0, symmetric, kernels)
        warm[key] = (f, g)
        return val, f, g, it, err

    s_ab, f_ab, g_ab, it, err = run("ab", loga, logb, False)
    s_aa, f_aa, _, it_a, err_a = run("aa", loga, loga, True)
    cached = warm.get("bb_value")
    if cached is not None and np.array_equal(cached[0], nu.values):
        s_bb, it_b, err_b = cached[1], 0, cached[2]
    else:
        s_bb, _, _, it_b, err_b = run("bb", logb, logb, True)
        warm["bb_value"] = (nu.values.copy(), s_bb, err_b)
    cost = s_ab - 0.5 * s_aa - 0.5 * s_bb
    worst = max(err, err_a, err_b)
    converged = worst <= marginal_tol
    if not converged:
        logger.warning("Sinkhorn stopped at marginal error %.2e (tol %.1e)", worst, marginal_tol)
    plan = None
    if return_plan:
        pts = grid.points()
        C = _sqdist(pts, pts)
        logp = (f_ab.ravel()[:, None] + g_ab.ravel()[None, :] - C) / eps \
            + loga.ravel()[:, None] + logb.ravel()[None, :]
        plan = np.exp(logp)
    res = TransportResult(cost=float(cost), mode="entropic", plan=plan, epsilon=eps,
                          iterations=it + it_a + it_b, marginal_error=worst, converged=converged)
    if not gradient:
        return res
    return res, (f_ab - f_aa) * grid.cell_volume


def w2(mu: Density, nu: Density, mode: str = "exact_1d", epsilon: float | None = None) -> float:
    if mode == "exact_1d":
        return w2_exact_1d(mu, nu).cost
    if mode == "entropic":
        return max(sinkhorn_w2(mu, nu, epsilon).cost, 0.0)
    raise ValueError(f"unknown transport mode {mode!r}")


def product_distance_sq(z: State, z_prev: State, mode: str = "exact_1d",
                        epsilon: float | None = None) -> float:
    """``d_W^2(u, u') + d_W^2(v, v')``."""
    return w2(z.u, z_prev.u, mode, epsilon) + w2(z.v, z_prev.v, mode, epsilon)
