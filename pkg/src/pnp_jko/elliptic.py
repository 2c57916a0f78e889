"""Neumann Poisson problem ``-Lap psi = w`` on the box, zero-mean gauge.

The discrete Laplacian is the standard (2d+1)-point stencil with ghost-cell
reflection, i.e. zero flux through every boundary face. Gradients live on
cell faces, so that

    sum_faces |grad psi|^2 * vol == sum_cells psi * w * vol

holds exactly up to the linear-solve residual (summation by parts).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid, ScalarField, _vals

POISSON_TOL = 1e-10
COMPAT_TOL = 1e-8


class IncompatibleSourceError(ValueError):
    """Raised when the Neumann compatibility condition ``int w = 0`` fails."""


class PoissonConvergenceError(RuntimeError):
    def __init__(self, msg, residual):
        super().__init__(msg)
        self.residual = residual


def _laplacian_1d(n: int, dx: float) -> sp.csr_matrix:
    main = -2.0 * np.ones(n)
    main[0] = main[-1] = -1.0
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / dx**2


@lru_cache(maxsize=32)
def neumann_laplacian(grid: Grid) -> sp.csr_matrix:
    """Sparse Neumann Laplacian acting on C-ordered flattened cell arrays."""
    ops = [_laplacian_1d(n, dx) for n, dx in zip(grid.n_cells, grid.cell_width)]
    if grid.dim == 1:
        return ops[0].tocsr()
    nx, ny = grid.n_cells
    return (sp.kron(ops[0], sp.identity(ny)) + sp.kron(sp.identity(nx), ops[1])).tocsr()


def apply_laplacian(values: np.ndarray, grid: Grid) -> np.ndarray:
    return (neumann_laplacian(grid) @ np.ravel(values)).reshape(grid.shape)


def free_laplacian(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Second differences without boundary reflection.

    Boundary cells reuse the one-sided stencil ``f0 - 2 f1 + f2``; this is the
    Laplacian of the potential itself, not of its Neumann extension.
    """
    values = np.asarray(values, dtype=float)
    out = np.zeros_like(values)
    for axis, dx in enumerate(grid.cell_width):
        f = np.moveaxis(values, axis, 0)
        d2 = np.empty_like(f)
        d2[1:-1] = f[2:] - 2 * f[1:-1] + f[:-2]
        d2[0] = f[0] - 2 * f[1] + f[2]
        d2[-1] = f[-1] - 2 * f[-2] + f[-3]
        out += np.moveaxis(d2, 0, axis) / dx**2
    return out


@lru_cache(maxsize=32)
def _bordered_solver(grid: Grid):
    """LU of the Laplacian bordered with the mean constraint."""
    n = int(np.prod(grid.shape))
    lap = neumann_laplacian(grid)
    ones = sp.csr_matrix(np.ones((1, n)) / n)
    mat = sp.bmat([[-lap, ones.T], [ones, None]], format="csc")
    return spla.factorized(mat)


def poisson_potential(w: np.ndarray, grid: Grid) -> np.ndarray:
    """Zero-mean ``psi`` with ``-Lap psi = w - mean(w)``, without validation.

    Inner loops of time integrators call this; use :func:`solve_poisson_neumann`
    elsewhere.
    """
    w = np.asarray(w, dtype=float)
    if grid.dim == 1:
        # the tridiagonal Neumann system integrates twice: face gradients are
        # -cumulative sums of w dx, psi the cumulative sum of those
        dx = grid.cell_width[0]
        grad = -np.cumsum(w[:-1] - w.mean()) * dx
        psi = np.concatenate([[0.0], np.cumsum(grad) * dx])
        return psi - psi.mean()
    sol = _bordered_solver(grid)(np.append(w.ravel() - w.mean(), 0.0))[:-1]
    return (sol - sol.mean()).reshape(grid.shape)


def face_gradients(psi: np.ndarray, grid: Grid) -> list[np.ndarray]:
    """Per-axis differences on all faces, boundary faces set to zero.

    Axis ``a`` returns an array with ``n_a + 1`` entries along that axis.
    """
    out = []
    for axis, dx in enumerate(grid.cell_width):
        d = np.diff(psi, axis=axis) / dx
        pad = [(0, 0)] * grid.dim
        pad[axis] = (1, 1)
        out.append(np.pad(d, pad))
    return out


def cell_gradient(psi: np.ndarray, grid: Grid) -> np.ndarray:
    """Cell-centred gradient, shape ``(dim, *grid.shape)``, averaging faces."""
    faces = face_gradients(np.asarray(psi, dtype=float), grid)
    comps = []
    for axis, g in enumerate(faces):
        g = np.moveaxis(g, axis, 0)
        comps.append(np.moveaxis(0.5 * (g[1:] + g[:-1]), 0, axis))
    return np.stack(comps)


@dataclass(frozen=True, eq=False)
class PoissonSolution:
    psi: ScalarField
    face_gradient: list
    residual_norm: float

    @property
    def grid(self) -> Grid:
        return self.psi.grid

    @property
    def gradient(self) -> np.ndarray:
        return cell_gradient(self.psi.values, self.grid)


def solve_poisson_neumann(w, grid: Grid | None = None, method: str = "direct",
                          tol: float = POISSON_TOL) -> PoissonSolution:
    """Solve ``-Lap psi = w`` with zero normal derivative and zero mean.

    ``method="cg"`` runs matrix-free conjugate gradients on the zero-mean
    subspace instead of the cached direct factorisation.
    """
    grid = grid if grid is not None else w.grid
    wv = _vals(w).reshape(grid.shape)
    scale = np.abs(wv).max() if wv.size else 0.0
    mean = wv.mean()
    if abs(mean) * grid.volume > COMPAT_TOL * max(1.0, scale * grid.volume):
        raise IncompatibleSourceError(
            f"Neumann problem needs a zero-mean source, got int w = {mean * grid.volume:.3e}")
    if scale == 0.0:
        zero = np.zeros(grid.shape)
        return PoissonSolution(ScalarField(zero, grid), face_gradients(zero, grid), 0.0)

    rhs = (wv - mean).ravel()
    lap = neumann_laplacian(grid)
    if method == "direct":
        sol = _bordered_solver(grid)(np.concatenate([rhs, [0.0]]))
        psi = sol[:-1]
    elif method == "cg":
        n = rhs.size
        op = spla.LinearOperator((n, n), matvec=lambda x: -(lap @ (x - x.mean())), dtype=float)
        psi, info = spla.cg(op, rhs, rtol=tol * 1e-2, atol=0.0, maxiter=20 * n)
        if info != 0:
            res = np.linalg.norm(-(lap @ psi) - rhs) / np.linalg.norm(rhs)
            raise PoissonConvergenceError(f"CG did not converge (info={info})", res)
    else:
        raise ValueError(f"unknown Poisson method {method!r}")

    psi = psi - psi.mean()
    residual = float(np.linalg.norm(-(lap @ psi) - rhs) / np.linalg.norm(rhs))
    if residual > tol:
        raise PoissonConvergenceError(f"Poisson residual {residual:.2e} exceeds {tol:.0e}", residual)
    psi = psi.reshape(grid.shape)
    return PoissonSolution(ScalarField(psi, grid), face_gradients(psi, grid), residual)


def dirichlet_energy(sol: PoissonSolution) -> float:
    """``1/2 int |grad psi|^2`` with the face gradient of the solver."""
    grid = sol.grid
    return 0.5 * float(sum(np.sum(g**2) for g in sol.face_gradient)) * grid.cell_volume


def ibp_identity_check(w, grid: Grid | None = None) -> tuple[float, float, float]:
    """Return ``(int |grad psi|^2, int psi w, relative gap)``."""
    grid = grid if grid is not None else w.grid
    sol = solve_poisson_neumann(w, grid)
    lhs = 2.0 * dirichlet_energy(sol)
    rhs = float(np.sum(sol.psi.values * _vals(w)) * grid.cell_volume)
    denom = max(abs(lhs), abs(rhs))
    gap = abs(lhs - rhs) / denom if denom > 0 else 0.0
    return lhs, rhs, gap
