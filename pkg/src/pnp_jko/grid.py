"""Uniform box grids, cell-averaged densities and elementary integrals.

All fields live on cell midpoints of a uniform Cartesian grid in one or two
dimensions. Arrays are indexed ``values[i]`` in 1-D and ``values[i, j]``
(``ij`` ordering) in 2-D.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

MASS_TOL = 1e-10
RHO_FLOOR = 1e-300


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred grid on the box ``[lower, upper]``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    n_cells: tuple[int, ...]

    def __post_init__(self):
        lower = tuple(float(a) for a in np.atleast_1d(self.lower))
        upper = tuple(float(b) for b in np.atleast_1d(self.upper))
        n_cells = tuple(int(n) for n in np.atleast_1d(self.n_cells))
        if not (len(lower) == len(upper) == len(n_cells)):
            raise ValueError("lower, upper and n_cells must have the same length")
        if len(lower) not in (1, 2):
            raise ValueError(f"only 1-D and 2-D grids are supported, got dim={len(lower)}")
        if any(n < 4 for n in n_cells):
            raise ValueError(f"need at least 4 cells per axis, got {n_cells}")
        if any(b <= a for a, b in zip(lower, upper)):
            raise ValueError(f"empty box: lower={lower}, upper={upper}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "n_cells", n_cells)

    @classmethod
    def uniform(cls, lower, upper, n_cells) -> "Grid":
        """Build a grid, broadcasting scalars in 2-D when other args are tuples."""
        dims = max(len(np.atleast_1d(a)) for a in (lower, upper, n_cells))
        bc = lambda a: tuple(np.broadcast_to(np.atleast_1d(a), (dims,)).tolist())
        return cls(bc(lower), bc(upper), bc(n_cells))

    @property
    def dim(self) -> int:
        return len(self.n_cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n_cells

    @cached_property
    def cell_width(self) -> np.ndarray:
        return (np.asarray(self.upper) - np.asarray(self.lower)) / np.asarray(self.n_cells)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.cell_width))

    @property
    def volume(self) -> float:
        return float(np.prod(np.asarray(self.upper) - np.asarray(self.lower)))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(np.asarray(self.upper) - np.asarray(self.lower)))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lower) + np.asarray(self.upper))

    def axis_midpoints(self, axis: int) -> np.ndarray:
        dx = self.cell_width[axis]
        return self.lower[axis] + dx * (np.arange(self.n_cells[axis]) + 0.5)

    def axis_edges(self, axis: int) -> np.ndarray:
        return np.linspace(self.lower[axis], self.upper[axis], self.n_cells[axis] + 1)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Midpoint coordinate arrays, each of shape ``self.shape``."""
        axes = [self.axis_midpoints(a) for a in range(self.dim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for axis in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[axis] = 0
            mask[tuple(idx)] = True
            idx[axis] = -1
            mask[tuple(idx)] = True
        return mask

    def points(self) -> np.ndarray:
        """Midpoints flattened to an ``(N, dim)`` array."""
        return np.stack([c.ravel() for c in self.coords], axis=1)

    def evaluate(self, fn) -> np.ndarray:
        """Sample ``fn(*coords)`` at cell midpoints."""
        return np.broadcast_to(np.asarray(fn(*self.coords), dtype=float), self.shape).copy()

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "n_cells": list(self.n_cells)}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        return cls.uniform(d["lower"], d["upper"], d["n_cells"])


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Signed cell-centred field (potentials, test functions, charge)."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ValueError(f"field shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        return cls(grid.evaluate(fn), grid)

    def __neg__(self):
        return ScalarField(-self.values, self.grid)


@dataclass(frozen=True, eq=False)
class Density:
    """Nonnegative cell averages with unit total mass."""

    values: np.ndarray
    grid: Grid
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ValueError(f"density shape {vals.shape} does not match grid {self.grid.shape}")
        if self.check:
            if not np.all(np.isfinite(vals)) or np.any(vals < 0):
                raise ValueError("density must be finite and nonnegative")
            mass = vals.sum() * self.grid.cell_volume
            if abs(mass - 1.0) > MASS_TOL:
                raise ValueError(f"density mass {mass!r} differs from 1 by more than {MASS_TOL}")
        object.__setattr__(self, "values", vals)

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    @classmethod
    def uniform(cls, grid: Grid) -> "Density":
        return normalize(np.ones(grid.shape), grid)


@dataclass(frozen=True, eq=False)
class State:
    """Pair of species densities ``(u, v)`` on a common grid."""

    u: Density
    v: Density

    def __post_init__(self):
        if self.u.grid != self.v.grid:
            raise ValueError("u and v must live on the same grid")

    @property
    def grid(self) -> Grid:
        return self.u.grid

    def swapped(self) -> "State":
        return State(self.v, self.u)

    @classmethod
    def from_arrays(cls, u, v, grid: Grid, check: bool = True) -> "State":
        return cls(Density(u, grid, check=check), Density(v, grid, check=check))


def _vals(f) -> np.ndarray:
    return np.asarray(getattr(f, "values", f), dtype=float)


def integrate(f, grid: Grid | None = None) -> float:
    """Midpoint quadrature ``sum(values) * cell_volume``."""
    grid = grid if grid is not None else f.grid
    return float(_vals(f).sum() * grid.cell_volume)


def lp_norm(rho, p: float, grid: Grid | None = None) -> float:
    """``(int rho^p)^(1/p)``, or the max cell value for ``p = inf``."""
    if p < 1:
        raise ValueError(f"L^p norm needs p >= 1, got {p}")
    vals = np.abs(_vals(rho))
    if np.isinf(p):
        return float(vals.max())
    grid = grid if grid is not None else rho.grid
    return float((np.sum(vals**p) * grid.cell_volume) ** (1.0 / p))


def xlogx(values: np.ndarray) -> np.ndarray:
    """Pointwise ``x log x`` with ``0 log 0 = 0``."""
    values = np.asarray(values, dtype=float)
    out = np.zeros_like(values)
    pos = values > RHO_FLOOR
    out[pos] = values[pos] * np.log(values[pos])
    return out


def boltzmann_entropy(rho, grid: Grid | None = None) -> float:
    grid = grid if grid is not None else rho.grid
    return float(xlogx(_vals(rho)).sum() * grid.cell_volume)


def second_moment(rho, center=None, grid: Grid | None = None) -> float:
    """``int |x - center|^2 rho dx`` using cell midpoints."""
    grid = grid if grid is not None else rho.grid
    center = grid.center if center is None else np.broadcast_to(np.atleast_1d(center), (grid.dim,))
    r2 = sum((c - x0) ** 2 for c, x0 in zip(grid.coords, center))
    return float(np.sum(r2 * _vals(rho)) * grid.cell_volume)


def normalize(values, grid: Grid) -> Density:
    """Rescale a nonnegative field to unit mass."""
    vals = np.asarray(_vals(values), dtype=float)
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise ValueError("normalize expects a finite nonnegative field")
    mass = vals.sum() * grid.cell_volume
    if mass <= 0:
        raise ValueError("cannot normalize a field with zero mass")
    return Density(vals / mass, grid)


def l1_distance(a, b, grid: Grid | None = None) -> float:
    grid = grid if grid is not None else a.grid
    return float(np.abs(_vals(a) - _vals(b)).sum() * grid.cell_volume)
