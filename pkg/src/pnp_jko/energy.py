"""Free energy of the two-species system and its first variation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elliptic import dirichlet_energy, free_laplacian, solve_poisson_neumann
from .grid import RHO_FLOOR, Grid, State, _vals, xlogx


@dataclass(frozen=True)
class ModelParams:
    """Diffusion exponent ``m``, time step ``h`` and the potential bound ``lam``."""

    m: float
    h: float
    lam: float = 0.0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"diffusion exponent must be >= 1, got {self.m}")
        if self.h <= 0:
            raise ValueError(f"time step must be positive, got {self.h}")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")

    @property
    def m_prime(self) -> float:
        return np.inf if self.m == 1 else self.m / (self.m - 1)

    @property
    def linear(self) -> bool:
        return self.m == 1

    @classmethod
    def from_potentials(cls, m, h, U, V, grid: Grid | None = None) -> "ModelParams":
        return cls(float(m), float(h), potential_lambda(U, V, grid))

    def h0(self, p: float) -> float:
        """Largest admissible step for the L^p propagation estimate."""
        if np.isinf(p):
            return 0.0
        return np.inf if self.lam == 0 else 1.0 / (self.lam * (p - 1))


def potential_lambda(U, V, grid: Grid | None = None) -> float:
    """``max(sup |Lap U|, sup |Lap V|)`` from cell second differences."""
    grid = grid if grid is not None else U.grid
    return float(max(np.abs(free_laplacian(_vals(U), grid)).max(),
                     np.abs(free_laplacian(_vals(V), grid)).max()))


@dataclass(frozen=True)
class EnergyBreakdown:
    diff: float
    ext: float
    cpl: float

    @property
    def total(self) -> float:
        return self.diff + self.ext + self.cpl

    def as_dict(self) -> dict:
        return {"E_diff": self.diff, "E_ext": self.ext, "E_cpl": self.cpl, "E_total": self.total}


def diffusion_density(rho: np.ndarray, m: float) -> np.ndarray:
    """Integrand of the internal energy for one species."""
    if m == 1:
        return xlogx(rho)
    return rho**m / (m - 1)


def e_diff(z: State, m: float) -> float:
    vol = z.grid.cell_volume
    return float((diffusion_density(z.u.values, m).sum() + diffusion_density(z.v.values, m).sum()) * vol)


def e_ext(z: State, U, V) -> float:
    vol = z.grid.cell_volume
    return float(np.sum(z.u.values * _vals(U) + z.v.values * _vals(V)) * vol)


def coupling_solution(z: State):
    return solve_poisson_neumann(z.u.values - z.v.values, z.grid)


def e_cpl(z: State) -> float:
    return dirichlet_energy(coupling_solution(z))


def total_energy(z: State, params: ModelParams, U, V) -> EnergyBreakdown:
    return EnergyBreakdown(e_diff(z, params.m), e_ext(z, U, V), e_cpl(z))


def diffusion_variation(rho: np.ndarray, m: float) -> np.ndarray:
    if m == 1:
        return np.log(np.maximum(rho, RHO_FLOOR)) + 1.0
    return m / (m - 1) * rho ** (m - 1)


def first_variation(z: State, params: ModelParams, U, V, psi: np.ndarray | None = None):
    """Return ``(phi_u, phi_v)``, the L^2 gradients of the free energy.

    For ``m = 1`` cells below the positivity floor get ``log(floor)``; callers
    exclude them from any residual.
    """
    if psi is None:
        psi = coupling_solution(z).psi.values
    phi_u = diffusion_variation(z.u.values, params.m) + _vals(U) + psi
    phi_v = diffusion_variation(z.v.values, params.m) + _vals(V) - psi
    return phi_u, phi_v
