import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pnp_jko.grid import Density, Grid, State, normalize
from pnp_jko.transport import (brenier_map_pushforward_check, default_epsilon, monotone_map,
                               product_distance_sq, sinkhorn_w2, w2_exact_1d, w2_squared_1d)


def atomic_w2(a, b, grid, k=400):
    """Independent route: split every cell into ``k`` equal atoms and couple the two
    atomic measures monotonically (north-west corner rule)."""
    edges = grid.axis_edges(0)
    dx = grid.cell_width[0]
    sub = (np.arange(k) + 0.5) / k

    def atoms(rho):
        x = (edges[:-1, None] + dx * sub[None, :]).ravel()
        w = np.repeat(rho * dx / k, k)
        return x[w > 0], np.cumsum(w[w > 0]) / w.sum()

    xa, ca = atoms(a)
    xb, cb = atoms(b)
    q = np.unique(np.concatenate([[0.0], ca, cb]))
    q = q[q <= min(ca[-1], cb[-1])]
    qm = 0.5 * (q[1:] + q[:-1])
    ia = np.minimum(np.searchsorted(ca, qm), xa.size - 1)
    ib = np.minimum(np.searchsorted(cb, qm), xb.size - 1)
    return float(np.sum(np.diff(q) * (xa[ia] - xb[ib]) ** 2))


def bump(grid, c, w):
    x = grid.coords[0]
    return normalize(np.exp(-((x - c) ** 2) / (2 * w * w)), grid)


def test_identity_cost_zero():
    g = Grid.uniform(0, 1, 64)
    d = bump(g, 0.4, 0.1)
    assert w2_exact_1d(d, d).cost == pytest.approx(0, abs=1e-15)
    assert sinkhorn_w2(d, d).cost <= 1e-9


def test_uniform_to_half_uniform():
    g = Grid.uniform(0, 1, 512)
    mu = Density.uniform(g)
    vals = np.zeros(512)
    vals[:256] = 2.0
    nu = Density(vals, g)
    res = w2_exact_1d(mu, nu)
    assert res.cost == pytest.approx(1 / 12, abs=1e-4)
    assert res.cost == pytest.approx(1 / 12, abs=1e-12)  # exact on piecewise-constant data
    assert brenier_map_pushforward_check(mu, nu, res.map) <= 2e-2


def test_narrow_bumps_translation_limit():
    g = Grid.uniform(0, 1, 1024)
    costs = [w2_exact_1d(bump(g, 0.3, w), bump(g, 0.6, w)).cost for w in (0.02, 0.01, 0.005)]
    assert all(np.isfinite(costs))
    # equal shapes: the cost is exactly the squared shift up to discretization
    assert costs[-1] == pytest.approx(0.09, rel=1e-3)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_exact_matches_sampled_oracle(seed):
    g = Grid.uniform(0, 1, 40)
    rng = np.random.default_rng(seed)
    a, b = rng.random(40) + 0.05, rng.random(40) ** 3
    b[10:15] = 0.0  # vacuum gap
    da, db = normalize(a, g), normalize(b, g)
    # atomic error is O((dx/k)^2)
    assert w2_exact_1d(da, db).cost == pytest.approx(atomic_w2(da.values, db.values, g), abs=1e-6)


def test_gradient_matches_finite_differences():
    g = Grid.uniform(0, 1, 30)
    rng = np.random.default_rng(4)
    a, b = normalize(rng.random(30) + 0.1, g).values, normalize(rng.random(30) + 0.1, g).values
    _, grad = w2_squared_1d(a, b, g, gradient=True)
    d = rng.normal(size=30)
    d -= d.mean()
    t = 1e-6
    fd = (w2_squared_1d(a + t * d, b, g) - w2_squared_1d(a - t * d, b, g)) / (2 * t)
    assert fd == pytest.approx(grad @ d, rel=1e-6)


def test_entropic_close_to_exact_1d():
    g = Grid.uniform(0, 1, 128)
    mu, nu = bump(g, 0.35, 0.08), bump(g, 0.6, 0.1)
    exact = w2_exact_1d(mu, nu).cost
    ent = sinkhorn_w2(mu, nu)
    assert ent.epsilon == pytest.approx(default_epsilon(g)) == pytest.approx(1e-3)
    assert ent.converged
    assert abs(ent.cost - exact) / exact <= 1e-2


def test_entropic_2d_translation():
    g = Grid.uniform((0, 0), (1, 1), (32, 32))
    X, Y = g.coords
    s = np.array([0.25, -0.15])

    def b2(c):
        return normalize(np.exp(-((X - c[0]) ** 2 + (Y - c[1]) ** 2) / (2 * 0.05**2)), g)

    c0 = np.array([0.35, 0.6])
    res = sinkhorn_w2(b2(c0), b2(c0 + s), epsilon=1e-3)
    assert res.cost == pytest.approx(s @ s, rel=0.02)


def test_product_distance_is_additive():
    g = Grid.uniform(0, 1, 256)
    u0, v0 = bump(g, 0.3, 0.03), bump(g, 0.7, 0.03)
    u1, v1 = bump(g, 0.4, 0.03), bump(g, 0.55, 0.03)
    z = State(u0, v0)
    assert product_distance_sq(z, z) == pytest.approx(0, abs=1e-14)
    assert product_distance_sq(State(u1, v0), z) == pytest.approx(w2_exact_1d(u1, u0).cost)
    both = product_distance_sq(State(u1, v1), z)
    assert both == pytest.approx(0.1**2 + 0.15**2, rel=1e-3)
    assert both == pytest.approx(w2_exact_1d(u1, u0).cost + w2_exact_1d(v1, v0).cost, rel=1e-12)


def test_pushforward_check_flags_nonmonotone_map():
    g = Grid.uniform(0, 1, 64)
    mu = Density.uniform(g)
    x = g.coords[0]
    assert brenier_map_pushforward_check(mu, mu, x) <= 1e-12
    assert brenier_map_pushforward_check(mu, mu, x[::-1]) == np.inf


dens = arrays(float, 24, elements=st.floats(0.0, 5.0)).filter(lambda a: a.sum() > 0.5)


@given(dens, dens, dens)
def test_w2_is_a_metric(a, b, c):
    g = Grid.uniform(0, 1, 24)
    A, B, C = (normalize(v, g) for v in (a, b, c))
    dab = np.sqrt(w2_exact_1d(A, B).cost)
    assert dab == pytest.approx(np.sqrt(w2_exact_1d(B, A).cost), abs=1e-10)
    dac, dcb = np.sqrt(w2_exact_1d(A, C).cost), np.sqrt(w2_exact_1d(C, B).cost)
    assert dab <= dac + dcb + 1e-9
    assert 0 <= dab <= 1.0


@given(dens, dens)
def test_monotone_map_is_monotone_and_pushes_forward(a, b):
    g = Grid.uniform(0, 1, 24)
    A, B = normalize(a, g), normalize(b, g)
    T = monotone_map(A, B, g)
    assert np.all(np.diff(T) >= -1e-12)
    assert np.all((T >= -1e-12) & (T <= 1 + 1e-12))
