import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pnp_jko.grid import (Density, Grid, ScalarField, State, boltzmann_entropy, integrate,
                          l1_distance, lp_norm, normalize, second_moment)


def test_grid_geometry():
    g = Grid.uniform(0.0, 2.0, 64)
    assert g.dim == 1 and g.shape == (64,)
    assert g.cell_volume == pytest.approx(2 / 64)
    assert g.axis_edges(0)[[0, -1]].tolist() == [0.0, 2.0]
    g2 = Grid.uniform((0.0, -1.0), (1.0, 1.0), (8, 16))
    assert g2.shape == (8, 16) and g2.cell_volume == pytest.approx(1 / 8 * 2 / 16)
    assert g2.boundary_mask.sum() == 2 * 8 + 2 * 16 - 4
    assert Grid.from_dict(g2.to_dict()) == g2


@pytest.mark.parametrize("kwargs", [dict(lower=0, upper=0, n_cells=8), dict(lower=0, upper=1, n_cells=2),
                                    dict(lower=(0, 0, 0), upper=(1, 1, 1), n_cells=(4, 4, 4))])
def test_grid_rejects_bad_input(kwargs):
    with pytest.raises(ValueError):
        Grid.uniform(**kwargs)


def test_integrate_examples():
    g = Grid.uniform(0, 2, 64)
    assert integrate(ScalarField(np.zeros(64), g)) == 0.0
    assert integrate(ScalarField(np.ones(64), g)) == pytest.approx(2.0, abs=1e-14)
    g = Grid.uniform(0, 1, 128)
    assert integrate(ScalarField(g.coords[0], g)) == pytest.approx(0.5, abs=1e-6)


def test_lp_norm_examples():
    g1, g2 = Grid.uniform(0, 1, 50), Grid.uniform(0, 2, 50)
    assert lp_norm(Density.uniform(g1), 2) == pytest.approx(1.0)
    assert lp_norm(Density.uniform(g2), 2) == pytest.approx(1 / np.sqrt(2))
    assert lp_norm(Density.uniform(g2), np.inf) == pytest.approx(0.5)


def test_entropy_examples():
    for upper, expected in ((1.0, 0.0), (2.0, -np.log(2)), (0.5, np.log(2))):
        g = Grid.uniform(0, upper, 40)
        assert boltzmann_entropy(Density.uniform(g)) == pytest.approx(expected, abs=1e-13)


def test_entropy_handles_vacuum():
    g = Grid.uniform(0, 1, 10)
    vals = np.zeros(10)
    vals[:5] = 2.0
    assert boltzmann_entropy(Density(vals, g)) == pytest.approx(np.log(2))


def test_second_moment_examples():
    g = Grid.uniform(0, 1, 256)
    # midpoint rule on x^2 is low by 1/(12 n^2)
    assert second_moment(Density.uniform(g), center=0.0) == pytest.approx(1 / 3, abs=1e-4)
    assert second_moment(Density.uniform(g), center=0.0) == pytest.approx(1 / 3 - 1 / (12 * 256**2), abs=1e-14)
    g = Grid.uniform(-1, 1, 256)
    assert second_moment(Density.uniform(g), center=0.0) == pytest.approx(1 / 3, abs=1e-4)
    g = Grid.uniform(0, 1, 101)
    spike = np.zeros(101)
    spike[50] = 101.0
    assert second_moment(Density(spike, g), center=0.5) <= g.cell_width[0] ** 2


def test_normalize_examples():
    g = Grid.uniform(0, 1, 32)
    d = Density.uniform(g)
    assert np.array_equal(normalize(d.values, g).values, d.values)
    assert np.allclose(normalize(3 * np.ones(32), g).values, 1.0)
    with pytest.raises(ValueError):
        normalize(np.zeros(32), g)
    with pytest.raises(ValueError):
        normalize(-np.ones(32), g)


def test_density_validation():
    g = Grid.uniform(0, 1, 8)
    with pytest.raises(ValueError):
        Density(np.ones(8) * 2, g)
    with pytest.raises(ValueError):
        Density(np.ones(9), g)
    with pytest.raises(ValueError):
        State(Density.uniform(g), Density.uniform(Grid.uniform(0, 2, 8)))


positive = arrays(float, 32, elements=st.floats(0.0, 10.0)).filter(lambda a: a.sum() > 1e-3)


@given(positive)
def test_normalized_mass_and_l1_norm(vals):
    g = Grid.uniform(0, 1, 32)
    d = normalize(vals, g)
    assert abs(d.mass - 1) <= 1e-12
    assert lp_norm(d, 1) == pytest.approx(1.0, abs=1e-12)


@given(positive, st.floats(1.0, 6.0), st.floats(1.0, 6.0))
def test_lp_norm_monotone_in_p_on_unit_box(vals, p, q):
    # on a domain of volume 1, ||.||_p is nondecreasing in p
    g = Grid.uniform(0, 1, 32)
    d = normalize(vals, g)
    lo, hi = sorted((p, q))
    assert lp_norm(d, lo) <= lp_norm(d, hi) * (1 + 1e-12)
    assert lp_norm(d, hi) <= lp_norm(d, np.inf) * (1 + 1e-12)


@given(positive)
def test_entropy_minimized_by_uniform(vals):
    g = Grid.uniform(0, 1, 32)
    assert boltzmann_entropy(normalize(vals, g)) >= -1e-12


@given(positive, positive)
def test_l1_distance_is_a_metric(a, b):
    g = Grid.uniform(0, 1, 32)
    da, db = normalize(a, g), normalize(b, g)
    assert l1_distance(da, da) == 0
    assert l1_distance(da, db) == pytest.approx(l1_distance(db, da))
    assert l1_distance(da, db) <= 2 + 1e-12
