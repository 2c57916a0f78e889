import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import gaussian
from pnp_jko.diagnostics import (bump_test_functions, check_energy_monotonicity,
                                 check_lp_propagation, check_mass, check_square_distance,
                                 check_weak_form, compare_to_oracle, concentration_bounds,
                                 fit_holder_constant, run_diagnostics, step_table)
from pnp_jko.energy import ModelParams
from pnp_jko.grid import Grid, ScalarField, State, normalize
from pnp_jko.jko import Trajectory, run_trajectory


@pytest.fixture(scope="module")
def short_run():
    g = Grid.uniform(0, 1, 64)
    x = g.coords[0]
    U = ScalarField((x - 0.5) ** 2, g)
    V = ScalarField((x - 0.4) ** 2, g)
    z0 = State(gaussian(g, 0.35, 0.02), gaussian(g, 0.65, 0.02))
    traj = run_trajectory(z0, ModelParams.from_potentials(1, 0.02, U, V), U, V, 10)
    return traj, U, V


def gibbs_run(n=64, steps=5, U_fn=lambda x: 2 * (x - 0.5) ** 2, h=0.01):
    g = Grid.uniform(0, 1, n)
    U = ScalarField(U_fn(g.coords[0]), g)
    gibbs = normalize(np.exp(-U.values), g)
    traj = run_trajectory(State(gibbs, gibbs), ModelParams.from_potentials(1, h, U, U), U, U, steps,
                          el_residuals=False)
    return traj, U


def test_basic_checks_pass(short_run):
    traj, U, V = short_run
    assert check_energy_monotonicity(traj)[0]
    ok, slack = check_square_distance(traj)
    assert ok and slack >= 0
    assert check_mass(traj)[0]


def test_energy_check_counts_violations(short_run):
    traj, U, V = short_run
    fake = Trajectory(states=traj.states, params=traj.params, reports=traj.reports,
                      energies=list(traj.energies))
    fake.energies[3], fake.energies[4] = fake.energies[4], fake.energies[3]
    ok, worst, n_bad = check_energy_monotonicity(fake)
    assert not ok and n_bad == 1 and worst > 0


def test_lp_factor_for_quadratic_wells(short_run):
    traj, U, V = short_run
    assert traj.params.lam == pytest.approx(2.0)
    traj01 = Trajectory(traj.states, ModelParams.from_potentials(1, 0.1, U, V))
    rep = check_lp_propagation(traj01, 2.0)
    assert rep.factor_bound == pytest.approx(1.25)


def test_lp_zero_lambda_reduces_to_monotone_norms():
    traj, U = gibbs_run(U_fn=lambda x: 0.7 * x)
    assert traj.params.lam == pytest.approx(0.0, abs=1e-9)
    rep = check_lp_propagation(traj, 2.0)
    assert rep.status == "pass"
    assert rep.factor_bound == pytest.approx(1.0)
    assert max(rep.step_ratios) <= 1 + 1e-9


def test_lp_inapplicable_when_h_too_large(short_run):
    traj, U, V = short_run
    big = Trajectory(traj.states, ModelParams.from_potentials(1, 0.5, U, V))
    assert check_lp_propagation(big, 2.0).status == "inapplicable"
    assert check_lp_propagation(traj, np.inf).status == "inapplicable"


def test_holder_constant_positive(short_run):
    traj, U, V = short_run
    fit = fit_holder_constant(traj)
    assert fit["n_pairs"] > 0
    assert 0 < fit["C"] <= fit["C_max"] < np.inf


def test_concentration_bounds_finite(short_run):
    traj, U, V = short_run
    c = concentration_bounds(traj)
    assert c.shape == (traj.n_steps + 1,) and np.all(np.isfinite(c))


# -- weak form ----------------------------------------------------------------

def test_test_function_family():
    g = Grid.uniform(0, 1, 64)
    tfs = bump_test_functions(g)
    assert len(tfs) == 15 and len({t.label for t in tfs}) == 15
    g2 = Grid.uniform((0, 0), (1, 1), (8, 8))
    assert len(bump_test_functions(g2)) == 15


@given(c=st.floats(0.3, 0.7), s=st.floats(0.1, 0.3), x=st.floats(0.0, 1.0))
def test_bump_derivative_matches_finite_difference(c, s, x):
    g = Grid.uniform(0, 1, 8)
    phi = bump_test_functions(g, scales=(s,), centers=(c,))[0]
    t = 1e-6
    fd = (phi(np.array([x + t])) - phi(np.array([x - t]))) / (2 * t)
    assert phi.partial(0, np.array([x]))[0] == pytest.approx(fd[0], abs=1e-6)


def test_weak_residual_vanishes_on_gibbs_state():
    traj, U = gibbs_run(n=128)
    w = check_weak_form(traj, U, U)
    assert max(np.abs(w["u"]).max(), np.abs(w["v"]).max()) <= 1e-3


def test_weak_residual_swap_symmetry(short_run):
    traj, U, V = short_run
    swapped = Trajectory([z.swapped() for z in traj.states], traj.params)
    a = check_weak_form(traj, U, V)
    b = check_weak_form(swapped, V, U)
    assert np.array_equal(a["u"], b["v"]) and np.array_equal(a["v"], b["u"])


# -- oracle, aggregate ------------------------------------------------------------

def test_compare_to_oracle(short_run):
    traj, U, V = short_run
    assert compare_to_oracle(traj, traj.states[-1], traj.n_steps * traj.params.h) == (0.0, 0.0)
    other = State(gaussian(Grid.uniform(0, 1, 32), 0.5, 0.1), gaussian(Grid.uniform(0, 1, 32), 0.5, 0.1))
    with pytest.raises(ValueError):
        compare_to_oracle(traj, other, 0.0)


def test_report_round_trips_through_json(short_run):
    traj, U, V = short_run
    rep = run_diagnostics(traj, U, V, lp_exponents=(2.0, np.inf))
    assert rep.passed
    d = json.loads(rep.to_json())
    assert d["schema_version"] == "1.0"
    assert d["passed"] is True
    assert d["lp_propagation"]["inf"]["status"] == "inapplicable"
    assert len(d["el_residuals"]) == traj.n_steps
    assert len(d["weak_residuals"]["labels"]) == 15


def test_step_table_rows(short_run):
    traj, U, V = short_run
    rows = step_table(traj)
    assert len(rows) == traj.n_steps + 1
    assert rows[0]["d2_step"] == 0.0 and rows[1]["d2_step"] > 0
    E = [r["E_total"] for r in rows]
    assert np.all(np.diff(E) <= 0)
