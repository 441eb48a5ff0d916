"""Euler scheme: noiseless ODE limit, compensated-jump moments, and the
bitwise reproducibility contract."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from sparsesde import (
    GaussianInitial,
    LevyConfig,
    PathGrid,
    PointMass,
    SimulationDivergedError,
    ValidationError,
    constant_model,
    simulate_ensemble,
    simulate_path,
    sinusoid_model,
)
from sparsesde.simulate import export_paths_csv

LEVY1 = LevyConfig(nu_K=1.0)


def test_noiseless_ode_limit():
    c = constant_model(-1.0, 0.0, 0.0)
    x = simulate_path(c, LEVY1, PathGrid(0.0, 1.0, 10_000), 1.0, seed=1)
    assert abs(x[-1] - math.exp(-1.0)) < 1e-3


def test_zero_dynamics_constant_path():
    c = constant_model(0.0, 0.0, 0.0)
    x = simulate_path(c, LEVY1, PathGrid(0.0, 1.0, 100), 3.25, seed=2)
    npt.assert_array_equal(x, 3.25)


def test_euler_error_halves_with_step():
    # global error of the noiseless scheme is O(dt): halving dt halves it
    c = constant_model(-1.0, 0.0, 0.0)
    errs = []
    for steps in (2000, 4000):
        x = simulate_path(c, LEVY1, PathGrid(0.0, 1.0, steps), 1.0, seed=3)
        errs.append(abs(x[-1] - math.exp(-1.0)))
    ratio = errs[1] / errs[0]
    assert 0.45 < ratio < 0.55


def test_ensemble_bitwise_reproducible():
    c = sinusoid_model()
    grid = PathGrid(0.0, 1.0, 200)
    a = simulate_ensemble(c, LEVY1, grid, PointMass(1.0), 3, master_seed=7)
    b = simulate_ensemble(c, LEVY1, grid, PointMass(1.0), 3, master_seed=7)
    npt.assert_array_equal(a.values, b.values)
    npt.assert_array_equal(a.seeds, b.seeds)


def test_ensemble_row_equals_single_path():
    # per-path child seeds mean row i is reproducible in isolation
    c = sinusoid_model()
    grid = PathGrid(0.0, 1.0, 150)
    ens = simulate_ensemble(c, LEVY1, grid, PointMass(1.0), 5, master_seed=11)
    for i in (0, 2, 4):
        x = simulate_path(c, LEVY1, grid, 1.0, seed=int(ens.seeds[i]))
        npt.assert_array_equal(ens.values[i], x)


def test_initial_law_swap_leaves_driving_noise_alone():
    """The SDE is linear with additive noise, so two ensembles sharing a
    master seed but differing in x0 law differ exactly by the propagated
    initial gap prod_k (1 + mu(t_k) dt)."""
    c = constant_model(-2.0, 0.09, 0.04)
    grid = PathGrid(0.0, 1.0, 100)
    a = simulate_ensemble(c, LEVY1, grid, PointMass(1.0), 4, master_seed=13)
    b = simulate_ensemble(c, LEVY1, grid, PointMass(1.5), 4, master_seed=13)
    growth = np.cumprod(np.concatenate(([1.0], 1.0 - 2.0 * np.full(100, grid.dt))))
    npt.assert_allclose(b.values - a.values, np.tile(0.5 * growth, (4, 1)), rtol=1e-10)


def test_compensated_jump_increments_are_centered():
    # mu=0, sigma=0, xi=1: X(1) is a sum of compensated Poisson increments
    c = constant_model(0.0, 0.0, 1.0)
    ens = simulate_ensemble(c, LEVY1, PathGrid(0.0, 1.0, 50), PointMass(0.0), 10_000, 17)
    final = ens.values[:, -1]
    se = final.std(ddof=1) / math.sqrt(final.size)
    assert abs(final.mean()) < 4.0 * se


def test_jump_increment_variance():
    # per-step variance of xi (N - nu dt) is nu dt; 1e5 draws, 5% tolerance
    c = constant_model(0.0, 0.0, 1.0)
    ens = simulate_ensemble(c, LEVY1, PathGrid(0.0, 1.0, 4), PointMass(0.0), 25_000, 19)
    inc = np.diff(ens.values, axis=1).ravel()
    assert abs(inc.var() / 0.25 - 1.0) < 0.05


def test_ensemble_moments_match_ode():
    from sparsesde import solve_moments

    c = sinusoid_model()
    ens = simulate_ensemble(c, LEVY1, PathGrid(0.0, 1.0, 1000), PointMass(1.0), 20_000, 23)
    sol = solve_moments(c, LEVY1, 1.0, 1.0)
    pts = ens.grid.points
    for u in (0.2, 0.5, 0.9):
        col = ens.values[:, int(round(u * 1000))]
        se_m = col.std(ddof=1) / math.sqrt(col.size)
        se_D = (col**2).std(ddof=1) / math.sqrt(col.size)
        assert abs(col.mean() - float(sol.mean_at(u))) < 4 * se_m
        assert abs(np.mean(col**2) - float(sol.second_moment_at(u))) < 4 * se_D
    # two-time product E[X(0.3) X(0.8)] against the factorised surface
    from sparsesde import cov_value

    prod = ens.values[:, 300] * ens.values[:, 800]
    se = prod.std(ddof=1) / math.sqrt(prod.size)
    assert abs(prod.mean() - float(cov_value(sol, 0.3, 0.8))) < 4 * se
    assert pts[300] == pytest.approx(0.3)


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_divergence_reports_step():
    c = constant_model(1e4, 0.0, 0.0)
    with pytest.raises(SimulationDivergedError) as exc:
        simulate_path(c, LEVY1, PathGrid(0.0, 1.0, 1000), 1.0, seed=29)
    assert exc.value.step >= 0


def test_span_mismatch_rejected():
    c = constant_model(-1.0, 0.0, 0.0, span=(0.0, 0.5))
    with pytest.raises(ValidationError):
        simulate_path(c, LEVY1, PathGrid(0.0, 1.0, 10), 1.0, seed=1)
    with pytest.raises(ValidationError):
        simulate_ensemble(c, LEVY1, PathGrid(0.0, 1.0, 10), PointMass(1.0), 0, 1)


def test_gaussian_initial_law_seeded():
    law = GaussianInitial(2.0, 0.5)
    a = law.sample(np.random.default_rng(4), 1000)
    b = law.sample(np.random.default_rng(4), 1000)
    npt.assert_array_equal(a, b)
    assert abs(a.mean() - 2.0) < 0.1


def test_export_paths_csv(tmp_path):
    c = constant_model(0.0, 0.0, 0.0)
    ens = simulate_ensemble(c, LEVY1, PathGrid(0.0, 1.0, 3), PointMass(1.0), 2, 5)
    dest = tmp_path / "paths.csv"
    export_paths_csv(ens, dest)
    lines = dest.read_text().splitlines()
    assert lines[0] == "path_id,t,x"
    assert len(lines) == 1 + 2 * 4
