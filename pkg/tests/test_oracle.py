"""Grid fixed-point solver: convergence, uniqueness, refinement
stability, and consistency with the kernel it discretises."""
import numpy as np
import pytest

from pcuq import (
    Dataset,
    FixedPointError,
    GaussianObsModel,
    GaussianPrior,
    LocationMap,
    SteinKernel,
    potential,
    solve_fixed_point,
)


@pytest.fixture(scope="module")
def location_setup():
    rng = np.random.default_rng(0)
    n, sigma = 6, 1.0
    y = 0.6 + sigma * rng.standard_normal((n, 1))
    ds = Dataset(np.zeros(n), y)
    model = GaussianObsModel(LocationMap(n, 1), np.array([sigma]))
    return SteinKernel(ds, model), GaussianPrior.standard(1)


def test_solver_converges_below_tolerance(location_setup):
    kernel, prior = location_setup
    res = solve_fixed_point(kernel, prior, 0.1, n_points=121)
    assert res.residual < 1e-8
    assert res.n_iter < 5000
    m = res.measure
    assert m.weights.shape == (121,)
    assert m.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(m.weights >= 0)
    # density integrates to one over the grid cells
    assert m.density().sum() * m.cell == pytest.approx(1.0, abs=1e-12)


def test_solution_is_a_fixed_point_of_the_update(location_setup):
    """Re-derive the update map from public pieces and confirm the
    returned weights are stationary under it."""
    kernel, prior = location_setup
    lam = 0.1
    res = solve_fixed_point(kernel, prior, lam, n_points=121)
    m = res.measure
    V = potential(kernel, m, m.points)
    t = prior.log_pdf(m.points) - V / lam
    t -= t.max()
    target = np.exp(t)
    target /= target.sum()
    np.testing.assert_allclose(target, m.weights, atol=1e-8)


def test_potential_differs_from_kernel_average_by_a_constant(location_setup):
    """The solver drops the theta-independent part of the data-centred
    kernel; the remainder must match kappa averages up to one shift."""
    kernel, prior = location_setup
    res = solve_fixed_point(kernel, prior, 0.1, n_points=61)
    m = res.measure
    probes = np.array([[-1.2], [0.0], [0.8], [2.1]])
    V = potential(kernel, m, probes)
    kap = np.array([
        m.weights @ np.array([kernel.kappa(t, g) for g in m.points])
        for t in probes
    ])
    shifts = V - kap
    np.testing.assert_allclose(shifts, shifts[0], atol=1e-10)


def test_fixed_point_ignores_the_starting_measure(location_setup):
    kernel, prior = location_setup
    a = solve_fixed_point(kernel, prior, 0.1, n_points=121)
    lopsided = np.linspace(1.0, 200.0, 121)
    b = solve_fixed_point(kernel, prior, 0.1, n_points=121, init=lopsided)
    np.testing.assert_allclose(a.measure.weights, b.measure.weights,
                               atol=1e-7)


def test_refining_the_grid_barely_moves_the_moments(location_setup):
    kernel, prior = location_setup
    coarse = solve_fixed_point(kernel, prior, 0.1, n_points=201).measure
    fine = solve_fixed_point(kernel, prior, 0.1, n_points=401).measure
    assert coarse.mean()[0] == pytest.approx(fine.mean()[0], abs=1e-4)
    assert coarse.cov()[0, 0] == pytest.approx(fine.cov()[0, 0], rel=1e-3)


def test_measure_sits_between_prior_and_data(location_setup):
    kernel, prior = location_setup
    m = solve_fixed_point(kernel, prior, 0.1, n_points=121).measure
    data_mean = kernel.dataset.y.mean()
    lo, hi = sorted((prior.mean[0], data_mean))
    assert lo <= m.mean()[0] <= hi
    assert m.cov()[0, 0] < prior.sd[0] ** 2


def test_residual_history_and_failure(location_setup):
    kernel, prior = location_setup
    with pytest.raises(FixedPointError) as exc:
        solve_fixed_point(kernel, prior, 0.1, n_points=61, max_iter=3)
    assert len(exc.value.residuals) == 3
    ok = solve_fixed_point(kernel, prior, 0.1, n_points=61)
    assert ok.residual_history[-1] == pytest.approx(ok.residual)
    assert ok.residual_history.shape == (ok.n_iter,)


def test_solver_validation(location_setup):
    kernel, _ = location_setup
    prior3 = GaussianPrior.standard(3)
    with pytest.raises(ValueError, match="p <= 2"):
        solve_fixed_point(kernel, prior3, 0.1)
    prior = GaussianPrior.standard(1)
    with pytest.raises(ValueError, match="lam"):
        solve_fixed_point(kernel, prior, -0.1)
    with pytest.raises(ValueError, match="damping"):
        solve_fixed_point(kernel, prior, 0.1, damping=0.0)
    with pytest.raises(ValueError, match="damping"):
        solve_fixed_point(kernel, prior, 0.1, damping=1.5)
    with pytest.raises(ValueError, match="init"):
        solve_fixed_point(kernel, prior, 0.1, n_points=61,
                          init=np.ones(60))
    prior2 = GaussianPrior.standard(2)
    with pytest.raises(ValueError, match="dense-solver range"):
        solve_fixed_point(kernel, prior2, 0.1, n_points=101)
