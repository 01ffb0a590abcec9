"""Scenario registry, synthetic data generation, fitting entry points,
weight calibration, and predictive summaries."""
import numpy as np
import pytest
from scipy.stats import norm

from pcuq import (
    ConfigError,
    Dataset,
    LocationMap,
    calibrate_lambda,
    coverage_metrics,
    erk_system,
    fit_bayes,
    fit_mmd_bayes,
    fit_pcuq,
    generate_dataset,
    get_scenario,
    integrate,
    list_scenarios,
    predictive_summary,
    scenario_predictive,
    true_trajectory,
)
from pcuq.experiments import PredictiveSummary, _allocate_draws, _erk_noise_sd


def test_registry_names_and_shapes():
    names = list_scenarios()
    assert "gauss-location" in names and "erk" in names
    for name in names:
        sc = get_scenario(name)
        assert sc.name == name
        assert sc.theta_true.shape == (sc.param_dim,)
        assert sc.noise_sd().shape == (sc.obs_dim,)
        assert np.all(sc.noise_sd() > 0)
    with pytest.raises(ConfigError, match="unknown scenario"):
        get_scenario("volterra")


def test_dataset_shapes():
    cases = {
        "gauss-location": (20, 1),
        "lv-wellspec": (61, 2),
        "erk": (80, 11),
    }
    for name, (n, d) in cases.items():
        ds = generate_dataset(get_scenario(name), seed=0)
        assert ds.y.shape == (n, d)
        assert ds.x.shape == (n,)


def test_dataset_determinism_and_seed_sensitivity():
    sc = get_scenario("lv-wellspec")
    a = generate_dataset(sc, seed=0)
    b = generate_dataset(sc, seed=0)
    np.testing.assert_array_equal(a.y, b.y)
    c = generate_dataset(sc, seed=1)
    assert not np.array_equal(a.y, c.y)


def test_misspecified_data_comes_from_a_different_process():
    well = generate_dataset(get_scenario("lv-wellspec"), seed=0)
    mis = generate_dataset(get_scenario("lv-misspec"), seed=0)
    assert not np.array_equal(well.y, mis.y)
    # only the second coordinate carries intrinsic noise, but coupling
    # spreads it; the realised paths must still start together
    t_well = true_trajectory(get_scenario("lv-wellspec"))
    t_mis = true_trajectory(get_scenario("lv-misspec"))
    np.testing.assert_allclose(t_well[0], (10.0, 10.0))
    np.testing.assert_allclose(t_mis[0], (10.0, 10.0))
    assert not np.allclose(t_well[1:], t_mis[1:])


def test_true_trajectory_grid_and_guards():
    sc = get_scenario("lv-wellspec")
    path = true_trajectory(sc)
    assert path.shape == (241, 2)
    with pytest.raises(ValueError, match="intervention"):
        true_trajectory(sc, intervention=0.5)
    with pytest.raises(ValueError, match="custom grids"):
        true_trajectory(sc, times=np.arange(4.0))


def test_erk_untreated_intervention_is_the_identity():
    """Treatment strength one leaves every rate unscaled, so the treated
    path must coincide with the recorded generator path."""
    sc = get_scenario("erk")
    plain = true_trajectory(sc, seed=3)
    unit = true_trajectory(sc, intervention=1.0)
    np.testing.assert_allclose(unit, plain, rtol=1e-12)
    treated = true_trajectory(sc, intervention=0.25)
    assert not np.allclose(treated, plain)


def test_erk_noise_scale_against_coarse_quadrature():
    sd = _erk_noise_sd()
    assert sd.shape == (11,)
    assert np.all(sd > 0)
    grid = np.arange(1201) * 0.05
    traj = integrate(erk_system(modulated=True), grid, step=0.05)
    np.testing.assert_allclose(sd, 0.1 * traj.states.std(axis=0), rtol=0.03)


def test_fit_bayes_recovers_the_location_toy():
    sc = get_scenario("gauss-location")
    ds = generate_dataset(sc, seed=0)
    res = fit_bayes(sc, ds, seed=0, n_iter=1500, n_chains=4)
    assert res.chains.shape == (4, 1501, 1)
    assert 0.2 < res.acceptance.mean() <= 1.0
    var_post = 1.0 / (1.0 + ds.n)
    mean_post = var_post * ds.y.sum()
    assert res.samples.mean() == pytest.approx(mean_post, abs=0.05)


def test_fit_mmd_bayes_concentrates_near_the_data():
    sc = get_scenario("gauss-location")
    ds = generate_dataset(sc, seed=0)
    res = fit_mmd_bayes(sc, ds, seed=0, n_iter=800, n_chains=2)
    assert abs(res.samples.mean() - ds.y.mean()) < 0.2
    assert res.samples.var(ddof=1) < 0.5


def test_fit_pcuq_result_views_and_determinism():
    sc = get_scenario("gauss-location")
    ds = generate_dataset(sc, seed=0)
    res = fit_pcuq(sc, ds, seed=0, n_iter=300, n_particles=4)
    assert res.lam == sc.lambda_star
    K = res.joint.samples.shape[0]
    assert res.ensembles.shape == (K, 4, 1)
    assert res.atoms.shape == (K * 4, 1)
    np.testing.assert_array_equal(res.ensembles.reshape(-1, 1), res.atoms)
    assert 0.0 < res.acceptance <= 1.0
    again = fit_pcuq(sc, ds, seed=0, n_iter=300, n_particles=4)
    np.testing.assert_array_equal(res.atoms, again.atoms)


def test_allocate_draws_properties():
    counts = np.array([5, 1, 1, 3])
    alloc = _allocate_draws(1000, counts)
    assert alloc.sum() == 1000
    np.testing.assert_array_less(
        np.abs(alloc - 1000 * counts / counts.sum()), 1.0 + 1e-9
    )
    # every atom draws at least once, even when the budget runs short
    tiny = _allocate_draws(2, np.ones(5, dtype=np.int64))
    assert np.all(tiny >= 1)
    np.testing.assert_array_equal(alloc, _allocate_draws(1000, counts))


def test_predictive_summary_moments_and_quartiles():
    times = np.zeros(3)
    forward = LocationMap(3, 1)
    params = np.array([[0.0], [0.0], [2.0]])   # duplicated atom
    s = predictive_summary(params, forward, times, np.array([0.5]),
                           draws=200_000, seed=0)
    assert s.mean.shape == (3, 1)
    np.testing.assert_allclose(s.mean, 2.0 / 3.0)
    assert np.all(s.q25 <= s.q50) and np.all(s.q50 <= s.q75)

    single = predictive_summary(np.array([[1.5]]), forward, times,
                                np.array([0.5]), draws=200_000, seed=0)
    z = norm.ppf(0.75) * 0.5
    np.testing.assert_allclose(single.q50, 1.5, atol=0.01)
    np.testing.assert_allclose(single.q25, 1.5 - z, atol=0.01)
    np.testing.assert_allclose(single.q75, 1.5 + z, atol=0.01)


def test_predictive_summary_validation_and_seeding():
    forward = LocationMap(2, 1)
    times = np.zeros(2)
    params = np.array([[0.3]])
    with pytest.raises(ValueError, match="draws"):
        predictive_summary(params, forward, times, np.array([1.0]), draws=0)
    with pytest.raises(ValueError, match="parameter"):
        predictive_summary(np.empty((0, 1)), forward, times, np.array([1.0]))
    a = predictive_summary(params, forward, times, np.array([1.0]),
                           draws=500, seed=0)
    b = predictive_summary(params, forward, times, np.array([1.0]),
                           draws=500, seed=0)
    c = predictive_summary(params, forward, times, np.array([1.0]),
                           draws=500, seed=1)
    np.testing.assert_array_equal(a.q25, b.q25)
    assert not np.array_equal(a.q25, c.q25)
    np.testing.assert_array_equal(a.mean, c.mean)   # mean is noise-free


def test_scenario_predictive_guards_interventions():
    sc = get_scenario("lv-wellspec")
    with pytest.raises(ValueError, match="intervention"):
        scenario_predictive(sc, np.array([[-2.0, -4.0]]), intervention=0.5)


def test_coverage_metrics_counts_band_membership():
    times = np.arange(4.0)
    q25 = np.zeros((4, 2))
    q75 = np.ones((4, 2))
    s = PredictiveSummary(times=times, mean=0.5 * np.ones((4, 2)),
                          q25=q25, q50=0.5 * np.ones((4, 2)), q75=q75)
    truth = np.array([
        [0.5, 2.0],
        [0.2, 2.0],
        [0.9, 2.0],
        [1.5, 0.5],
    ])
    m = coverage_metrics(s, truth)
    np.testing.assert_allclose(m.coverage, [0.75, 0.25])
    np.testing.assert_allclose(m.width, [1.0, 1.0])
    with pytest.raises(ValueError, match="does not match"):
        coverage_metrics(s, truth[:3])


def test_calibration_matches_spread_on_the_toy():
    sc = get_scenario("gauss-location")
    ladder = (0.01, 0.1, 1.0)
    res = calibrate_lambda(sc, seed=0, ladder=ladder, mala_iters=400,
                           n_particles=8)
    assert res.lambda_star in ladder
    assert res.bayes_spread > 0
    assert np.all(np.isfinite(res.pcuq_spread))
    mismatch = np.abs(np.log(res.pcuq_spread) - np.log(res.bayes_spread))
    assert res.lambda_star == res.ladder[np.argmin(mismatch)]
    # looser regularisation leaves a wider ensemble
    assert res.pcuq_spread[-1] > res.pcuq_spread[0]


def test_calibration_rejects_bad_ladders():
    sc = get_scenario("gauss-location")
    with pytest.raises(ValueError, match="positive"):
        calibrate_lambda(sc, ladder=(0.1, -1.0))
    with pytest.raises(ValueError, match="positive"):
        calibrate_lambda(sc, ladder=())
