"""End-to-end acceptance: closed forms, gradients, positive
semidefiniteness, cascade structure, oracle and sampler agreement, the
predator-prey and signalling studies, weight and ensemble-size
insensitivity, and byte-level reproducibility.

Each test finishes by printing one PASS line with the measured numbers
(run with -s to see them); a failing criterion prints FAIL instead.
"""
import hashlib
import json
import os

import numpy as np
import pytest
from scipy.stats import wasserstein_distance

from pcuq import (
    Dataset,
    GaussianObsModel,
    GaussianPrior,
    SteinKernel,
    conserved_totals,
    coverage_metrics,
    embed_double_grad1,
    embed_double_mc,
    embed_single_grad,
    embed_single_mc,
    erk_system,
    fit_bayes,
    fit_pcuq,
    generate_dataset,
    get_scenario,
    integrate,
    joint_particle_target,
    mala,
    run_flow,
    scenario_predictive,
    solve_fixed_point,
    true_trajectory,
    tune_step,
)
from pcuq.cli import main as cli_main
from pcuq.dynamics import ERK_STEP
from pcuq.models import log_density, log_density_grad

from conftest import central_diff, linear_map


def report(n, ok, detail):
    print(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {detail}",
          flush=True)
    assert ok, f"criterion {n}: {detail}"


def thin(a, cap):
    a = np.asarray(a)
    if a.shape[0] <= cap:
        return a
    return a[::int(np.ceil(a.shape[0] / cap))]


def rel_err(got, want):
    want = np.asarray(want, dtype=float)
    scale = max(float(np.linalg.norm(want)), 1e-12)
    return float(np.linalg.norm(np.asarray(got, dtype=float) - want)) / scale


# ---------------------------------------------------------------------------
# Shared heavy fixtures

def band_stats(sc, params, truth, *, intervention=None, cap=2500):
    atoms = thin(np.asarray(params, dtype=float), cap)
    summary = scenario_predictive(sc, atoms, seed=0,
                                  intervention=intervention)
    return coverage_metrics(summary, truth)


@pytest.fixture(scope="module")
def lv_well():
    sc = get_scenario("lv-wellspec")
    ds = generate_dataset(sc, seed=0)
    truth = true_trajectory(sc, 0)
    bayes = fit_bayes(sc, ds, seed=0)
    lams = (sc.lambda_star / 10, sc.lambda_star, sc.lambda_star * 10)
    pcuq = {lam: fit_pcuq(sc, ds, seed=0, lam=lam) for lam in lams}
    return {
        "sc": sc, "truth": truth,
        "bayes_samples": bayes.samples,
        "bayes_stats": band_stats(sc, bayes.samples, truth),
        "pcuq_stats": {lam: band_stats(sc, r.atoms, truth)
                       for lam, r in pcuq.items()},
    }


@pytest.fixture(scope="module")
def lv_mis():
    sc = get_scenario("lv-misspec")
    out = []
    for seed in (0, 1, 2):
        ds = generate_dataset(sc, seed=seed)
        truth = true_trajectory(sc, seed)
        bayes = fit_bayes(sc, ds, seed=seed)
        pcuq = fit_pcuq(sc, ds, seed=seed)
        out.append({
            "seed": seed, "ds": ds, "truth": truth,
            "pcuq_atoms": pcuq.atoms,
            "bayes_stats": band_stats(sc, bayes.samples, truth),
            "pcuq_stats": band_stats(sc, pcuq.atoms, truth),
        })
    return {"sc": sc, "runs": out}


@pytest.fixture(scope="module")
def toy():
    sc = get_scenario("gauss-location")
    ds = generate_dataset(sc, seed=0)
    kernel = sc.kernel_for(ds, seed=0)
    prior = sc.prior()
    lam = sc.lambda_star
    flow = run_flow(kernel, prior, lam, n_steps=sc.flow_steps,
                    n_particles=sc.n_particles,
                    step_size=sc.flow_step_size, seed=0)
    grid = solve_fixed_point(kernel, prior, lam)
    return {"kernel": kernel, "prior": prior, "lam": lam,
            "flow": flow, "grid": grid}


@pytest.fixture(scope="module")
def erk_runs():
    sc = get_scenario("erk")
    ds = generate_dataset(sc, seed=0)
    truth = true_trajectory(sc, intervention=sc.meki_gamma)
    bayes = fit_bayes(sc, ds, seed=0)
    pcuq = fit_pcuq(sc, ds, seed=0)
    kw = {"intervention": sc.meki_gamma, "cap": 1500}
    return {
        "sc": sc,
        "bayes_stats": band_stats(sc, bayes.samples, truth, **kw),
        "pcuq_stats": band_stats(sc, pcuq.atoms, truth, **kw),
    }


# ---------------------------------------------------------------------------
# 1. closed-form embeddings against Monte Carlo

def test_criterion_01_embeddings_match_monte_carlo():
    from pcuq.kernels import embed_double, embed_single

    rng = np.random.default_rng(0)
    worst = 0.0
    for i in range(50):
        d = int(rng.integers(1, 4))
        y, w, v = rng.normal(size=(3, d))
        sigma = rng.uniform(0.2, 1.5, size=d)
        ell = rng.uniform(0.3, 2.0, size=d)

        mc, se = embed_single_mc(y, w, sigma, ell, 1_000_000, seed=rng)
        z = abs(embed_single(y, w, sigma, ell) - mc) / se
        worst = max(worst, z)

        mc, se = embed_double_mc(w, v, sigma, ell, 1_000_000, seed=rng)
        z = abs(embed_double(w, v, sigma, ell) - mc) / se
        worst = max(worst, z)
    report(1, worst <= 3.0,
           f"50 configs, worst |closed form - MC| = {worst:.2f} SE (<= 3)")


# ---------------------------------------------------------------------------
# 2. analytic gradients against central finite differences

def test_criterion_02_gradient_suite():
    rng = np.random.default_rng(1)
    worst = {}

    d = 3
    sigma = rng.uniform(0.3, 1.2, size=d)
    ell = rng.uniform(0.4, 1.5, size=d)
    J = rng.normal(size=(d, 2))
    w0, v0, y = rng.normal(size=(3, d))
    errs = []
    for _ in range(20):
        th = rng.normal(size=2)
        _, g = embed_single_grad(y, w0 + J @ th, J, sigma, ell)
        fd = central_diff(
            lambda t: embed_single_grad(y, w0 + J @ t, J, sigma, ell)[0], th)
        errs.append(rel_err(g, fd))
        _, g = embed_double_grad1(w0 + J @ th, v0, J, sigma, ell)
        fd = central_diff(
            lambda t: embed_double_grad1(w0 + J @ t, v0, J, sigma, ell)[0], th)
        errs.append(rel_err(g, fd))
    worst["embeddings"] = max(errs)

    forward = linear_map(6, 2, 2, seed=2)
    x = np.arange(6.0)
    yobs = rng.normal(size=(6, 2))
    ds = Dataset(x, yobs)
    model = GaussianObsModel(forward, np.array([0.8, 1.1]))
    sk = SteinKernel(ds, model)
    errs = []
    for _ in range(20):
        a, b = rng.normal(size=(2, 2))
        g = sk.kappa_grad1(a, b)
        fd = central_diff(lambda t: sk.kappa(t, b), a)
        errs.append(rel_err(g, fd))
    worst["stein kernel"] = max(errs)

    errs = []
    for _ in range(20):
        th = rng.normal(size=2)
        _, g = log_density_grad(model, th, yobs)
        fd = central_diff(lambda t: log_density(model, t, yobs), th)
        errs.append(rel_err(g, fd))
    worst["log-density"] = max(errs)

    prior = GaussianPrior.standard(2)
    target = joint_particle_target(sk, prior, 0.2, 3)
    errs = []
    for _ in range(20):
        flat = rng.normal(size=6)
        _, g = target(flat)
        fd = central_diff(lambda t: target(t)[0], flat)
        errs.append(rel_err(g, fd))
    worst["joint target"] = max(errs)

    sc = get_scenario("lv-wellspec")
    times = np.arange(0.0, 21.0)
    ode = sc.forward_map(times)
    ode_model = GaussianObsModel(ode, np.array([1.0, 1.0]))
    yode = true_trajectory(sc, 0)[:84:4] + rng.normal(size=(21, 2))
    errs = []
    for _ in range(20):
        th = rng.normal(size=2)
        _, g = log_density_grad(ode_model, th, yode)
        fd = central_diff(lambda t: log_density(ode_model, t, yode), th)
        errs.append(rel_err(g, fd))
    worst["ode sensitivities"] = max(errs)

    exact_bad = {k: v for k, v in worst.items()
                 if k != "ode sensitivities" and v > 1e-5}
    ode_bad = worst["ode sensitivities"] > 1e-4
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(2, not exact_bad and not ode_bad,
           f"20 points each, worst relative errors: {detail}")


# ---------------------------------------------------------------------------
# 3. Gram positive semidefiniteness

def test_criterion_03_gram_matrices_are_psd():
    rng = np.random.default_rng(3)
    worst = -np.inf
    for i in range(10):
        n = int(rng.integers(4, 25))
        d = int(rng.integers(1, 4))
        p = int(rng.integers(1, 4))
        forward = linear_map(n, d, p, seed=100 + i,
                             constant=bool(i % 2))
        x = np.zeros(n) if i % 2 else np.arange(float(n))
        ds = Dataset(x, rng.normal(size=(n, d)))
        kernel = SteinKernel(ds, GaussianObsModel(
            forward, rng.uniform(0.4, 1.3, size=d)))
        G = kernel.gram(rng.normal(size=(20, p)))
        ratio = np.linalg.eigvalsh(G).min() / np.trace(G)
        worst = max(worst, -ratio)
    report(3, worst <= 1e-8,
           f"10 datasets, m=20: worst -min_eig/trace = {worst:.2e} (<= 1e-8)")


# ---------------------------------------------------------------------------
# 4. cascade conservation laws

def test_criterion_04_erk_conservation_laws():
    times = np.arange(6401) * ERK_STEP
    worst = 0.0
    for system in (erk_system(),
                   erk_system(modulated=True),
                   erk_system(modulated=True, meki=0.01)):
        traj = integrate(system, times)
        totals = conserved_totals(traj.states)
        drift = np.abs(totals - totals[0]).max(axis=0) / totals[0]
        worst = max(worst, float(drift.max()))
    report(4, worst <= 1e-6,
           f"5 laws, 3 systems, [0,60]: worst relative drift {worst:.1e}")


# ---------------------------------------------------------------------------
# 5. particle flow against the grid fixed point

def test_criterion_05_flow_matches_grid_oracle(toy):
    grid = toy["grid"]
    w1 = wasserstein_distance(
        toy["flow"].atoms[:, 0], grid.measure.points[:, 0],
        v_weights=grid.measure.weights,
    )
    other = solve_fixed_point(
        toy["kernel"], toy["prior"], toy["lam"],
        init=np.linspace(1.0, 50.0, grid.measure.weights.shape[0]),
    )
    init_gap = float(np.abs(other.measure.weights
                            - grid.measure.weights).max())
    ok = (w1 <= 0.05 and grid.residual < 1e-8 and init_gap < 1e-7)
    report(5, ok,
           f"W1(flow, grid) = {w1:.4f} (<= 0.05 prior sd), residual "
           f"{grid.residual:.1e}, init gap {init_gap:.1e}")


# ---------------------------------------------------------------------------
# 6. flow against sampling the joint particle density

def test_criterion_06_flow_matches_joint_mala(toy):
    kernel, prior, lam = toy["kernel"], toy["prior"], toy["lam"]
    N = toy["flow"].history.shape[1]
    target = joint_particle_target(kernel, prior, lam, N)
    init = np.zeros(N)
    step = tune_step(target, init, step0=0.4 * np.sqrt(lam), seed=6)
    res = mala(target, init, n_iter=4000, step=step, n_chains=8, seed=6)

    chain_atoms = res.retained.reshape(res.retained.shape[0], -1)
    m_means = chain_atoms.mean(axis=1)
    m_sds = chain_atoms.std(axis=1, ddof=1)

    hist = toy["flow"].history[:, :, 0]
    batches = np.array_split(hist, 20, axis=0)
    f_means = np.array([b.mean() for b in batches])
    f_sds = np.array([b.std(ddof=1) for b in batches])

    gaps = []
    for f, m in ((f_means, m_means), (f_sds, m_sds)):
        se = np.hypot(f.std(ddof=1) / np.sqrt(len(f)),
                      m.std(ddof=1) / np.sqrt(len(m)))
        gaps.append(abs(f.mean() - m.mean()) / se)
    report(6, max(gaps) <= 3.0,
           f"mean gap {gaps[0]:.2f} SE, sd gap {gaps[1]:.2f} SE (<= 3)")


# ---------------------------------------------------------------------------
# 7. predator-prey study

def test_criterion_07a_wellspecified_concentration_and_width(lv_well):
    mean = lv_well["bayes_samples"].mean(axis=0)
    gap = float(np.abs(mean - np.array([-2.0, -4.0])).max())
    lam_star = lv_well["sc"].lambda_star
    ratios = (lv_well["pcuq_stats"][lam_star].width
              / lv_well["bayes_stats"].width)
    ok = gap <= 0.5 and np.all(ratios >= 0.5) and np.all(ratios <= 2.0)
    report(7, ok,
           f"(a) posterior mean gap {gap:.3f} (<= 0.5), width ratios "
           f"{np.round(ratios, 3)} in [0.5, 2]")


def test_criterion_07b_misspecified_widening_and_coverage(lv_mis):
    details, ok = [], True
    for run in lv_mis["runs"]:
        ratio = (run["pcuq_stats"].width.mean()
                 / run["bayes_stats"].width.mean())
        cov_p = run["pcuq_stats"].coverage.mean()
        cov_b = run["bayes_stats"].coverage.mean()
        ok = ok and ratio >= 2.0 and cov_p > cov_b
        details.append(f"seed {run['seed']}: width x{ratio:.1f}, "
                       f"coverage {cov_p:.2f} vs {cov_b:.2f}")
    report(7, ok, "(b) " + "; ".join(details))


# ---------------------------------------------------------------------------
# 8. weight insensitivity, one decade each way

def test_criterion_08_lambda_decade_insensitivity(lv_well):
    sc = lv_well["sc"]
    w = {lam: stats.width.mean()
         for lam, stats in lv_well["pcuq_stats"].items()}
    base = w[sc.lambda_star]
    up = abs(w[sc.lambda_star * 10] - base) / base
    down = abs(w[sc.lambda_star / 10] - base) / base
    report(8, up < 0.5 and down < 0.5,
           f"mean width change: x10 -> {up:.1%}, /10 -> {down:.1%} (< 50%)")


# ---------------------------------------------------------------------------
# 9. ensemble-size insensitivity

def test_criterion_09_particle_count_insensitivity(lv_mis):
    sc = lv_mis["sc"]
    ds = lv_mis["runs"][0]["ds"]
    iqrs = {10: np.subtract(
        *np.percentile(lv_mis["runs"][0]["pcuq_atoms"], [75, 25], axis=0))}
    for n in (5, 15):
        atoms = fit_pcuq(sc, ds, seed=0, n_particles=n).atoms
        iqrs[n] = np.subtract(*np.percentile(atoms, [75, 25], axis=0))
    stacked = np.array([iqrs[n] for n in (5, 10, 15)])
    ratio = float((stacked.max(axis=0) / stacked.min(axis=0)).max())
    report(9, ratio <= 2.0,
           f"N in {{5,10,15}}: worst per-coordinate IQR ratio {ratio:.2f} "
           f"(<= 2)")


# ---------------------------------------------------------------------------
# 10. signalling study under treatment

def test_criterion_10_erk_meki_bands(erk_runs):
    u5 = 4
    wb = erk_runs["bayes_stats"].width[u5]
    wp = erk_runs["pcuq_stats"].width[u5]
    cb = erk_runs["bayes_stats"].coverage[u5]
    cp = erk_runs["pcuq_stats"].coverage[u5]
    ok = wb < 0.25 * wp and cp > cb
    report(10, ok,
           f"u5 width: standard {wb:.4f} vs ensemble {wp:.4f} "
           f"({wb / wp:.1%} < 25%), coverage {cp:.2f} > {cb:.2f}")


# ---------------------------------------------------------------------------
# 11. byte-identical reruns

def test_criterion_11_byte_identical_reruns(tmp_path):
    out = str(tmp_path)
    steps = [
        ["generate-data", "--out", out, "--seed", "0",
         "run.scenario=gauss-location"],
        ["fit", "--out", out, "--seed", "0", "run.scenario=gauss-location",
         "run.method=pcuq", "flow.lambda=0.1", "flow.particles=4",
         "chain.iters=150"],
        ["predict", "--out", out, "--seed", "0",
         "run.scenario=gauss-location", "predict.draws=500"],
        ["oracle", "--out", out, "--seed", "0",
         "run.scenario=gauss-location", "flow.lambda=0.1",
         "oracle.points=101"],
        ["calibrate-lambda", "--out", out, "--seed", "0",
         "run.scenario=gauss-location", "calibrate.ladder=0.05,0.5",
         "calibrate.iters=120", "flow.particles=6"],
        ["report", "--out", out, "run.scenario=gauss-location",
         f"report.runs={out}", f"report.truth={out}/truth.csv"],
    ]

    def run_all():
        digests = {}
        for argv in steps:
            assert cli_main(argv) == 0
            with open(os.path.join(out, "manifest.json")) as fh:
                for name, sha in json.load(fh)["outputs"].items():
                    digests[f"{argv[0]}:{name}"] = sha
        return digests

    first = run_all()
    second = run_all()
    same = first == second
    report(11, same,
           f"{len(steps)} commands rerun: {len(first)} artifacts "
           f"byte-identical")
