"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Reference values for the student-rating example are transcribed to four
decimals; everything else is checked against independent oracles in
``oracles.py`` or against exact moment formulas.
"""
import time

import numpy as np
import pytest

from acceptance_log import record
from oracles import finite_difference_gradient, pml_newton, pooled_proportions
from phidiv.cli import main
from phidiv.divergence import divergence
from phidiv.estimation import fit, score_cressie_read, score_general
from phidiv.inference import design_effect, rho2_binder, rho2_moments
from phidiv.model import SurveyDataset, cluster_probabilities
from phidiv.samplers import OverdispersionSpec, sample
from phidiv.simulation import ScenarioConfig, draw_dataset, replicate_rng, run_scenario

LAMBDAS = [0.0, 2 / 3, 1.0, 1.5, 2.0, 2.5]
LABELS = ["0", "2/3", "1", "1.5", "2", "2.5"]
SEED = 20160901

# rows beta_11, beta_12, beta_13, beta_21, ..., beta_43; columns follow LAMBDAS
UNC_BETA = np.array([
    [-0.5188, -0.4933, -0.4802, -0.4604, -0.4411, -0.4228],
    [-1.2910, -1.2475, -1.2400, -1.2381, -1.2424, -1.2494],
    [-0.4665, -0.3889, -0.3649, -0.3397, -0.3230, -0.3116],
    [0.0127, 0.0564, 0.0773, 0.1069, 0.1336, 0.1573],
    [-0.4210, -0.4676, -0.4899, -0.5213, -0.5498, -0.5750],
    [0.2761, 0.2974, 0.3079, 0.3233, 0.3380, 0.3517],
    [0.2056, 0.1947, 0.1894, 0.1816, 0.1741, 0.1670],
    [0.2946, 0.2438, 0.2196, 0.1857, 0.1551, 0.1280],
    [0.4803, 0.4770, 0.4754, 0.4733, 0.4714, 0.4697],
    [0.1715, 0.1870, 0.1944, 0.2048, 0.2143, 0.2228],
    [0.2048, 0.1512, 0.1256, 0.0896, 0.0570, 0.0280],
    [0.2070, 0.2488, 0.2668, 0.2906, 0.3111, 0.3288],
])

# fitted probabilities: UNC_PI[lambda][design] over the five ratings
UNC_PI = np.array([
    [[.1185, .2016, .2445, .2363, .1991], [.0611, .1458, .2983, .2727, .2222],
     [.1083, .2276, .2791, .2124, .1727]],
    [[.1200, .2079, .2387, .2369, .1965], [.0660, .1439, .2931, .2672, .2297],
     [.1145, .2275, .2723, .2167, .1690]],
    [[.1208, .2109, .2359, .2371, .1952], [.0676, .1431, .2909, .2648, .2336],
     [.1163, .2279, .2695, .2188, .1675]],
    [[.1221, .2152, .2319, .2374, .1934], [.0693, .1420, .2879, .2616, .2392],
     [.1179, .2289, .2659, .2215, .1657]],
    [[.1234, .2191, .2282, .2376, .1917], [.0705, .1410, .2854, .2587, .2444],
     [.1188, .2301, .2630, .2240, .1641]],
    [[.1246, .2226, .2248, .2377, .1902], [.0714, .1402, .2831, .2562, .2491],
     [.1192, .2314, .2604, .2262, .1628]],
])

# intra-cluster correlation rows for strata 2 (Sophomore) and 3 (Junior)
RHO2_BINDER = {1: [0.0119, 0.0123, 0.0127, 0.0135, 0.0142, 0.0150],
               2: [0.0088, 0.0072, 0.0066, 0.0059, 0.0054, 0.0051]}
RHO2_MOMENTS = {1: [0.0119, 0.0048, 0.0051, 0.0056, 0.0061, 0.0067],
                2: [0.0088, 0.0014, 0.0010, 0.0006, 0.0003, 0.0000]}


@pytest.fixture(scope="module")
def unc_fits(unc):
    start = time.perf_counter()
    fits = [fit(unc, lam) for lam in LAMBDAS]
    return fits, time.perf_counter() - start


def test_criterion_1_unc_coefficients(unc_fits):
    fits, elapsed = unc_fits
    got = np.column_stack([f.beta_hat for f in fits])
    err = np.max(np.abs(got - UNC_BETA))
    ok = err <= 5e-4 and elapsed < 5.0 and all(f.converged for f in fits)
    record(1, ok, f"max |beta - table| = {err:.2e} (tol 5e-4), {elapsed:.2f} s for six fits")
    assert ok


def test_criterion_2_unc_probabilities(unc, unc_fits):
    fits, _ = unc_fits
    designs = np.argmax(unc.covariates, axis=1)
    first = [int(np.flatnonzero(designs == j)[0]) for j in range(3)]
    worst = 0.0
    for i, res in enumerate(fits):
        probs = cluster_probabilities(unc.covariates, res.beta_hat)[first]
        worst = max(worst, np.max(np.abs(probs - UNC_PI[i])))
    pooled = pooled_proportions(unc.counts, unc.weights, designs)
    probs0 = cluster_probabilities(unc.covariates, fits[0].beta_hat)
    closed = max(np.max(np.abs(probs0[i] - pooled[designs[i]])) for i in range(unc.n_clusters))
    ok = worst <= 5e-4 and closed <= 1e-10
    record(2, ok, f"max |pi - table| = {worst:.2e} (tol 5e-4), "
                  f"closed form gap at lambda=0 = {closed:.1e} (tol 1e-10)")
    assert ok


def test_criterion_3_intra_cluster_correlation(unc, unc_fits):
    fits, _ = unc_fits
    binder = {h: [rho2_binder(unc.stratum(h), f.beta_hat).rho2_hat for f in fits] for h in (1, 2)}
    moments = {h: [rho2_moments(unc.stratum(h), f.beta_hat).rho2_hat for f in fits]
               for h in (1, 2)}
    misses = []
    for label, got, want in (("binder", binder, RHO2_BINDER), ("moments", moments, RHO2_MOMENTS)):
        for h in (1, 2):
            for j, lam in enumerate(LABELS):
                if abs(got[h][j] - want[h][j]) > 5e-4:
                    misses.append(f"{label} h={h + 1} lambda={lam}: "
                                  f"{got[h][j]:.4f} vs {want[h][j]:.4f}")
    # diagnostic: how the computed rows line up with the reference rows when swapped
    swapped = max(abs(binder[h][j] - RHO2_MOMENTS[h][j]) for h in (1, 2) for j in range(1, 6))
    swapped = max(swapped, max(abs(moments[h][j] - RHO2_BINDER[h][j])
                               for h in (1, 2) for j in range(6)))
    ok = not misses
    record(3, ok, f"{24 - len(misses)}/24 entries within 5e-4; with the two reference rows "
                  f"exchanged (lambda != 0 for binder) the max gap is {swapped:.1e}")
    for line in misses:
        print("   ", line)
    assert ok, "\n".join(misses)


def test_criterion_4_gradient_oracle():
    rng = np.random.default_rng(SEED)
    worst_fd, worst_paths = 0.0, 0.0
    for _ in range(50):
        d, k, n = int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(2, 21))
        X = np.column_stack([np.ones(n), rng.normal(size=(n, k - 1))])
        sizes = rng.integers(2, 30, size=n)
        counts = np.vstack([rng.multinomial(s, rng.dirichlet(np.ones(d + 1))) for s in sizes])
        data = SurveyDataset(rng.integers(0, 3, size=n), rng.uniform(0.5, 4, size=n), sizes,
                             counts, X)
        beta = rng.normal(size=d * k) * 0.5
        lam = float(rng.choice([-0.5, 0.0, 2 / 3, 1.0, 1.5, 2.0, 2.5]))
        u = score_general(data, beta, lam)
        fd = -data.tau * finite_difference_gradient(lambda b: divergence(data, b, lam), beta)
        worst_fd = max(worst_fd, np.linalg.norm(u - fd) / np.linalg.norm(u))
        gap = np.max(np.abs(u - score_cressie_read(data, beta, lam)))
        worst_paths = max(worst_paths, gap / max(1.0, np.max(np.abs(u))))
    ok = worst_fd < 1e-6 and worst_paths <= 1e-10
    record(4, ok, f"50 instances: max relative FD error {worst_fd:.1e} (tol 1e-6), "
                  f"general vs closed-form score gap {worst_paths:.1e} (tol 1e-10)")
    assert ok


def test_criterion_5_sampler_moments():
    pi = np.array([0.1, 0.2, 0.3, 0.4])
    worst_mean, worst_cov, worst_entry = 0.0, 0.0, 0.0
    for i, family in enumerate(("dirichlet_multinomial", "random_clumped", "m_inflated")):
        for rho2 in (0.0, 0.25, 0.75):
            for m in (5, 21):
                spec = OverdispersionSpec(pi, rho2, m, family)
                draws = sample(spec, SEED + i, 100_000)
                gap = draws.mean(axis=0) - m * pi
                mean_err = np.linalg.norm(gap) / np.linalg.norm(m * pi)
                worst_entry = max(worst_entry, np.max(np.abs(gap) / (m * pi)))
                target = spec.covariance()
                cov_err = (np.linalg.norm(np.cov(draws, rowvar=False) - target)
                           / np.linalg.norm(target))
                worst_mean = max(worst_mean, mean_err)
                worst_cov = max(worst_cov, cov_err)
    ok = worst_mean < 0.01 and worst_cov < 0.03
    record(5, ok, f"18 settings x 1e5 draws: max relative mean error {worst_mean:.2%} (tol 1%), "
                  f"max covariance error {worst_cov:.2%} (tol 3%); "
                  f"largest single-entry mean error {worst_entry:.2%}")
    assert ok


def test_criterion_6_sandwich_sanity():
    config = ScenarioConfig(families=("rc",), n_clusters=(200,), m=(21,), rho2=(0.0, 0.25),
                            replicates=1, seed=SEED)
    values = []
    for cell_id, rho2 in enumerate((0.0, 0.25)):
        data = draw_dataset(config, "random_clumped", 200, 21, rho2,
                            replicate_rng(SEED, cell_id, 0))
        values.append(design_effect(data, fit(data, 0.0).beta_hat))
    ok = 0.85 <= values[0] <= 1.15 and abs(values[1] - 6.0) <= 0.9
    record(6, ok, f"multinomial nu_hat = {values[0]:.3f} (want [0.85, 1.15]); "
                  f"RC rho2=0.25 nu_hat = {values[1]:.3f} (want 6 +/- 15%)")
    assert ok


@pytest.fixture(scope="module")
def desk_simulation():
    config = ScenarioConfig(families=("rc",), n_clusters=(60,), m=(21,), rho2=(0.25,),
                            replicates=500, seed=SEED)
    start = time.perf_counter()
    records = run_scenario(config)
    return records, time.perf_counter() - start


def test_criterion_7a_binder_beats_moments(desk_simulation):
    records, elapsed = desk_simulation
    pairs = [(r.rmse_rho2_binder, r.rmse_rho2_moments) for r in records]
    ok = all(b < m for b, m in pairs) and elapsed < 900
    detail = ", ".join(f"{lab}: {b:.4f}<{m:.4f}" for lab, (b, m) in zip(LABELS, pairs))
    record("7a", ok, f"RMSE(rho2) binder vs moments, R=500, {elapsed:.0f} s: {detail}")
    assert ok


def test_criterion_7b_two_thirds_best_binder(desk_simulation):
    records, _ = desk_simulation
    rmse = np.array([r.rmse_rho2_binder for r in records])
    best = int(np.argmin(rmse))
    ok = rmse[1] <= 1.02 * rmse.min()
    record("7b", ok, f"binder RMSE(rho2) at 2/3 = {rmse[1]:.4f}; minimum {rmse.min():.4f} "
                     f"at lambda={LABELS[best]} (need within 2%)")
    assert ok


def test_criterion_8_mle_equivalence(unc):
    worst = np.max(np.abs(fit(unc, 0.0).beta_hat
                          - pml_newton(unc.counts, unc.covariates, unc.weights)))
    rng = np.random.default_rng(SEED)
    for _ in range(10):
        n, d, k = int(rng.integers(8, 30)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        X = np.column_stack([np.ones(n), rng.normal(size=(n, k - 1))])
        sizes = rng.integers(5, 40, size=n)
        counts = np.vstack([rng.multinomial(s, rng.dirichlet(2 * np.ones(d + 1)))
                            for s in sizes])
        counts[0] += 1
        sizes = counts.sum(axis=1)
        weights = rng.uniform(0.5, 5, size=n)
        data = SurveyDataset(rng.integers(0, 2, size=n), weights, sizes, counts, X)
        worst = max(worst, np.max(np.abs(fit(data, 0.0).beta_hat
                                         - pml_newton(counts, X, weights))))
    ok = worst <= 1e-6
    record(8, ok, f"UNC + 10 random instances: max |fit - direct maximiser| = {worst:.1e} "
                  f"(tol 1e-6)")
    assert ok


def test_criterion_9_determinism(tmp_path, unc_path, capsys):
    cfg = tmp_path / "det.cfg"
    cfg.write_text("family = dm, rc, mi\nn_clusters = 20\nm = 8\nrho2 = 0.3\n"
                   "lambdas = 0, 2/3\nreplicates = 4\nseed = 77\n")
    commands = {
        "fit": ["fit", "--data", unc_path, "--lambda", "0,2/3,2.5", "--format", "csv"],
        "deff": ["deff", "--data", unc_path, "--lambda", "0,1", "--format", "csv"],
        "simulate": ["simulate", "--config", str(cfg)],
    }
    same = {}
    for name, argv in commands.items():
        outputs = []
        for rep in range(2):
            out = tmp_path / f"{name}{rep}.csv"
            assert main(argv + ["--out", str(out)]) == 0
            outputs.append(out.read_bytes())
        same[name] = outputs[0] == outputs[1]
    capsys.readouterr()
    ok = all(same.values())
    record(9, ok, "byte-identical reruns: " + ", ".join(f"{k}={v}" for k, v in same.items()))
    assert ok
