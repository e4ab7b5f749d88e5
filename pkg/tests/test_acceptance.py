"""End-to-end acceptance checks against the synthetic ground truth.

Each test records one ``[PASS]``/``[FAIL]`` line (shown in the terminal
summary) and then asserts the criterion.
"""
import time

import numpy as np
import pytest
from scipy import stats
from scipy.special import expit

from dualstress.cli import COMMANDS, replay, run
from dualstress.dml import DmlConfig, dml_fit, naive_ols
from dualstress.glm import fit_lag_profile, fit_logit
from dualstress.panel import compound_annual_inflation, model_rows
from dualstress.reports import parse_table_header
from dualstress.robustness import PlaceboSpec, default_seeds, placebo_test, seed_sweep
from dualstress.shapley import brute_force_shap, dependence_data, fit_predictive_model, global_importance, shap_values
from dualstress.synth import ScenarioGrid, calibrate_gamma, generate_panel, preset, run_scenarios
from dualstress.trees import BoostingConfig, fit_gbrt

pytestmark = pytest.mark.slow

# lighter nuisance learner for the 200-replicate placebo null distribution
LIGHT = BoostingConfig(n_trees=60, learning_rate=0.15)


def record(log, number, ok, message, seconds):
    line = f"[{'PASS' if ok else 'FAIL'}] C{number} {message} ({seconds:.1f}s)"
    log.append(line)
    print(line)
    return ok


def newton_oracle(A, y, iters=100):
    beta = np.zeros(A.shape[1])
    for _ in range(iters):
        p = expit(A @ beta)
        step = np.linalg.solve(A.T @ (A * (p * (1 - p))[:, None]), A.T @ (y - p))
        beta = beta + step
        if np.max(np.abs(step)) < 1e-13:
            break
    return beta


def test_c01_inflation_formula(criterion_log):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst, perm_ok = 0.0, True
    for _ in range(1000):
        m = rng.uniform(-0.02, 0.08, size=12)
        direct = float(np.prod(1.0 + m) - 1.0)
        got = compound_annual_inflation(m)
        worst = max(worst, abs(got - direct) / abs(direct))
        perm_ok &= compound_annual_inflation(rng.permutation(m)) == got
    dt = time.perf_counter() - t0
    ok = worst < 1e-12 and perm_ok and dt < 1.0
    record(criterion_log, 1, ok, f"inflation: max rel err {worst:.2e}, permutation exact={perm_ok}", dt)
    assert ok


def test_c02_irls_matches_newton(criterion_log):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst, monotone = 0.0, True
    for _ in range(50):
        n, p = int(rng.integers(60, 201)), int(rng.integers(1, 7))
        A = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))]) if p > 1 else np.ones((n, 1))
        beta = rng.normal(scale=0.5, size=p)
        y = (rng.uniform(size=n) < expit(A @ beta)).astype(float)
        fit = fit_logit(A, y, tol=1e-12)
        worst = max(worst, float(np.max(np.abs(fit.coef - newton_oracle(A, y)))))
        monotone &= bool(np.all(np.diff(fit.deviance_trace) <= 1e-9))
    dt = time.perf_counter() - t0
    ok = worst < 1e-6 and monotone and dt < 10
    record(criterion_log, 2, ok, f"IRLS vs Newton: max |diff| {worst:.2e}, deviance monotone={monotone}", dt)
    assert ok


def test_c03_lag_profile_recovery(criterion_log):
    t0 = time.perf_counter()
    hits = 0
    for s in range(20):
        panel, _ = generate_panel(preset("lag2", seed=s))
        rep = fit_lag_profile(panel)
        l1, l2, l3 = (rep.row(k).effect for k in (1, 2, 3))
        hits += (l2.ame > 0 and l2.p_value < 0.05 and l1.p_value > 0.1 and l3.p_value > 0.1)
    dt = time.perf_counter() - t0
    ok = hits >= 16 and dt < 120
    record(criterion_log, 3, ok, f"lag profile: {hits}/20 seeds with lag 2 only (need >= 16)", dt)
    assert ok


def test_c04_dml_recovery_and_naive_bias(criterion_log):
    t0 = time.perf_counter()
    cover = biased = 0
    for s in range(20):
        panel, truth = generate_panel(preset("dual-stressor", seed=s))
        est = dml_fit(panel, DmlConfig(seed=s))
        cover += est.gamma.ci_low <= truth.gamma <= est.gamma.ci_high
        naive = naive_ols(panel)["gamma"]
        biased += abs(naive.estimate - truth.gamma) > 2 * naive.se
    dt = time.perf_counter() - t0
    ok = cover >= 17 and biased >= 15 and dt < 300
    record(criterion_log, 4, ok, f"DML recovery: CI covers 0.06 in {cover}/20 (need >= 17), "
           f"naive OLS biased > 2 SE in {biased}/20 (need >= 15)", dt)
    assert ok


def test_c05_ci_calibration(criterion_log):
    t0 = time.perf_counter()
    reps = 100
    cover = 0
    for r in range(reps):
        s = 100 + r
        panel, truth = generate_panel(preset("dual-stressor", seed=s))
        est = dml_fit(panel, DmlConfig(seed=s))
        cover += est.gamma.ci_low <= truth.gamma <= est.gamma.ci_high
    dt = time.perf_counter() - t0
    rate = cover / reps
    ok = 0.90 <= rate <= 0.99 and dt < 1200
    record(criterion_log, 5, ok, f"CI calibration: gamma coverage {rate:.2f} over {reps} replicates (need 0.90-0.99)", dt)
    assert ok


def test_c06_placebo_nullity(criterion_log):
    t0 = time.perf_counter()
    quiet = 0
    for s in range(20):
        panel, _ = generate_panel(preset("strong-interaction", n_students=3000, seed=s))
        rep = placebo_test(panel, DmlConfig(seed=s), PlaceboSpec(seed=s))
        quiet += rep.coefficient.p_value > 0.05
    pvals = []
    for r in range(200):
        panel, _ = generate_panel(preset("null", n_students=600, seed=5000 + r))
        pvals.append(placebo_test(panel, DmlConfig(seed=r, learner=LIGHT), PlaceboSpec(seed=r)).coefficient.p_value)
    ks = stats.kstest(pvals, "uniform").statistic
    dt = time.perf_counter() - t0
    ok = quiet >= 17 and ks < 0.12 and dt < 900
    record(criterion_log, 6, ok, f"placebo: p > 0.05 in {quiet}/20 (need >= 17), null KS distance {ks:.3f} (need < 0.12)", dt)
    assert ok


def test_c07_seed_sweep_stability(criterion_log):
    t0 = time.perf_counter()
    seeds = default_seeds()
    effect, _ = generate_panel(preset("strong-interaction", seed=0))
    s_eff = seed_sweep(effect, DmlConfig(), seeds).summary()["gamma"]
    null, _ = generate_panel(preset("null", seed=0))
    s_null = seed_sweep(null, DmlConfig(), seeds).summary()["gamma"]
    dt = time.perf_counter() - t0
    ok = s_eff["positive_fraction"] == 1.0 and s_eff["significant_fraction"] >= 0.8 and s_null["significant_fraction"] <= 0.15
    record(criterion_log, 7, ok, f"seed sweep: effectful positive {s_eff['positive_fraction']:.2f}, significant "
           f"{s_eff['significant_fraction']:.2f} (need 1.00, >= 0.80); null significant "
           f"{s_null['significant_fraction']:.2f} (need <= 0.15)", dt)
    assert ok


@pytest.fixture(scope="module")
def shap_models():
    """Predictive models on the effectful generator, one per seed."""
    out = []
    for s in range(5):
        panel, _ = generate_panel(preset("strong-interaction", seed=s))
        model = fit_predictive_model(panel, seed=s)
        data = panel.loc[model_rows(panel, model.features)]
        X = data[model.features].to_numpy(dtype=float)[model.test_index]
        out.append((model, X))
    return out


def test_c08_shapley_exactness(criterion_log, shap_models):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    X = rng.normal(size=(500, 10))
    y = np.sin(X[:, 0]) + X[:, 1] * X[:, 2] + (X[:, 3] > 0.3) - 0.5 * X[:, 7] ** 2
    model = fit_gbrt(X, y, BoostingConfig(n_trees=40, max_depth=3, learning_rate=0.2, seed=8))
    bg = X[rng.choice(500, 50, replace=False)]
    att = shap_values(model, X, bg)
    worst = max(float(np.max(np.abs(att.values[i] - brute_force_shap(model.predict, X[i], bg)))) for i in range(500))
    local = float(np.max(np.abs(att.baseline + att.values.sum(axis=1) - model.predict(X))))
    for m, Xt in shap_models:
        a = shap_values(m.ensemble, Xt, m.background)
        local = max(local, float(np.max(np.abs(a.baseline + a.values.sum(axis=1) - m.ensemble.predict(Xt)))))
    # dummy: a constant column is never split on
    Xd = np.column_stack([X[:, :3], np.ones(500)])
    md = fit_gbrt(Xd, y, BoostingConfig(n_trees=20, seed=1))
    bgd = Xd[:50].copy()
    bgd[:, 3] = 0.0
    dummy = float(np.max(np.abs(shap_values(md, Xd, bgd).values[:, 3])))
    dt = time.perf_counter() - t0
    ok = worst < 1e-8 and local < 1e-8 and dummy == 0.0 and dt < 120
    record(criterion_log, 8, ok, f"Shapley: max |exact - enumeration| {worst:.2e} over 500 instances, "
           f"local accuracy {local:.2e}, dummy {dummy}", dt)
    assert ok


def test_c09_dual_stressor_shap_pattern(criterion_log, shap_models):
    t0 = time.perf_counter()
    ranks, gaps, good = [], [], 0
    for m, Xt in shap_models:
        top = global_importance(m.ensemble, Xt, m.background)["feature"].tolist()
        r = (top.index("strikes_lag2") + 1, top.index("inflation_at_entry") + 1)
        dep = dependence_data(m.ensemble, Xt, m.background, "strikes_lag2", "inflation_at_entry")
        q1, q3 = np.quantile(dep["color_value"], [0.25, 0.75])
        gap = dep.loc[dep["color_value"] >= q3, "shap_value"].mean() - dep.loc[dep["color_value"] <= q1, "shap_value"].mean()
        ranks.append(r)
        gaps.append(gap)
        good += max(r) <= 4 and gap > 0
    dt = time.perf_counter() - t0
    ok = good == len(shap_models)
    record(criterion_log, 9, ok, f"SHAP pattern: {good}/{len(shap_models)} seeds with both stressors in top 4 and "
           f"positive quartile gap; ranks {ranks}, min gap {min(gaps):.4f}", dt)
    assert ok


def test_c10_amplification_band(criterion_log):
    t0 = time.perf_counter()
    grid = ScenarioGrid()
    gamma, _ = calibrate_gamma(grid, preset("scenarios", seed=0), target=0.205)
    amps = [run_scenarios(grid, preset("scenarios", seed=s, gamma=gamma)).report.amplification for s in range(1, 6)]
    nulls = [run_scenarios(grid, preset("scenarios", seed=s, gamma=0.0)).report.amplification for s in range(1, 6)]
    dt = time.perf_counter() - t0
    ok = all(0.15 <= a <= 0.26 for a in amps) and all(abs(a) < 0.05 for a in nulls)
    record(criterion_log, 10, ok, f"amplification: calibrated gamma {gamma:.4f} gives "
           f"[{min(amps):.3f}, {max(amps):.3f}] over 5 seeds (need within 0.15-0.26); "
           f"gamma = 0 gives max |amp| {max(map(abs, nulls)):.3f} (need < 0.05)", dt)
    assert ok


def test_c11_report_formats(criterion_log, tmp_path):
    t0 = time.perf_counter()
    src = tmp_path / "synth"
    assert run(["synth", "--preset", "dual-stressor", "--students", "400", "--out-dir", str(src)]) == 0
    expected = {
        "fit-lags": (["Lag", "ATE", "p-value"],
                     ["MACRO_paros_lag_sem_1", "MACRO_paros_lag_sem_2", "MACRO_paros_lag_sem_3"]),
        "fit-dml": (["Parameter", "Estimate", "Std. Error", "p-value"],
                    ["Strikes (Lag 2)", "Interaction (Strikes x Inflation)"]),
        "placebo": (["Specification", "Coefficient", "Std. Error", "CI Lower", "CI Upper", "p-value"],
                    ["Placebo (Fake Strike)"]),
    }
    bad = []
    for cmd, (columns, labels) in expected.items():
        out = tmp_path / cmd
        assert run([cmd, "--panel", str(src / "panel.csv"), "--out-dir", str(out)]) == 0
        lines = (out / "report.txt").read_text().splitlines()
        if parse_table_header(lines[1]) != columns:
            bad.append(f"{cmd} header")
        if [parse_table_header(x)[0] for x in lines[2:2 + len(labels)]] != labels:
            bad.append(f"{cmd} rows")
    dt = time.perf_counter() - t0
    ok = not bad
    record(criterion_log, 11, ok, f"report formats: lag, DML and placebo table headers and row labels exact"
           + (f"; mismatches {bad}" if bad else ""), dt)
    assert ok


def test_c12_determinism(criterion_log, tmp_path):
    t0 = time.perf_counter()
    src = tmp_path / "synth"
    assert run(["synth", "--preset", "strong-interaction", "--students", "500", "--seed", "2", "--out-dir", str(src)]) == 0
    panel = str(src / "panel.csv")
    fast = ["--trees", "40", "--learning-rate", "0.15"]
    lines = {
        "build-panel": ["build-panel", "--enrollment", str(src / "enrollment.csv"), "--cpi", str(src / "cpi.csv"),
                        "--strikes", str(src / "strikes.csv")],
        "fit-lags": ["fit-lags", "--panel", panel],
        "fit-dml": ["fit-dml", "--panel", panel, "--seed", "5", *fast],
        "placebo": ["placebo", "--panel", panel, "--seed", "5", *fast],
        "seed-sweep": ["seed-sweep", "--panel", panel, "--seeds", "4", *fast],
        "predict-shap": ["predict-shap", "--panel", panel, "--seed", "5", *fast],
        "synth": ["synth", "--preset", "dual-stressor", "--students", "300", "--seed", "9"],
        "scenarios": ["scenarios", "--students", "2000", "--calibrate"],
    }
    assert set(lines) == set(COMMANDS)
    differing = {}
    for name, argv in lines.items():
        first = tmp_path / f"{name}-1"
        assert run(argv + ["--out-dir", str(first), "--threads", "1"]) == 0
        diff = replay(first / "manifest.json", tmp_path / f"{name}-2", threads=4)
        same = all((first / f.name).read_bytes() == f.read_bytes() for f in (tmp_path / f"{name}-2").iterdir())
        if diff or not same:
            differing[name] = diff
    dt = time.perf_counter() - t0
    ok = not differing
    record(criterion_log, 12, ok, f"determinism: {len(lines) - len(differing)}/{len(lines)} commands byte-identical "
           "on manifest replay with --threads 1 vs 4" + (f"; differing {differing}" if differing else ""), dt)
    assert ok
