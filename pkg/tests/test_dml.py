import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from dualstress.dml import (
    DmlConfig, assign_folds, crossfit_residualize, dml_fit, naive_ols, ols_robust,
)
from dualstress.errors import NumericalError
from dualstress.synth import generate_panel, preset
from dualstress.trees import BoostingConfig

FAST = BoostingConfig(n_trees=60, learning_rate=0.15)


@pytest.fixture(scope="module")
def small_panel():
    panel, truth = generate_panel(preset("dual-stressor", n_students=500, seed=3))
    return panel


def hc1_oracle(X, y):
    """Textbook sandwich with explicit inverses."""
    n, k = X.shape
    XtX_inv = np.linalg.inv(X.T @ X)
    b = XtX_inv @ X.T @ y
    e = y - X @ b
    meat = sum(np.outer(X[i], X[i]) * e[i] ** 2 for i in range(n))
    return b, n / (n - k) * XtX_inv @ meat @ XtX_inv


class TestFolds:
    def test_equal_sizes(self):
        labels = assign_folds(10, 5, seed=1)
        assert sorted(np.bincount(labels)) == [2] * 5

    def test_reproducible(self):
        np.testing.assert_array_equal(assign_folds(97, 4, 9), assign_folds(97, 4, 9))
        assert not np.array_equal(assign_folds(97, 4, 9), assign_folds(97, 4, 10))

    def test_cohort_sized_partition(self):
        assert sorted(np.bincount(assign_folds(1343, 5, 0))) == [268, 268, 269, 269, 269]

    def test_too_few_rows(self):
        with pytest.raises(ValueError):
            assign_folds(3, 5, 0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 500), st.integers(2, 10), st.integers(0, 2 ** 31))
    def test_sizes_differ_by_at_most_one(self, n, k, seed):
        if n < k:
            return
        sizes = np.bincount(assign_folds(n, k, seed), minlength=k)
        assert sizes.sum() == n and sizes.max() - sizes.min() <= 1


class TestCrossfit:
    def test_micro_fixture_by_hand(self):
        # training folds of two rows cannot split (min leaf 5): predictions are the other fold's mean
        W = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([1.0, 2.0, 4.0, 8.0])
        labels = np.array([0, 1, 0, 1])
        resid, diags = crossfit_residualize(W, y, labels, BoostingConfig(n_trees=3))
        np.testing.assert_allclose(resid, [1 - 5.0, 2 - 2.5, 4 - 5.0, 8 - 2.5], atol=1e-12)
        assert [d.n_test for d in diags] == [2, 2]

    def test_noiseless_linear_target(self):
        rng = np.random.default_rng(0)
        W = rng.uniform(size=(2000, 3))
        y = 0.8 * W[:, 1]
        resid, diags = crossfit_residualize(W, y, assign_folds(2000, 5, 0), BoostingConfig(n_trees=400, learning_rate=0.1))
        assert np.max(np.abs(resid)) < 0.05
        assert max(d.oof_mse for d in diags) < 1e-4

    def test_independent_target_keeps_its_variance(self):
        rng = np.random.default_rng(1)
        W = rng.normal(size=(5000, 4))
        y = rng.normal(size=5000)
        resid, _ = crossfit_residualize(W, y, assign_folds(5000, 5, 1), FAST)
        assert abs(resid.var() / y.var() - 1) < 0.10

    def test_constant_fold_warns(self):
        W = np.arange(20.0)[:, None]
        y = np.r_[np.zeros(10), np.ones(10)]
        labels = np.r_[np.zeros(10, int), np.ones(10, int)]
        with pytest.warns(RuntimeWarning, match="constant"):
            resid, _ = crossfit_residualize(W, y, labels, FAST)
        np.testing.assert_array_equal(resid, y - np.r_[np.ones(10), np.zeros(10)])

    def test_relabeling_folds_is_bit_exact(self):
        rng = np.random.default_rng(2)
        W = rng.normal(size=(300, 3))
        y = W[:, 0] ** 2 + rng.normal(size=300)
        labels = assign_folds(300, 4, 5)
        relabeled = np.array([3, 0, 2, 1])[labels]
        a, _ = crossfit_residualize(W, y, labels, FAST, seed=5)
        b, _ = crossfit_residualize(W, y, relabeled, FAST, seed=5)
        assert np.array_equal(a, b)

    def test_threads_do_not_change_results(self):
        rng = np.random.default_rng(3)
        W = rng.normal(size=(400, 3))
        y = np.sin(W[:, 0]) + rng.normal(size=400)
        labels = assign_folds(400, 5, 0)
        a, _ = crossfit_residualize(W, y, labels, FAST, threads=1)
        b, _ = crossfit_residualize(W, y, labels, FAST, threads=3)
        assert np.array_equal(a, b)


class TestFinalStage:
    def test_hc1_matches_sandwich_oracle(self):
        rng = np.random.default_rng(4)
        X = np.column_stack([np.ones(150), rng.normal(size=(150, 2))])
        y = X @ [0.1, 0.5, -0.2] + rng.normal(size=150) * (1 + np.abs(X[:, 1]))
        fit = ols_robust(X, y)
        b, cov = hc1_oracle(X, y)
        np.testing.assert_allclose(fit.coef, b, atol=1e-12)
        np.testing.assert_allclose(fit.cov, cov, rtol=1e-10)

    def test_matches_statsmodels(self):
        sm = pytest.importorskip("statsmodels.api")
        rng = np.random.default_rng(5)
        X = np.column_stack([np.ones(200), rng.normal(size=(200, 2))])
        y = (rng.uniform(size=200) < 0.3).astype(float)
        ref = sm.OLS(y, X).fit(cov_type="HC1")
        fit = ols_robust(X, y)
        np.testing.assert_allclose(fit.se, ref.bse, rtol=1e-10)

    def test_singular(self):
        X = np.column_stack([np.ones(10), np.arange(10.0), 2 * np.arange(10.0)])
        with pytest.raises(NumericalError):
            ols_robust(X, np.arange(10.0))


class TestDmlFit:
    def test_schema_and_intervals(self, small_panel):
        est = dml_fit(small_panel, DmlConfig(learner=FAST))
        d = est.to_dict()
        assert d["columns"] == ["Parameter", "Estimate", "Std. Error", "p-value"]
        assert [r["parameter"] for r in d["rows"]] == ["Strikes (Lag 2)", "Interaction (Strikes x Inflation)"]
        for c in (est.tau, est.gamma):
            assert c.ci_low <= c.estimate <= c.ci_high
            assert c.ci_high - c.estimate == pytest.approx(1.959963984540054 * c.se, rel=1e-12)
            assert 0 <= c.p_value <= 1

    def test_deterministic(self, small_panel):
        cfg = DmlConfig(seed=4, learner=FAST)
        a, b = dml_fit(small_panel, cfg), dml_fit(small_panel, cfg)
        assert a.to_dict() == b.to_dict()
        assert np.array_equal(a.residuals.y, b.residuals.y)

    def test_residuals_are_centred(self, small_panel):
        est = dml_fit(small_panel, DmlConfig(seed=1, learner=FAST))
        for r in (est.residuals.y, est.residuals.t, est.residuals.tx):
            assert abs(r.mean()) < 3 * r.std() / np.sqrt(len(r))

    def test_constant_shift_moves_only_intercept(self, small_panel):
        cfg = DmlConfig(seed=2, learner=FAST)
        shifted = small_panel.copy()
        shifted["dropout_next_sem"] = shifted["dropout_next_sem"] + 0.75
        a, b = dml_fit(small_panel, cfg), dml_fit(shifted, cfg)
        assert b.tau.estimate == pytest.approx(a.tau.estimate, abs=1e-10)
        assert b.gamma.estimate == pytest.approx(a.gamma.estimate, abs=1e-10)

    def test_collinear_treatments_rejected(self, small_panel):
        flat = small_panel.copy()
        flat["inflation_at_entry"] = 0.2
        flat["interaction_term"] = flat["strikes_lag2"] * 0.2
        with pytest.raises(NumericalError, match="inflation_at_entry"):
            dml_fit(flat, DmlConfig(learner=FAST))

    def test_residual_frame(self, small_panel):
        est = dml_fit(small_panel, DmlConfig(learner=FAST))
        frame = est.residuals.to_frame()
        assert list(frame.columns) == ["row", "student_id", "semester_number", "fold", "y_resid", "t_resid", "tx_resid"]
        assert len(frame) == est.n

    def test_naive_ols_is_confounded(self):
        panel, _ = generate_panel(preset("null", n_students=2000, seed=1))
        naive = naive_ols(panel)["gamma"]
        assert naive.estimate - 2 * naive.se > 0
