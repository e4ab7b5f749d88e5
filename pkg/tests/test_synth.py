import io
import json

import numpy as np
import pandas as pd
import pytest

from dualstress.dml import W_COLUMNS, naive_ols, ols_robust
from dualstress.panel import PANEL_COLUMNS, validate_leakage
from dualstress.synth import (
    COHORT_SIZES, DgpConfig, ScenarioGrid, amplification, calibrate_gamma, generate_inputs, generate_panel,
    preset, run_scenarios, scale_cohorts,
)


def zero_calendar(cfg):
    y0, y1 = cfg.calendar_years
    return {(y, s): 0.0 for y in range(y0, y1 + 1) for s in (1, 2)}


class TestConfig:
    def test_cohorts_sum_to_n(self):
        for n in (1, 17, 1343, 5000):
            assert sum(scale_cohorts(n).values()) == n
        assert scale_cohorts(sum(COHORT_SIZES.values())) == COHORT_SIZES

    def test_inconsistent_sizes_rejected(self):
        with pytest.raises(ValueError):
            DgpConfig(n_students=10, cohort_sizes={2010: 4, 2011: 5})

    def test_roundtrip(self):
        cfg = preset("lag2", seed=3, strike_calendar={(2010, 1): 0.4})
        assert DgpConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    def test_unknown_preset_and_link(self):
        with pytest.raises(KeyError):
            preset("nope")
        with pytest.raises(ValueError):
            DgpConfig(link="probit")


@pytest.fixture(scope="module")
def generated():
    cfg = preset("dual-stressor", n_students=600, seed=4)
    return cfg, generate_inputs(cfg), generate_panel(cfg)


class TestGenerator:
    def test_schema_and_alignment(self, generated):
        _, _, (panel, truth) = generated
        assert list(panel.columns) == PANEL_COLUMNS
        assert len(truth.probabilities) == len(panel)
        assert truth.lag == 2 and truth.gamma == 0.06

    def test_passes_leakage_validation(self, generated):
        _, inputs, (panel, _) = generated
        assert validate_leakage(panel, inputs.records, inputs.cpi, inputs.calendar) == []

    def test_deterministic_bytes(self, generated):
        cfg, _, (panel, _) = generated
        again, _ = generate_panel(cfg)
        a, b = io.StringIO(), io.StringIO()
        panel.to_csv(a, index=False)
        again.to_csv(b, index=False)
        assert a.getvalue() == b.getvalue()

    def test_probabilities_within_clip(self, generated):
        _, _, (_, truth) = generated
        assert truth.probabilities.min() >= 0.01 and truth.probabilities.max() <= 0.99

    def test_zero_calendar_zero_interaction(self):
        cfg = preset("dual-stressor", n_students=200, seed=1)
        panel, _ = generate_panel(cfg.replace(strike_calendar=zero_calendar(cfg)))
        present = panel["interaction_term"].dropna()
        assert len(present) > 0 and (present == 0).all()

    def test_student_streams_independent_of_population(self):
        # a student's trajectory does not depend on who else is simulated
        small = generate_inputs(preset("null", n_students=100, seed=2, cohort_sizes={2010: 100}))
        big = generate_inputs(preset("null", n_students=300, seed=2, cohort_sizes={2010: 200, 2011: 100}))
        sid = small.records["student_id"].iloc[0]
        a = small.records[small.records.student_id == sid].reset_index(drop=True)
        b = big.records[big.records.student_id == sid].reset_index(drop=True)
        pd.testing.assert_frame_equal(a, b)

    def test_baseline_rate_without_nuisance(self):
        cfg = preset("null", n_students=10_000, seed=6, alpha=0.1, g_scale=0.0, confounding=0.0)
        panel, truth = generate_panel(cfg)
        assert np.all(truth.probabilities == 0.1)
        assert abs(panel["dropout_next_sem"].mean() - 0.1) < 0.01

    def test_empirical_rate_tracks_true_probability(self, generated):
        _, _, (panel, truth) = generated
        n = len(panel)
        assert abs(panel["dropout_next_sem"].mean() - truth.probabilities.mean()) < 3 / np.sqrt(n)

    def test_out_of_range_warning(self):
        with pytest.warns(RuntimeWarning, match="outside"):
            generate_inputs(preset("null", n_students=100, alpha=1.5))

    def test_ols_recovers_effects_without_confounding(self):
        cfg = preset("null", n_students=20_000, seed=9, tau=0.05, gamma=0.3, confounding=0.0, nonlinear=False)
        panel, _ = generate_panel(cfg)
        cols = ["dropout_next_sem", "strikes_lag2", "interaction_term", *W_COLUMNS]
        data = panel[cols].dropna()
        W = data[W_COLUMNS].to_numpy(float)
        W = W[:, W.std(axis=0) > 0]
        X = np.column_stack([np.ones(len(data)), data["strikes_lag2"], data["interaction_term"], W])
        fit = ols_robust(X, data["dropout_next_sem"].to_numpy(float))
        assert abs(fit.coef[1] - 0.05) < 3 * fit.se[1]
        assert abs(fit.coef[2] - 0.3) < 3 * fit.se[2]

    def test_naive_bias_grows_with_confounding(self):
        bias = []
        for c in (0.0, 1.0, 2.0):
            panel, _ = generate_panel(preset("null", n_students=3000, seed=5, confounding=c))
            bias.append(abs(naive_ols(panel)["tau"].estimate))
        assert bias[0] < bias[1] < bias[2]


class TestScenarios:
    def test_grid_combined_is_union(self):
        ov = ScenarioGrid().overrides()
        assert ov["combined"] == {**ov["strikes-only"], **ov["inflation-only"]}
        assert ov["baseline"] == {}

    def test_amplification_formula(self):
        assert amplification(0.1, 0.2, 0.3, 0.6) == pytest.approx(((0.6 - 0.1) - 0.3) / 0.3)
        assert amplification(0.1, 0.1, 0.1, 0.2) is None

    def test_additive_null(self):
        rep = run_scenarios(ScenarioGrid(), preset("scenarios", seed=1)).report
        assert rep.defined and abs(rep.amplification) < 0.05

    def test_interaction_amplifies(self):
        rep = run_scenarios(ScenarioGrid(), preset("scenarios", n_students=4000, seed=1, gamma=0.1)).report
        assert rep.amplification > 0

    def test_undefined_when_no_single_effects(self):
        cfg = preset("scenarios", n_students=500, tau=0.0, inflation_effect=0.0)
        rep = run_scenarios(ScenarioGrid(), cfg).report
        assert not rep.defined and rep.amplification is None

    def test_curves_monotone(self):
        res = run_scenarios(ScenarioGrid(), preset("scenarios", n_students=2000, gamma=0.1), horizon=6)
        frame = res.curve_frame()
        assert list(frame.columns) == ["semester", "baseline", "strikes-only", "inflation-only", "combined"]
        assert (frame.drop(columns="semester").diff().dropna() >= 0).all().all()

    def test_sampled_estimator_agrees(self):
        cfg = preset("scenarios", n_students=20_000, gamma=0.1)
        exp = run_scenarios(ScenarioGrid(), cfg).report.attrition
        smp = run_scenarios(ScenarioGrid(), cfg, estimator="sampled").report.attrition
        for k in exp:
            assert abs(exp[k] - smp[k]) < 4 * np.sqrt(exp[k] / 20_000)

    def test_short_horizon_rejected(self):
        with pytest.raises(ValueError):
            run_scenarios(ScenarioGrid(), preset("scenarios", n_students=100), horizon=2)

    def test_calibration_hits_target(self):
        cfg = preset("scenarios", n_students=4000, seed=2)
        g, rep = calibrate_gamma(ScenarioGrid(), cfg, target=0.205)
        assert g > 0 and abs(rep.amplification - 0.205) < 0.005

    def test_calibration_unbracketed(self):
        with pytest.raises(ValueError, match="outside"):
            calibrate_gamma(ScenarioGrid(), preset("scenarios", n_students=500), target=50.0)
