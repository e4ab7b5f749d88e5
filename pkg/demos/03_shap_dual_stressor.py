"""
Exact Shapley attributions for the dropout model
================================================

Fit the boosted dropout classifier, rank features by mean absolute Shapley
value and compare the strike attribution between high- and low-inflation
cohorts.
"""

import numpy as np

from dualstress.panel import model_rows
from dualstress.reports import importance_text
from dualstress.shapley import dependence_data, fit_predictive_model, global_importance
from dualstress.synth import generate_panel, preset

panel, _ = generate_panel(preset("strong-interaction", seed=0))
model = fit_predictive_model(panel, seed=0)

data = panel.loc[model_rows(panel, model.features)]
X_test = data[model.features].to_numpy(dtype=float)[model.test_index]

importance = global_importance(model.ensemble, X_test, model.background)
print(importance_text(importance.head(8), model.report["auc"]))

# strike attribution coloured by inflation at entry
dep = dependence_data(model.ensemble, X_test, model.background, "strikes_lag2", "inflation_at_entry")
q1, q3 = np.quantile(dep["color_value"], [0.25, 0.75])
high = dep.loc[dep["color_value"] >= q3, "shap_value"].mean()
low = dep.loc[dep["color_value"] <= q1, "shap_value"].mean()
print(f"mean strike attribution: top inflation quartile {high:.4f}, bottom quartile {low:.4f}")
