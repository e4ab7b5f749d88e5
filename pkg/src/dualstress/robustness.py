"""Placebo treatments and seed-sensitivity sweeps for the DML estimator."""
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from ._rng import derive_rng
from .dml import DmlConfig, dml_fit
from .errors import DataError, NumericalError

TABLE5_COLUMNS = ["Specification", "Coefficient", "Std. Error", "CI Lower", "CI Upper", "p-value"]
TABLE5_ROW = "Placebo (Fake Strike)"
SWEEP_COLUMNS = ["seed", "tau", "tau_se", "tau_p", "gamma", "gamma_se", "gamma_p", "ci_low_gamma", "ci_high_gamma"]
PLACEBO_MODES = ("permute", "gaussian")


@dataclass(frozen=True)
class PlaceboSpec:
    """``within="cohort"`` permutes inside each entry cohort instead of globally."""

    mode: str = "permute"
    seed: int = 0
    rebuild_interaction: bool = True
    within: str = "global"

    def __post_init__(self):
        if self.mode not in PLACEBO_MODES:
            raise ValueError(f"placebo mode must be one of {PLACEBO_MODES}, got {self.mode!r}")
        if self.within not in ("global", "cohort"):
            raise ValueError("within must be 'global' or 'cohort'")


def make_placebo_treatment(panel, spec=None, source="strikes_lag2"):
    """Add ``fake_strike`` and ``fake_interaction`` columns.

    Rows where ``source`` is missing keep missing placebo values, so the
    placebo and real pipelines use the same rows. Everything else is copied
    unchanged.
    """
    spec = spec or PlaceboSpec()
    out = panel.copy()
    present = out[source].notna().to_numpy()
    idx = np.flatnonzero(present)
    values = out[source].to_numpy(dtype=float)
    fake = np.full(len(out), np.nan)
    rng = derive_rng(spec.seed, "placebo", spec.mode, spec.within)
    if spec.mode == "gaussian":
        fake[idx] = rng.standard_normal(idx.size)
    elif spec.within == "global":
        fake[idx] = values[idx[rng.permutation(idx.size)]]
    else:
        cohorts = out["cohort_year"].to_numpy()[idx]
        for c in np.unique(cohorts):
            group = idx[cohorts == c]
            fake[group] = values[group[rng.permutation(group.size)]]
    out["fake_strike"] = fake
    if spec.rebuild_interaction:
        out["fake_interaction"] = fake * out["inflation_at_entry"].to_numpy(dtype=float)
    else:
        out["fake_interaction"] = out["interaction_term"]
    return out


@dataclass
class Table5Report:
    coefficient: object
    interaction: object
    spec: PlaceboSpec
    n: int
    seed: int

    def to_dict(self):
        return {
            "table": "placebo_test",
            "columns": TABLE5_COLUMNS,
            "rows": [{"specification": TABLE5_ROW, **self.coefficient.to_dict()}],
            "placebo_interaction": self.interaction.to_dict(),
            "spec": asdict(self.spec),
            "n": self.n,
            "seed": self.seed,
        }


def placebo_test(panel, config=None, spec=None):
    """Run the DML pipeline with the placebo treatment and interaction."""
    config = config or DmlConfig()
    spec = spec or PlaceboSpec(seed=config.seed)
    placebo = make_placebo_treatment(panel, spec, source=config.treatment)
    est = dml_fit(placebo, config.replace(treatment="fake_strike", interaction="fake_interaction"))
    return Table5Report(coefficient=est.tau, interaction=est.gamma, spec=spec, n=est.n, seed=config.seed)


def default_seeds(count=30, offset=1000):
    return [offset + i for i in range(count)]


@dataclass
class SeedSweepResult:
    records: list
    failures: list = field(default_factory=list)

    def frame(self):
        return pd.DataFrame(self.records, columns=SWEEP_COLUMNS)

    def summary(self, alpha=0.05):
        frame = self.frame()
        out = {"n_seeds": len(frame), "n_failures": len(self.failures)}
        for name in ("tau", "gamma"):
            v = frame[name].to_numpy(dtype=float)
            p = frame[f"{name}_p"].to_numpy(dtype=float)
            if v.size == 0:
                out[name] = None
                continue
            pos = float(np.mean(v > 0))
            out[name] = {
                "mean": float(np.mean(v)),
                "sd": float(np.std(v, ddof=1)) if v.size > 1 else 0.0,
                "min": float(v.min()),
                "max": float(v.max()),
                "positive_fraction": pos,
                "sign_stability": max(pos, float(np.mean(v < 0))),
                "significant_fraction": float(np.mean(p < alpha)),
            }
        return out

    def to_dict(self):
        return {"records": self.records, "failures": self.failures, "summary": self.summary()}


def seed_sweep(panel, config=None, seeds=None):
    """One DML fit per master seed; failing seeds are recorded, not raised."""
    config = config or DmlConfig()
    seeds = default_seeds() if seeds is None else [int(s) for s in seeds]
    if len(seeds) < 2:
        raise ValueError("a sweep needs at least two seeds")
    records, failures = [], []
    for s in sorted(seeds):
        try:
            est = dml_fit(panel, config.replace(seed=s))
        except (NumericalError, DataError) as exc:
            failures.append({"seed": s, "error": str(exc)})
            continue
        records.append({
            "seed": s, "tau": est.tau.estimate, "tau_se": est.tau.se, "tau_p": est.tau.p_value,
            "gamma": est.gamma.estimate, "gamma_se": est.gamma.se, "gamma_p": est.gamma.p_value,
            "ci_low_gamma": est.gamma.ci_low, "ci_high_gamma": est.gamma.ci_high,
        })
    return SeedSweepResult(records=records, failures=failures)
