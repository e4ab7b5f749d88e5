"""Cross-fitted partially linear DML for a treatment and its interaction.

Target model: ``Y = alpha + tau*T + gamma*(T*X) + g(W) + eps``. The outcome,
the treatment and the interaction are each residualized on ``W`` with
boosted trees fitted out of fold; the final stage is an OLS of the outcome
residual on both treatment residuals with an intercept and HC1 standard
errors.
"""
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import stats

from ._rng import derive_rng, derive_seed
from .errors import NumericalError, SchemaError
from .panel import CONTROL_COLUMNS
from .trees import BoostingConfig, fit_gbrt

# Residualization controls: the logit controls plus the moderator itself.
W_COLUMNS = [*CONTROL_COLUMNS, "inflation_at_entry"]
TABLE4_COLUMNS = ["Parameter", "Estimate", "Std. Error", "p-value"]
TABLE4_ROWS = ["Strikes (Lag 2)", "Interaction (Strikes x Inflation)"]


@dataclass(frozen=True)
class DmlConfig:
    folds: int = 5
    seed: int = 0
    learner: BoostingConfig = field(default_factory=BoostingConfig)
    se_type: str = "HC1"
    level: float = 0.95
    treatment: str = "strikes_lag2"
    interaction: str = "interaction_term"
    controls: tuple = tuple(W_COLUMNS)
    threads: int = 1

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("at least two folds are required")
        if not 0.0 < self.level < 1.0:
            raise ValueError("confidence level must lie in (0, 1)")
        if self.se_type not in ("HC1", "HC0"):
            raise ValueError(f"unsupported standard-error variant {self.se_type!r}")
        object.__setattr__(self, "controls", tuple(self.controls))

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        d = asdict(self)
        d["controls"] = list(self.controls)
        d.pop("threads")
        return d


def assign_folds(n, folds, seed):
    """Seeded partition of ``range(n)`` into ``folds`` groups of near-equal size."""
    if folds < 2:
        raise ValueError("at least two folds are required")
    if n < folds:
        raise ValueError(f"cannot split {n} rows into {folds} folds")
    perm = derive_rng(seed, "dml", "folds").permutation(n)
    labels = np.empty(n, dtype=np.int64)
    labels[perm] = np.arange(n) % folds
    return labels


def _canonical_folds(labels):
    """Fold ids renumbered by each fold's smallest row index.

    Per-fold seeds are derived from this canonical number, so relabeling
    the folds of one partition leaves every nuisance fit unchanged.
    """
    ids = np.unique(labels)
    first = np.array([np.flatnonzero(labels == f)[0] for f in ids])
    rank = {int(f): r for r, f in enumerate(ids[np.argsort(first)])}
    return [(rank[int(f)], np.flatnonzero(labels == f)) for f in ids[np.argsort(first)]]


@dataclass
class FoldDiagnostic:
    fold: int
    n_train: int
    n_test: int
    oof_mse: float
    constant: bool

    def to_dict(self):
        return asdict(self)


def crossfit_residualize(W, target, labels, learner=None, seed=0, name="target", threads=1):
    """Out-of-fold residuals ``target - E_hat[target | W]``.

    Returns ``(residuals, diagnostics)``. A fold whose training target is
    constant is predicted by that constant and flagged with a warning.
    """
    W = np.ascontiguousarray(W, dtype=float)
    target = np.asarray(target, dtype=float)
    learner = learner or BoostingConfig()
    folds = _canonical_folds(np.asarray(labels))

    def run(item):
        k, test = item
        train = np.setdiff1d(np.arange(len(target)), test, assume_unique=True)
        y_train = target[train]
        constant = bool(np.all(y_train == y_train[0]))
        model = fit_gbrt(W[train], y_train, learner.replace(seed=derive_seed(seed, "dml", name, k)))
        pred = model.predict(W[test])
        resid = target[test] - pred
        return k, test, resid, FoldDiagnostic(k, len(train), len(test), float(np.mean(resid ** 2)), constant)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, folds))
    else:
        results = [run(item) for item in folds]
    residuals = np.empty(len(target))
    diagnostics = []
    for k, test, resid, diag in results:
        residuals[test] = resid
        diagnostics.append(diag)
        if diag.constant:
            warnings.warn(f"{name}: training target constant in fold {k}; residuals use that constant",
                          RuntimeWarning, stacklevel=2)
    return residuals, diagnostics


@dataclass
class OlsResult:
    coef: np.ndarray
    cov: np.ndarray
    residuals: np.ndarray

    @property
    def se(self):
        return np.sqrt(np.diag(self.cov))


def ols_robust(X, y, se_type="HC1"):
    """OLS with White (HC0) or small-sample scaled (HC1) covariance."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    if n <= k:
        raise NumericalError(f"final stage needs more rows than columns (n={n}, k={k})")
    q, r = np.linalg.qr(X)
    if np.min(np.abs(np.diag(r))) <= 1e-12 * np.max(np.abs(np.diag(r))):
        raise NumericalError("final-stage design is singular")
    coef = np.linalg.solve(r, q.T @ y)
    resid = y - X @ coef
    bread = np.linalg.inv(r.T @ r)
    meat = (X * (resid ** 2)[:, None]).T @ X
    cov = bread @ meat @ bread
    if se_type == "HC1":
        cov *= n / (n - k)
    return OlsResult(coef, 0.5 * (cov + cov.T), resid)


@dataclass
class ResidualSet:
    row_index: np.ndarray
    student_id: np.ndarray
    semester_number: np.ndarray
    folds: np.ndarray
    y: np.ndarray
    t: np.ndarray
    tx: np.ndarray
    diagnostics: dict

    def to_frame(self):
        return pd.DataFrame({"row": self.row_index, "student_id": self.student_id,
                             "semester_number": self.semester_number, "fold": self.folds,
                             "y_resid": self.y, "t_resid": self.t, "tx_resid": self.tx})


@dataclass
class Coefficient:
    estimate: float
    se: float
    ci_low: float
    ci_high: float
    p_value: float

    def to_dict(self):
        return asdict(self)


def _coefficient(b, se, crit):
    if se > 0:
        p = float(2.0 * stats.norm.sf(abs(b / se)))
    else:
        p = 1.0 if b == 0 else 0.0
    return Coefficient(float(b), float(se), float(b - crit * se), float(b + crit * se), min(max(p, 0.0), 1.0))


@dataclass
class DmlEstimate:
    tau: Coefficient
    gamma: Coefficient
    alpha: Coefficient
    n: int
    folds: int
    seed: int
    level: float
    residuals: ResidualSet = None
    treatment: str = "strikes_lag2"
    interaction: str = "interaction_term"

    def table_rows(self, labels=None):
        labels = labels or TABLE4_ROWS
        return [(labels[0], self.tau), (labels[1], self.gamma)]

    def to_dict(self):
        diag = {}
        if self.residuals is not None:
            diag = {k: [d.to_dict() for d in v] for k, v in self.residuals.diagnostics.items()}
        return {
            "table": "dml_estimates",
            "columns": TABLE4_COLUMNS,
            "rows": [{"parameter": label, **c.to_dict()} for label, c in self.table_rows()],
            "tau": self.tau.to_dict(),
            "gamma": self.gamma.to_dict(),
            "intercept": self.alpha.to_dict(),
            "n": self.n,
            "folds": self.folds,
            "seed": self.seed,
            "level": self.level,
            "treatment": self.treatment,
            "interaction": self.interaction,
            "nuisance_diagnostics": diag,
        }


def model_mask(panel, columns):
    return panel[list(columns)].notna().all(axis=1).to_numpy()


def _check_collinear(a, b, what, bound=0.999):
    if np.std(a) == 0 or np.std(b) == 0:
        return
    corr = float(np.corrcoef(a, b)[0, 1])
    if abs(corr) > bound:
        raise NumericalError(f"{what} are collinear (corr={corr:.4f}); "
                             "inspect the variation of inflation_at_entry across cohorts")


def dml_fit(panel, config=None):
    """Cross-fitted estimates of the treatment and interaction effects."""
    config = config or DmlConfig()
    cols = ["dropout_next_sem", config.treatment, config.interaction, *config.controls]
    missing = [c for c in cols if c not in panel.columns]
    if missing:
        raise SchemaError(f"panel lacks columns: {', '.join(missing)}")
    mask = model_mask(panel, cols)
    data = panel.loc[mask]
    n = len(data)
    if n < 2 * config.folds:
        raise NumericalError(f"only {n} complete rows for {config.folds}-fold cross-fitting")
    W = data[list(config.controls)].to_numpy(dtype=float)
    y = data["dropout_next_sem"].to_numpy(dtype=float)
    t = data[config.treatment].to_numpy(dtype=float)
    tx = data[config.interaction].to_numpy(dtype=float)
    _check_collinear(t, tx, "treatment and interaction")
    labels = assign_folds(n, config.folds, config.seed)
    res, diags = {}, {}
    for name, target in (("y", y), ("t", t), ("tx", tx)):
        res[name], diags[name] = crossfit_residualize(W, target, labels, config.learner, config.seed, name,
                                                      threads=config.threads)
    if np.std(res["t"]) == 0 or np.std(res["tx"]) == 0:
        raise NumericalError("a residualized treatment has no variation left after conditioning on W")
    _check_collinear(res["t"], res["tx"], "residualized treatment and interaction")
    X = np.column_stack([np.ones(n), res["t"], res["tx"]])
    fit = ols_robust(X, res["y"], config.se_type)
    crit = float(stats.norm.ppf(0.5 + config.level / 2.0))
    se = fit.se
    residuals = ResidualSet(
        row_index=np.flatnonzero(mask), student_id=data["student_id"].to_numpy(),
        semester_number=data["semester_number"].to_numpy(), folds=labels,
        y=res["y"], t=res["t"], tx=res["tx"], diagnostics=diags)
    return DmlEstimate(
        tau=_coefficient(fit.coef[1], se[1], crit), gamma=_coefficient(fit.coef[2], se[2], crit),
        alpha=_coefficient(fit.coef[0], se[0], crit), n=n, folds=config.folds, seed=config.seed,
        level=config.level, residuals=residuals, treatment=config.treatment, interaction=config.interaction)


def naive_ols(panel, treatment="strikes_lag2", interaction="interaction_term", level=0.95):
    """OLS of Y on ``[1, T, T*X]`` without controls; a deliberately biased baseline."""
    mask = model_mask(panel, ["dropout_next_sem", treatment, interaction])
    data = panel.loc[mask]
    X = np.column_stack([np.ones(len(data)), data[treatment].to_numpy(float), data[interaction].to_numpy(float)])
    fit = ols_robust(X, data["dropout_next_sem"].to_numpy(float))
    crit = float(stats.norm.ppf(0.5 + level / 2.0))
    return {"tau": _coefficient(fit.coef[1], fit.se[1], crit), "gamma": _coefficient(fit.coef[2], fit.se[2], crit)}
