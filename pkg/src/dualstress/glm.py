"""Logistic regression by IRLS and average marginal effects.

This is the lagged-logit layer: one logit per strike lag with linear
controls, summarised by the average derivative of the fitted probability
with respect to the lagged strike intensity.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import stats
from scipy.special import expit

from .errors import ConvergenceError, NumericalError, RankDeficiencyError, SchemaError
from .panel import CONTROL_COLUMNS, LAG_COLUMNS, model_rows

LAG_LABELS = {1: "MACRO_paros_lag_sem_1", 2: "MACRO_paros_lag_sem_2", 3: "MACRO_paros_lag_sem_3"}


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    values: np.ndarray
    columns: list
    row_ids: np.ndarray = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(self.columns):
            raise SchemaError(f"design has shape {values.shape} but {len(self.columns)} column names")
        if not np.all(np.isfinite(values)):
            raise SchemaError("design matrix contains missing or non-finite values")
        object.__setattr__(self, "values", values)

    def column(self, name):
        return self.columns.index(name)

    @classmethod
    def from_frame(cls, frame, columns, intercept=True):
        cols = list(columns)
        X = frame[cols].to_numpy(dtype=float)
        if intercept:
            X = np.column_stack([np.ones(len(frame)), X])
            cols = ["const", *cols]
        return cls(X, cols, frame.index.to_numpy())


def collinear_columns(X, columns, rtol=1e-10):
    """Names of columns that are linear combinations of earlier-pivoted ones."""
    _, r, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0:
        return []
    rank = int(np.sum(diag > rtol * diag[0]))
    return [columns[j] for j in sorted(piv[rank:])]


@dataclass(eq=False)
class LogitFit:
    coef: np.ndarray
    cov: np.ndarray
    columns: list
    deviance: float
    iterations: int
    converged: bool
    separated: bool
    deviance_trace: list = field(default_factory=list)

    @property
    def se(self):
        return np.sqrt(np.diag(self.cov))

    def predict_proba(self, X):
        X = X.values if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)
        return expit(X @ self.coef)


def _deviance(eta, y):
    # -2 log-likelihood, stable for large |eta|
    return 2.0 * float(np.sum(np.logaddexp(0.0, eta) - y * eta))


def fit_logit(X, y, tol=1e-8, max_iter=100, divergence_bound=30.0):
    """Maximum-likelihood logit via iteratively reweighted least squares.

    Each Newton step is halved until the deviance does not increase, so the
    recorded trace is monotone. Separation is declared when a linear
    predictor exceeds ``divergence_bound`` in absolute value while the
    deviance is still falling; the fit is then returned with
    ``converged=False``. The bound is on the linear predictor rather than on
    coefficients so that covariates on a calendar-year scale, whose
    intercept legitimately runs large, are not flagged.
    """
    if not isinstance(X, DesignMatrix):
        X = DesignMatrix(np.asarray(X, dtype=float), [f"x{j}" for j in range(np.shape(X)[1])])
    A = X.values
    y = np.asarray(y, dtype=float).ravel()
    n, k = A.shape
    if y.shape[0] != n:
        raise SchemaError(f"y has {y.shape[0]} rows, design has {n}")
    if not np.all((y == 0) | (y == 1)):
        raise SchemaError("logit outcome must be binary 0/1")
    if n <= k:
        raise NumericalError(f"need more rows than columns (n={n}, k={k})")
    if y.min() == y.max():
        raise NumericalError("outcome is constant; the logit likelihood has no maximum")
    bad = collinear_columns(A, X.columns)
    if bad:
        raise RankDeficiencyError(bad)

    beta = np.zeros(k)
    eta = A @ beta
    dev = _deviance(eta, y)
    trace = [dev]
    converged = separated = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(eta)
        w = p * (1.0 - p)
        grad = A.T @ (y - p)
        hess = A.T @ (A * w[:, None])
        try:
            step = scipy.linalg.solve(hess, grad, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        for _ in range(60):
            cand = beta + t * step
            cand_eta = A @ cand
            cand_dev = _deviance(cand_eta, y)
            if cand_dev <= dev + 1e-12 * abs(dev):
                break
            t *= 0.5
        else:
            cand, cand_eta, cand_dev = beta, eta, dev
        change = dev - cand_dev
        beta, eta = cand, cand_eta
        dev = min(cand_dev, dev)
        trace.append(dev)
        if np.max(np.abs(eta)) > divergence_bound and change > tol:
            separated = True
            break
        if abs(change) < tol:
            converged = True
            break

    if not separated and dev < 1e-6 * n:
        # perfect prediction: the likelihood supremum is not attained
        separated, converged = True, False

    p = expit(eta)
    w = p * (1.0 - p)
    info = A.T @ (A * w[:, None])
    try:
        cov = scipy.linalg.inv(info)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        cov = np.full((k, k), np.nan)
    cov = 0.5 * (cov + cov.T)
    return LogitFit(coef=beta, cov=cov, columns=list(X.columns), deviance=dev, iterations=it,
                    converged=converged, separated=separated, deviance_trace=trace)


@dataclass(frozen=True)
class MarginalEffect:
    variable: str
    ame: float
    se: float
    z: float
    p_value: float
    ci_low: float
    ci_high: float

    def to_dict(self):
        return {"variable": self.variable, "ame": self.ame, "se": self.se, "z": self.z,
                "p_value": self.p_value, "ci_low": self.ci_low, "ci_high": self.ci_high}


def average_marginal_effect(fit, X, variable, level=0.95):
    """Mean derivative of the fitted probability with respect to ``variable``.

    ``AME = beta_v * mean(p_i (1 - p_i))``. The standard error applies the
    delta method to the fit covariance; the p-value is a two-sided Wald test.
    """
    if not fit.converged:
        reason = "separation detected" if fit.separated else f"no convergence after {fit.iterations} iterations"
        raise ConvergenceError(f"refusing marginal effect on an unconverged fit ({reason})")
    A = X.values if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)
    v = fit.columns.index(variable)
    p = expit(A @ fit.coef)
    dens = p * (1.0 - p)
    beta_v = fit.coef[v]
    ame = float(beta_v * dens.mean())
    # d/d beta_k of mean(beta_v * p(1-p)) = 1[k=v] mean(p(1-p)) + beta_v mean(p(1-p)(1-2p) x_k)
    grad = beta_v * (A * (dens * (1.0 - 2.0 * p))[:, None]).mean(axis=0)
    grad[v] += dens.mean()
    se = float(np.sqrt(max(grad @ fit.cov @ grad, 0.0)))
    if se > 0:
        z = ame / se
        pval = float(2.0 * stats.norm.sf(abs(z)))
    else:
        z, pval = (0.0, 1.0) if ame == 0 else (np.inf, 0.0)
    crit = stats.norm.ppf(0.5 + level / 2.0)
    return MarginalEffect(variable, ame, se, float(z), min(max(pval, 0.0), 1.0),
                          ame - crit * se, ame + crit * se)


@dataclass
class LagEffect:
    lag: int
    label: str
    n: int
    effect: MarginalEffect = None
    error: str = None

    def to_dict(self):
        out = {"lag": self.lag, "label": self.label, "n": self.n, "error": self.error}
        if self.effect is not None:
            out.update({"ate": self.effect.ame, "se": self.effect.se, "p_value": self.effect.p_value,
                        "ci_low": self.effect.ci_low, "ci_high": self.effect.ci_high})
        return out


@dataclass
class Table1Report:
    """Lag / ATE / p-value rows; ATE is the logit average marginal effect."""

    rows: list
    controls: list

    def to_dict(self):
        return {"table": "lagged_logit_effects", "columns": ["Lag", "ATE", "p-value"],
                "controls": list(self.controls), "rows": [r.to_dict() for r in self.rows]}

    def row(self, lag):
        return next(r for r in self.rows if r.lag == lag)


def fit_lag_profile(panel, lags=(1, 2, 3), controls=CONTROL_COLUMNS, tol=1e-8, max_iter=100):
    """One logit per lag (lag + linear controls), summarised by its AME.

    Rows missing any lag are excluded so that all lags share one sample. A
    failing lag is reported with its error and does not stop the others.
    """
    mask = model_rows(panel)
    data = panel.loc[mask]
    controls = [c for c in controls if data[c].nunique() > 1]
    y = data["dropout_next_sem"].to_numpy(dtype=float)
    rows = []
    for k in lags:
        col = LAG_COLUMNS[k - 1]
        entry = LagEffect(lag=k, label=LAG_LABELS.get(k, col), n=len(data))
        try:
            X = DesignMatrix.from_frame(data, [col, *controls])
            fit = fit_logit(X, y, tol=tol, max_iter=max_iter)
            entry.effect = average_marginal_effect(fit, X, col)
        except (NumericalError, SchemaError) as exc:
            entry.error = str(exc)
        rows.append(entry)
    return Table1Report(rows=rows, controls=list(controls))
