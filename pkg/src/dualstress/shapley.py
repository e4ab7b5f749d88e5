"""Exact interventional Shapley values for boosted tree ensembles.

For one tree leaf with value ``v`` and a background row ``z``, the hybrid
input ``(x_S, z_rest)`` reaches the leaf iff every path feature in ``S`` is
satisfied by ``x`` and every other path feature by ``z``. Let ``A`` be the
path features satisfied only by ``x`` and ``B`` those satisfied only by
``z`` (``a = |A|``, ``b = |B|``). If some path feature is satisfied by
neither, the leaf is unreachable for every ``S``. Otherwise the game is a
conjunction and its Shapley values are

    +v (a-1)! b! / (a+b)!   for features in A
    -v a! (b-1)! / (a+b)!   for features in B

and zero elsewhere. Averaging over the background is done per leaf through
the frequencies of the background's satisfaction patterns, so the cost is
linear in instances, leaves and background size separately.
"""
from dataclasses import dataclass, field
from math import factorial

import numpy as np
import pandas as pd
from scipy import stats

from ._rng import derive_rng
from .errors import DataError, SchemaError
from .panel import CONTROL_COLUMNS, LAG_COLUMNS, model_rows
from .trees import BoostingConfig, fit_gbrt

# The product column is left out by default: trees learn the interaction from
# its two parents, and a deterministic product column would otherwise absorb
# the attribution that the strike-by-inflation dependence table is meant to show.
PREDICTIVE_FEATURES = [*LAG_COLUMNS, "inflation_at_entry", *CONTROL_COLUMNS]
PREDICTIVE_FEATURES_WITH_PRODUCT = [*LAG_COLUMNS, "inflation_at_entry", "interaction_term", *CONTROL_COLUMNS]


@dataclass
class ShapAttribution:
    values: np.ndarray
    baseline: float
    feature_names: list = None

    def to_dict(self):
        names = self.feature_names or [f"x{j}" for j in range(self.values.shape[-1])]
        return {"baseline": self.baseline, "values": dict(zip(names, map(float, np.atleast_2d(self.values)[0])))}


def _leaf_box(path):
    """Per-feature interval ``(lo, hi]`` implied by a root-to-leaf path."""
    box = {}
    for f, thr, left in path:
        lo, hi = box.get(f, (-np.inf, np.inf))
        box[f] = (lo, min(hi, thr)) if left else (max(lo, thr), hi)
    feats = sorted(box)
    return feats, np.array([box[f][0] for f in feats]), np.array([box[f][1] for f in feats])


def _pattern(X, feats, lo, hi):
    sat = (X[:, feats] > lo) & (X[:, feats] <= hi)
    return sat @ (1 << np.arange(len(feats)))


def _weight_table(k):
    """``W[px, pz, j]``: Shapley weight of path feature ``j`` for unit leaf value."""
    size = 1 << k
    W = np.zeros((size, size, k))
    for px in range(size):
        for pz in range(size):
            sx = [(px >> j) & 1 for j in range(k)]
            sz = [(pz >> j) & 1 for j in range(k)]
            if any(not a and not b for a, b in zip(sx, sz)):
                continue
            A = [j for j in range(k) if sx[j] and not sz[j]]
            B = [j for j in range(k) if sz[j] and not sx[j]]
            a, b = len(A), len(B)
            if a + b == 0:
                continue
            for j in A:
                W[px, pz, j] = factorial(a - 1) * factorial(b) / factorial(a + b)
            for j in B:
                W[px, pz, j] = -factorial(a) * factorial(b - 1) / factorial(a + b)
    return W


_TABLES = {}


def _table(k):
    if k not in _TABLES:
        _TABLES[k] = _weight_table(k)
    return _TABLES[k]


def tree_shap(tree, X, background):
    """Interventional Shapley values of one tree, shape ``(n, p)``."""
    X = np.asarray(X, dtype=float)
    background = np.asarray(background, dtype=float)
    phi = np.zeros(X.shape)
    m = len(background)
    for leaf, path in tree.leaf_paths():
        if not path:
            continue
        feats, lo, hi = _leaf_box(path)
        k = len(feats)
        freq = np.bincount(_pattern(background, feats, lo, hi), minlength=1 << k) / m
        # expected weight per instance pattern, averaged over background patterns
        per_x = np.einsum("z,xzj->xj", freq, _table(k))
        phi[:, feats] += tree.value[leaf] * per_x[_pattern(X, feats, lo, hi)]
    return phi


def _check(ensemble, X, name):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != ensemble.n_features:
        raise SchemaError(f"{name} must have {ensemble.n_features} features, got shape {X.shape}")
    return X


def shap_values(ensemble, X, background):
    """Shapley attributions of ``ensemble`` at rows ``X`` against ``background``.

    Returns a :class:`ShapAttribution` whose ``values`` has shape
    ``(n, p)``; ``baseline + values.sum(axis=1)`` equals the prediction.
    """
    X = _check(ensemble, X, "x")
    background = _check(ensemble, background, "background")
    if len(background) == 0:
        raise ValueError("background dataset is empty")
    phi = np.zeros(X.shape)
    for tree in ensemble.trees:
        phi += tree_shap(tree, X, background)
    phi *= ensemble.config.learning_rate
    baseline = float(np.mean(ensemble.predict(background)))
    return ShapAttribution(values=phi, baseline=baseline, feature_names=ensemble.feature_names)


def brute_force_shap(predict, x, background):
    """Subset enumeration over all ``2^p`` coalitions; uses only ``predict``."""
    x = np.asarray(x, dtype=float)
    background = np.asarray(background, dtype=float)
    p = x.size
    masks = ((np.arange(1 << p)[:, None] >> np.arange(p)) & 1).astype(bool)
    hybrid = np.where(masks[:, None, :], x[None, None, :], background[None, :, :])
    value = predict(hybrid.reshape(-1, p)).reshape(len(masks), len(background)).mean(axis=1)
    sizes = masks.sum(axis=1)
    phi = np.zeros(p)
    for i in range(p):
        without = ~masks[:, i]
        s = sizes[without]
        w = np.array([factorial(k) * factorial(p - k - 1) / factorial(p) for k in s])
        idx = np.flatnonzero(without)
        phi[i] = np.sum(w * (value[idx | (1 << i)] - value[idx]))
    return phi


def global_importance(ensemble, dataset, background, feature_names=None):
    """Mean absolute attribution per feature, descending (ties by feature index)."""
    X = _check(ensemble, dataset, "dataset")
    if len(X) == 0:
        raise ValueError("dataset is empty")
    phi = shap_values(ensemble, X, background).values
    imp = np.abs(phi).mean(axis=0)
    names = feature_names or ensemble.feature_names or [f"x{j}" for j in range(X.shape[1])]
    order = sorted(range(len(imp)), key=lambda j: (-imp[j], j))
    return pd.DataFrame({"feature": [names[j] for j in order], "mean_abs_shap": imp[order]})


def dependence_data(ensemble, dataset, background, feature, color_feature, feature_names=None):
    """Per-row ``(feature value, attribution, colour value)`` for plotting."""
    X = _check(ensemble, dataset, "dataset")
    names = list(feature_names or ensemble.feature_names or [f"x{j}" for j in range(X.shape[1])])
    for f in (feature, color_feature):
        if f not in names:
            raise KeyError(f"unknown feature {f!r}")
    j, c = names.index(feature), names.index(color_feature)
    phi = shap_values(ensemble, X, background).values
    return pd.DataFrame({"feature_value": X[:, j], "shap_value": phi[:, j], "color_value": X[:, c]})


# ---------------------------------------------------------------------------
# Predictive model
# ---------------------------------------------------------------------------

def stratified_split(y, test_fraction, seed):
    """Per-class shuffled split; each class contributes ``round(f * n_class)`` test rows."""
    y = np.asarray(y)
    rng = derive_rng(seed, "predictive", "split")
    test = []
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(idx.size)]
        test.append(idx[: int(round(test_fraction * idx.size))])
    test = np.sort(np.concatenate(test))
    train = np.setdiff1d(np.arange(len(y)), test, assume_unique=True)
    return train, test


def rank_auc(y, score):
    """Mann-Whitney AUC with average ranks for ties."""
    y = np.asarray(y).astype(bool)
    n1, n0 = int(y.sum()), int((~y).sum())
    if n1 == 0 or n0 == 0:
        raise DataError("AUC needs both classes")
    ranks = stats.rankdata(score)
    return float((ranks[y].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def reliability_table(y, prob, bins=10):
    prob = np.clip(np.asarray(prob, dtype=float), 0.0, 1.0)
    y = np.asarray(y, dtype=float)
    which = np.minimum((prob * bins).astype(int), bins - 1)
    rows = []
    for b in range(bins):
        m = which == b
        rows.append({"bin": b, "lower": b / bins, "upper": (b + 1) / bins, "count": int(m.sum()),
                     "mean_predicted": float(prob[m].mean()) if m.any() else None,
                     "observed_rate": float(y[m].mean()) if m.any() else None})
    return rows


@dataclass
class PredictiveModel:
    ensemble: object
    features: list
    train_index: np.ndarray
    test_index: np.ndarray
    background: np.ndarray
    report: dict = field(default_factory=dict)


def fit_predictive_model(panel, features=None, test_fraction=0.3, seed=0, config=None, background_size=256):
    """Boosted dropout model on a stratified split, evaluated by test AUC.

    ``train_index``/``test_index`` refer to positions among the complete rows
    of ``panel`` (all lags present).
    """
    features = list(features or PREDICTIVE_FEATURES)
    config = (config or BoostingConfig()).replace(seed=int(seed))
    data = panel.loc[model_rows(panel, features)]
    X = data[features].to_numpy(dtype=float)
    y = data["dropout_next_sem"].to_numpy(dtype=float)
    train, test = stratified_split(y, test_fraction, seed)
    for name, idx in (("train", train), ("test", test)):
        if len(np.unique(y[idx])) < 2:
            raise DataError(f"{name} split lacks one outcome class")
    ensemble = fit_gbrt(X[train], y[train], config, feature_names=features)
    score = ensemble.predict(X[test])
    bg_rng = derive_rng(seed, "predictive", "background")
    pick = np.sort(bg_rng.choice(len(train), size=min(background_size, len(train)), replace=False))
    report = {
        "auc": rank_auc(y[test], score),
        "n_train": int(len(train)),
        "n_test": int(len(test)),
        "train_rate": float(y[train].mean()),
        "test_rate": float(y[test].mean()),
        "calibration": reliability_table(y[test], score),
        "features": features,
        "seed": int(seed),
    }
    return PredictiveModel(ensemble, features, train, test, X[train][pick], report)
