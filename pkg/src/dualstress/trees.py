"""Depth-limited gradient-boosted regression trees under squared loss.

The same learner serves as the nuisance model for cross-fitting and as the
stand-alone predictive model whose Shapley values are reported.

Split search is exhaustive over midpoints between consecutive distinct
feature values present in a node. Features are encoded once per fit as
indices into their sorted unique values and each tree level is grown from
per-node histograms over those bins (compiled loop in ``_kernels``). Ties in
gain are broken by lowest feature index, then lowest threshold.
"""
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .errors import SchemaError

FORMAT = "dualstress.gbrt"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class BoostingConfig:
    n_trees: int = 200
    max_depth: int = 3
    learning_rate: float = 0.05
    subsample: float = 0.8
    min_samples_leaf: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 0 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ValueError("n_trees >= 0, max_depth >= 1 and min_samples_leaf >= 1 are required")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must lie in (0, 1]")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def replace(self, **changes):
        return BoostingConfig(**{**asdict(self), **changes})


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Array-encoded binary tree; ``feature == -1`` marks a leaf.

    ``n_samples`` is the number of training rows reaching each node, so the
    children of a node partition its coverage. Rows with ``x[f] <= threshold``
    go left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    max_depth: int

    @property
    def n_nodes(self):
        return len(self.feature)

    def is_leaf(self, node):
        return self.feature[node] < 0

    def apply(self, X):
        X = np.ascontiguousarray(X, dtype=float)
        return _kernels.apply_tree(X, self.feature, self.threshold, self.left, self.right)

    def predict(self, X):
        return self.value[self.apply(X)]

    def leaf_paths(self):
        """``[(leaf, [(feature, threshold, goes_left), ...]), ...]`` in node order."""
        out = []
        stack = [(0, [])]
        while stack:
            node, path = stack.pop()
            if self.feature[node] < 0:
                out.append((node, path))
                continue
            f, t = int(self.feature[node]), float(self.threshold[node])
            stack.append((int(self.right[node]), path + [(f, t, False)]))
            stack.append((int(self.left[node]), path + [(f, t, True)]))
        out.sort(key=lambda item: item[0])
        return out

    def used_features(self):
        return sorted(set(int(f) for f in self.feature if f >= 0))

    def to_dict(self):
        return {
            "feature": [int(v) for v in self.feature],
            "threshold": [None if np.isnan(v) else float(v) for v in self.threshold],
            "left": [int(v) for v in self.left],
            "right": [int(v) for v in self.right],
            "value": [float(v) for v in self.value],
            "n_samples": [int(v) for v in self.n_samples],
            "max_depth": int(self.max_depth),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray([np.nan if v is None else v for v in d["threshold"]], dtype=float),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=float),
            n_samples=np.asarray(d["n_samples"], dtype=np.int64),
            max_depth=int(d["max_depth"]),
        )


@dataclass(frozen=True, eq=False)
class GradientBoostedEnsemble:
    base: float
    trees: list
    config: BoostingConfig
    n_features: int
    train_mse: list = field(default_factory=list)
    feature_names: list = None

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise SchemaError(f"expected {self.n_features} features, got shape {X.shape}")
        return X

    def tree_outputs(self, X):
        """Raw per-tree outputs, shape ``(n_trees, n_rows)`` (before shrinkage)."""
        X = self._check(X)
        if not self.trees:
            return np.zeros((0, len(X)))
        return np.vstack([t.predict(X) for t in self.trees])

    def predict(self, X):
        X = np.ascontiguousarray(self._check(X))
        total = np.zeros(len(X))
        for tree in self.trees:
            total += tree.predict(X)
        return self.base + self.config.learning_rate * total

    def used_features(self):
        return sorted(set().union(*(t.used_features() for t in self.trees))) if self.trees else []

    def to_dict(self):
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "base": float(self.base),
            "n_features": int(self.n_features),
            "feature_names": list(self.feature_names) if self.feature_names is not None else None,
            "config": asdict(self.config),
            "train_mse": [float(v) for v in self.train_mse],
            "trees": [t.to_dict() for t in self.trees],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != FORMAT or d.get("version") != FORMAT_VERSION:
            raise SchemaError(f"unsupported ensemble document {d.get('format')!r} v{d.get('version')}")
        return cls(
            base=float(d["base"]),
            trees=[RegressionTree.from_dict(t) for t in d["trees"]],
            config=BoostingConfig(**d["config"]),
            n_features=int(d["n_features"]),
            train_mse=list(d.get("train_mse", [])),
            feature_names=d.get("feature_names"),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


class _BinnedFeatures:
    """Features recoded as positions in one flat array of per-feature unique values."""

    def __init__(self, X):
        n, p = X.shape
        uniques = [np.unique(X[:, j]) for j in range(p)]
        sizes = np.array([len(u) for u in uniques], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        self.total = int(sizes.sum())
        self.values = np.concatenate(uniques)
        self.bin_feature = np.repeat(np.arange(p), sizes)
        self.bin_start = self.offsets[self.bin_feature]
        self.bin_end = (self.offsets + sizes)[self.bin_feature]
        codes = np.empty((n, p), dtype=np.int64)
        for j in range(p):
            codes[:, j] = np.searchsorted(uniques[j], X[:, j]) + self.offsets[j]
        self.codes = codes
        self.p = p


def _grow_tree(binned, residual, rows, max_depth, min_leaf):
    feature, threshold, left, right, value, n_samples, n_nodes = _kernels.grow_tree(
        binned.codes, residual, rows, binned.bin_feature, binned.bin_start, binned.bin_end,
        binned.values, binned.total, max_depth, min_leaf)
    return RegressionTree(
        feature=feature[:n_nodes].copy(),
        threshold=threshold[:n_nodes].copy(),
        left=left[:n_nodes].copy(),
        right=right[:n_nodes].copy(),
        value=value[:n_nodes].copy(),
        n_samples=n_samples[:n_nodes].copy(),
        max_depth=max_depth,
    )


def fit_gbrt(X, y, config=None, feature_names=None):
    """Fit a squared-loss boosted ensemble.

    Parameters
    ----------
    X : array, shape (n, p)
        Complete numeric features.
    y : array, shape (n,)
        Continuous or 0/1 target; binary targets are fitted as conditional means.
    config : BoostingConfig

    Returns
    -------
    GradientBoostedEnsemble
        ``train_mse[m]`` is the full-sample training MSE after ``m + 1`` trees.
    """
    config = config or BoostingConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise SchemaError(f"X must be (n, p) aligned with y; got {X.shape} and {y.shape}")
    n, p = X.shape
    if n < 2:
        raise ValueError("at least two rows are required")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise SchemaError("missing or non-finite values in training data")
    base = float(y.mean())
    names = list(feature_names) if feature_names is not None else None
    if np.all(y == y[0]):
        return GradientBoostedEnsemble(base=float(y[0]), trees=[], config=config, n_features=p,
                                       feature_names=names)

    binned = _BinnedFeatures(X)
    rng = np.random.default_rng(config.seed)
    n_sub = n if config.subsample >= 1.0 else max(2, int(round(config.subsample * n)))
    pred = np.full(n, base)
    trees, mse = [], []
    all_rows = np.arange(n)
    for _ in range(config.n_trees):
        residual = y - pred
        rows = all_rows if n_sub == n else np.sort(rng.choice(n, size=n_sub, replace=False))
        tree = _grow_tree(binned, residual, rows, config.max_depth, config.min_samples_leaf)
        trees.append(tree)
        pred = pred + config.learning_rate * tree.predict(X)
        mse.append(float(np.mean((y - pred) ** 2)))
    return GradientBoostedEnsemble(base=base, trees=trees, config=config, n_features=p,
                                   train_mse=mse, feature_names=names)
