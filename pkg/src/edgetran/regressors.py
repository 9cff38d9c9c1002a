"""Regressors with a shared fit / predict / uncertainty interface.

Three kinds are provided: ordinary least squares, a single regression tree and
least-squares gradient boosting over depth-limited trees. Only the boosted
ensemble reports a model-based uncertainty; the other two return zero, which
callers read as "fall back to random queries".
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import FitError, NormalizeError, StateError

MODEL_FORMAT_VERSION = 1


class RegressorKind(enum.Enum):
    LINEAR = "linear"
    DECISION_TREE = "decision_tree"
    GBDT = "gbdt"


GBDT_DEFAULTS = {
    "n_trees": 200,
    "max_depth": 4,
    "learning_rate": 0.1,
    "min_leaf": 2,
    "subsample": 1.0,
    "seed": 0,
    "max_bins": 64,
}

TREE_DEFAULTS = {"max_depth": 8, "min_leaf": 2, "max_bins": 256}


@dataclass
class FitReport:
    train_mse: float
    val_mse: float
    n_samples: int


def normalize_targets(y_raw) -> tuple[np.ndarray, float]:
    """Divide by the maximum so all targets land in (0, 1]."""
    y = np.asarray(y_raw, dtype=np.float64)
    if y.size == 0 or not np.all(np.isfinite(y)) or np.any(y <= 0):
        raise NormalizeError("targets must be finite and strictly positive")
    m = float(y.max())
    return y / m, m


def denormalize_targets(y_norm, max_value: float) -> np.ndarray:
    return np.asarray(y_norm, dtype=np.float64) * max_value


def _check_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise FitError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if X.shape[0] < 2:
        raise FitError("need at least two samples")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise FitError("non-finite values in training data")
    return X, y


# ---------------------------------------------------------------------------
# trees as flat arrays

@dataclass
class TreeArrays:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        return _kernels.tree_predict(self.feature, self.threshold, self.left, self.right, self.value, X)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d: dict) -> "TreeArrays":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=np.float64),
        )


@dataclass
class Binning:
    """Integer codes for each feature plus the real threshold of every bin edge."""
    codes: np.ndarray        # (n, d) int64
    n_bins: np.ndarray       # (d,)
    cut: np.ndarray          # (d, max_bins): threshold when splitting after bin b
    max_bins: int


def make_bins(X: np.ndarray, max_bins: int) -> Binning:
    """Quantile binning; exact (one bin per distinct value) when values are few."""
    n, d = X.shape
    codes = np.zeros((n, d), dtype=np.int64)
    n_bins = np.zeros(d, dtype=np.int64)
    cut = np.zeros((d, max_bins))
    qs = np.linspace(0.0, 1.0, max_bins + 1)[1:]
    for f in range(d):
        col = X[:, f]
        u = np.unique(col)
        ub = u if len(u) <= max_bins else np.unique(np.quantile(col, qs, method="inverted_cdf"))
        codes[:, f] = np.searchsorted(ub, col, side="left")
        n_bins[f] = len(ub)
        nxt = u[np.minimum(np.searchsorted(u, ub, side="right"), len(u) - 1)]
        cut[f, : len(ub)] = 0.5 * (ub + nxt)
    return Binning(codes, n_bins, cut, max_bins)


def build_tree(X: np.ndarray, y: np.ndarray, max_depth: int, min_leaf: int,
               max_bins: int = 256, bins: Binning | None = None, rows: np.ndarray | None = None) -> TreeArrays:
    """Least-squares regression tree grown level by level on binned features."""
    bins = bins or make_bins(X, max_bins)
    codes = bins.codes if rows is None else np.ascontiguousarray(bins.codes[rows])
    feature, split_bin, left, right, value = _kernels.grow_tree(
        codes, np.ascontiguousarray(y, dtype=np.float64), bins.n_bins, bins.max_bins, max_depth, min_leaf)
    inner = feature >= 0
    threshold = np.zeros(len(feature))
    threshold[inner] = bins.cut[feature[inner], split_bin[inner]]
    return TreeArrays(feature.copy(), threshold, left.copy(), right.copy(), value.copy())


# ---------------------------------------------------------------------------
# models

class Regressor:
    kind: RegressorKind

    def __init__(self, hyper: dict | None = None):
        self.hyper = dict(hyper or {})
        self.fitted = False
        self.n_features: int | None = None

    def fit(self, X, y) -> "Regressor":
        raise NotImplementedError

    def _predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check_predict(self, X) -> np.ndarray:
        if not self.fitted:
            raise StateError(f"{type(self).__name__} is not fitted")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :] if self.n_features and X.shape[0] == self.n_features else X[:, None]
        return np.ascontiguousarray(X)

    def predict(self, X) -> np.ndarray:
        return self._predict(self._check_predict(X))

    def predict_with_uncertainty(self, X) -> tuple[np.ndarray, np.ndarray]:
        X = self._check_predict(X)
        mu = self._predict(X)
        return mu, np.zeros_like(mu)

    def to_dict(self) -> dict:
        raise NotImplementedError

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


class LinearRegressor(Regressor):
    kind = RegressorKind.LINEAR

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        A = np.column_stack([X, np.ones(len(y))])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        self.coef_ = coef[:-1]
        self.intercept_ = float(coef[-1])
        self.n_features = X.shape[1]
        self.fitted = True
        return self

    def _predict(self, X):
        return X @ self.coef_ + self.intercept_

    def to_dict(self):
        return {"format_version": MODEL_FORMAT_VERSION, "kind": self.kind.value, "hyper": self.hyper,
                "coef": self.coef_.tolist(), "intercept": self.intercept_}


class DecisionTreeRegressor(Regressor):
    kind = RegressorKind.DECISION_TREE

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        h = {**TREE_DEFAULTS, **self.hyper}
        self.tree_ = build_tree(np.ascontiguousarray(X), y, int(h["max_depth"]), int(h["min_leaf"]),
                                int(h["max_bins"]))
        self.n_features = X.shape[1]
        self.fitted = True
        return self

    def _predict(self, X):
        return self.tree_.predict(X)

    def to_dict(self):
        return {"format_version": MODEL_FORMAT_VERSION, "kind": self.kind.value, "hyper": self.hyper,
                "n_features": self.n_features, "tree": self.tree_.to_dict()}


class GBDTRegressor(Regressor):
    """Least-squares gradient boosting with shrinkage.

    Uncertainty is the standard deviation of the staged (cumulative)
    predictions ``F_1(x), ..., F_M(x)``.
    """

    kind = RegressorKind.GBDT

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        h = {**GBDT_DEFAULTS, **self.hyper}
        self.hyper = h
        X = np.ascontiguousarray(X)
        rng = np.random.default_rng(int(h["seed"]))
        n = len(y)
        self.init_ = float(y.mean())
        pred = np.full(n, self.init_)
        self.trees_: list[TreeArrays] = []
        self.train_loss_ = [float(np.mean((y - pred) ** 2))]
        lr = float(h["learning_rate"])
        n_sub = max(2 * int(h["min_leaf"]), int(round(float(h["subsample"]) * n)))
        depth, min_leaf = int(h["max_depth"]), int(h["min_leaf"])
        bins = make_bins(X, int(h["max_bins"]))
        for _ in range(int(h["n_trees"])):
            resid = y - pred
            if n_sub < n:
                idx = np.sort(rng.choice(n, size=n_sub, replace=False))
                tree = build_tree(X, resid[idx], depth, min_leaf, bins=bins, rows=idx)
            else:
                tree = build_tree(X, resid, depth, min_leaf, bins=bins)
            pred = pred + lr * tree.predict(X)
            self.trees_.append(tree)
            self.train_loss_.append(float(np.mean((y - pred) ** 2)))
        self._pack()
        self.n_features = X.shape[1]
        self.fitted = True
        return self

    def _pack(self):
        sizes = [len(t.feature) for t in self.trees_]
        roots = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        shift = lambda arr, r: np.where(arr >= 0, arr + r, -1)
        self._flat = (
            np.concatenate([t.feature for t in self.trees_]),
            np.concatenate([t.threshold for t in self.trees_]),
            np.concatenate([shift(t.left, r) for t, r in zip(self.trees_, roots)]).astype(np.int64),
            np.concatenate([shift(t.right, r) for t, r in zip(self.trees_, roots)]).astype(np.int64),
            np.concatenate([t.value for t in self.trees_]),
            roots,
        )

    def stage_contributions(self, X) -> np.ndarray:
        """``learning_rate * tree_m(x)`` for every stage, shape ``(n_trees, n_rows)``."""
        X = self._check_predict(X)
        per_tree = _kernels.forest_predict(*self._flat, X)
        return float(self.hyper["learning_rate"]) * per_tree

    def _predict(self, X):
        return self.init_ + self.stage_contributions(X).sum(axis=0)

    def predict_with_uncertainty(self, X):
        staged = self.init_ + np.cumsum(self.stage_contributions(X), axis=0)
        return staged[-1], staged.std(axis=0)

    def to_dict(self):
        return {"format_version": MODEL_FORMAT_VERSION, "kind": self.kind.value, "hyper": self.hyper,
                "n_features": self.n_features, "init": self.init_,
                "trees": [t.to_dict() for t in self.trees_]}


_KINDS = {
    RegressorKind.LINEAR: LinearRegressor,
    RegressorKind.DECISION_TREE: DecisionTreeRegressor,
    RegressorKind.GBDT: GBDTRegressor,
}


def make(kind: RegressorKind | str, hyper: dict | None = None) -> Regressor:
    return _KINDS[RegressorKind(kind)](hyper)


def fit(kind: RegressorKind | str, X, y, hyper: dict | None = None) -> Regressor:
    return make(kind, hyper).fit(X, y)


def predict_with_uncertainty(model: Regressor, X) -> tuple[np.ndarray, np.ndarray]:
    return model.predict_with_uncertainty(X)


def load_model(doc: dict | str) -> Regressor:
    if isinstance(doc, str):
        with open(doc) as fh:
            doc = json.load(fh)
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise StateError(f"unsupported model format {doc.get('format_version')!r}")
    model = make(doc["kind"], doc.get("hyper"))
    if model.kind is RegressorKind.LINEAR:
        model.coef_ = np.asarray(doc["coef"], dtype=np.float64)
        model.intercept_ = float(doc["intercept"])
        model.n_features = len(model.coef_)
    elif model.kind is RegressorKind.DECISION_TREE:
        model.tree_ = TreeArrays.from_dict(doc["tree"])
        model.n_features = doc["n_features"]
    else:
        model.init_ = float(doc["init"])
        model.trees_ = [TreeArrays.from_dict(t) for t in doc["trees"]]
        model.n_features = doc["n_features"]
        model._pack()
    model.fitted = True
    return model


def train_val_split(n: int, seed: int, val_fraction: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """80/20 split by default; validation gets at least one row."""
    perm = np.random.default_rng(seed).permutation(n)
    n_val = min(n - 1, max(1, int(round(val_fraction * n))))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def fit_report(kind, X, y, hyper: dict | None = None, split_seed: int = 0) -> tuple[Regressor, FitReport]:
    """Fit on the train split and score MSE on the held-out split."""
    X, y = _check_xy(X, y)
    tr, va = train_val_split(len(y), split_seed)
    model = fit(kind, X[tr], y[tr], hyper)
    train_mse = float(np.mean((model.predict(X[tr]) - y[tr]) ** 2))
    val_mse = float(np.mean((model.predict(X[va]) - y[va]) ** 2))
    return model, FitReport(train_mse, val_mse, len(y))
