"""Classifiers for prefix-level risk scores: L2 logistic regression and a random forest."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .featurize import FeatureTable

FORMAT = "pathmon-model"
VERSION = 1


class ModelError(Exception):
    pass


@dataclass(frozen=True)
class Prediction:
    prefix_id: str
    case_id: str
    length: int
    score: float
    label: int


def sigmoid(z):
    """Logistic function that never overflows."""
    z = np.asarray(z, dtype=float)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _check_training(X: np.ndarray, y: np.ndarray) -> None:
    if X.shape[0] == 0:
        raise ModelError("empty training table")
    if len(np.unique(y)) < 2:
        raise ModelError("training data contains a single class")
    if not np.all(np.isfinite(X)):
        raise ModelError("training features contain non-finite values")


def _class_weights(y: np.ndarray, balanced: bool) -> np.ndarray:
    if not balanced:
        return np.ones(len(y))
    pos = y.mean()
    return np.where(y == 1, 0.5 / pos, 0.5 / (1 - pos))


# -- logistic regression --------------------------------------------------------


def logistic_objective(params: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float, weights: np.ndarray | None = None) -> float:
    """Mean negative log-likelihood plus (l2/2)||w||^2; ``params[-1]`` is the bias."""
    w, b = params[:-1], params[-1]
    z = X @ w + b
    nll = np.logaddexp(0.0, z) - y * z
    if weights is not None:
        nll = nll * weights
    return float(nll.mean() + 0.5 * l2 * w @ w)


def logistic_gradient(params: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float, weights: np.ndarray | None = None) -> np.ndarray:
    w, b = params[:-1], params[-1]
    r = sigmoid(X @ w + b) - y
    if weights is not None:
        r = r * weights
    n = X.shape[0]
    return np.concatenate([X.T @ r / n + l2 * w, [r.sum() / n]])


@dataclass
class LogRegModel:
    weights: np.ndarray
    bias: float
    l2_lambda: float
    iterations: int = 0
    final_objective: float = math.nan
    converged: bool = False
    objective_history: list[float] = field(default_factory=list)
    hyper: dict[str, Any] = field(default_factory=dict)
    columns: list[str] = field(default_factory=list)
    spec_fingerprint: str = ""

    kind = "logreg"

    @property
    def width(self) -> int:
        return len(self.weights)

    def logits(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.width:
            raise ModelError(f"expected {self.width} feature columns, got {X.shape[-1]}")
        return X @ self.weights + self.bias

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(self.logits(X))

    def to_dict(self) -> dict:
        return {
            "weights": [float(v) for v in self.weights],
            "bias": float(self.bias),
            "l2_lambda": self.l2_lambda,
            "iterations": self.iterations,
            "final_objective": self.final_objective,
            "converged": self.converged,
            "objective_history": self.objective_history,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogRegModel":
        return cls(
            np.array(d["weights"], dtype=float), d["bias"], d["l2_lambda"], d["iterations"],
            d["final_objective"], d["converged"], list(d["objective_history"]),
        )


def train_logreg(
    X: np.ndarray,
    y: np.ndarray,
    l2_lambda: float = 0.01,
    max_iters: int = 500,
    tolerance: float = 1e-6,
    seed: int = 0,
    class_weight: bool = False,
) -> LogRegModel:
    """Full-batch gradient descent with Barzilai-Borwein steps and Armijo backtracking.

    Starts from zero, so ``seed`` only gets recorded. The bias is not
    regularized. Stops once the largest gradient component drops below
    ``tolerance``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_training(X, y)
    sw = _class_weights(y, class_weight) if class_weight else None
    params = np.zeros(X.shape[1] + 1)
    f = logistic_objective(params, X, y, l2_lambda, sw)
    g = logistic_gradient(params, X, y, l2_lambda, sw)
    history = [f]
    step = 1.0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        if np.max(np.abs(g)) < tolerance:
            converged = True
            it -= 1
            break
        gg = float(g @ g)
        t = step
        for _ in range(60):
            cand = params - t * g
            fc = logistic_objective(cand, X, y, l2_lambda, sw)
            if fc <= f - 1e-4 * t * gg:
                break
            t *= 0.5
        else:
            # no descent possible at machine precision
            converged = bool(np.max(np.abs(g)) < 10 * tolerance)
            it -= 1
            break
        g_new = logistic_gradient(cand, X, y, l2_lambda, sw)
        s, r = cand - params, g_new - g
        sr = float(s @ r)
        step = float(s @ s) / sr if sr > 1e-20 else 2 * t
        step = min(max(step, 1e-10), 1e10)
        params, f, g = cand, fc, g_new
        history.append(f)
    else:
        converged = bool(np.max(np.abs(g)) < tolerance)
    hyper = {"l2_lambda": l2_lambda, "max_iters": max_iters, "tolerance": tolerance, "seed": seed, "class_weight": class_weight}
    return LogRegModel(params[:-1].copy(), float(params[-1]), l2_lambda, it, f, converged, history, hyper)


# -- random forest ---------------------------------------------------------------


def gini(pos: float, n: float) -> float:
    if n == 0:
        return 0.0
    p = pos / n
    return 2.0 * p * (1.0 - p)


@dataclass
class DecisionTree:
    """Array-encoded binary tree; ``feature == -1`` marks a leaf. Rows with x <= threshold go left."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=int)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            f = self.feature[node[idx]]
            go_left = X[idx, f] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])
            active = self.feature[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(v) for v in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": [float(v) for v in self.value],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        return cls(
            np.array(d["feature"], dtype=int), np.array(d["threshold"], dtype=float),
            np.array(d["left"], dtype=int), np.array(d["right"], dtype=int), np.array(d["value"], dtype=float),
        )


def _best_split(X, y, rows, features, min_leaf):
    n = len(rows)
    parent = gini(y[rows].sum(), n)
    best = (parent - 1e-12, None, None)
    ys = y[rows]
    for f in features:
        vals = X[rows, f]
        order = np.argsort(vals, kind="stable")
        sv, sy = vals[order], ys[order]
        left_n = np.arange(1, n)
        left_pos = np.cumsum(sy)[:-1]
        ok = (sv[:-1] < sv[1:]) & (left_n >= min_leaf) & (n - left_n >= min_leaf)
        if not ok.any():
            continue
        right_n = n - left_n
        right_pos = sy.sum() - left_pos
        pl, pr = left_pos / left_n, right_pos / right_n
        score = (left_n * 2 * pl * (1 - pl) + right_n * 2 * pr * (1 - pr)) / n
        score = np.where(ok, score, np.inf)
        i = int(np.argmin(score))
        if score[i] < best[0]:
            lo, hi = sv[i], sv[i + 1]
            thr = (lo + hi) / 2.0
            if not lo <= thr < hi:
                thr = lo
            best = (float(score[i]), int(f), float(thr))
    return best[1], best[2]


def build_tree(X, y, rng, max_depth=12, min_samples_leaf=5, features_per_split=None) -> DecisionTree:
    """Greedy Gini tree over the given rows (a bootstrap sample is passed in by the caller)."""
    n, d = X.shape
    k = features_per_split or d
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(rows):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[rows].mean()))
        return len(feature) - 1

    root = new_node(np.arange(n))
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, rows, depth = stack.pop()
        pos = y[rows].sum()
        if depth >= max_depth or len(rows) < 2 * min_samples_leaf or pos == 0 or pos == len(rows):
            continue
        feats = rng.choice(d, size=min(k, d), replace=False)
        f, thr = _best_split(X, y, rows, feats, min_samples_leaf)
        if f is None:
            continue
        mask = X[rows, f] <= thr
        lrows, rrows = rows[mask], rows[~mask]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(lrows)
        right[node] = new_node(rrows)
        # right pushed first so the left subtree is numbered first
        stack.append((right[node], rrows, depth + 1))
        stack.append((left[node], lrows, depth + 1))
    return DecisionTree(
        np.array(feature, dtype=int), np.array(threshold, dtype=float),
        np.array(left, dtype=int), np.array(right, dtype=int), np.array(value, dtype=float),
    )


@dataclass
class RandomForestModel:
    trees: list[DecisionTree]
    n_trees: int
    max_depth: int
    min_samples_leaf: int
    features_per_split: int
    seed: int
    n_features: int
    hyper: dict[str, Any] = field(default_factory=dict)
    columns: list[str] = field(default_factory=list)
    spec_fingerprint: str = ""

    kind = "rf"

    @property
    def width(self) -> int:
        return self.n_features

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.width:
            raise ModelError(f"expected {self.width} feature columns, got {X.shape[-1]}")
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "features_per_split": self.features_per_split,
            "seed": self.seed,
            "n_features": self.n_features,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RandomForestModel":
        return cls(
            [DecisionTree.from_dict(t) for t in d["trees"]], d["n_trees"], d["max_depth"],
            d["min_samples_leaf"], d["features_per_split"], d["seed"], d["n_features"],
        )


def train_rf(
    X: np.ndarray,
    y: np.ndarray,
    n_trees: int = 100,
    max_depth: int = 12,
    min_samples_leaf: int = 5,
    features_per_split: int | None = None,
    seed: int = 0,
    bootstrap: bool = True,
    class_weight: bool = False,
) -> RandomForestModel:
    """Bagged Gini trees; tree i draws from its own generator seeded by (seed, i).

    ``class_weight`` balances classes by resampling the bootstrap draw.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_training(X, y)
    n, d = X.shape
    k = features_per_split or max(1, int(math.sqrt(d)))
    probs = None
    if class_weight:
        w = _class_weights(y, True)
        probs = w / w.sum()
    trees = []
    for i in range(n_trees):
        rng = np.random.default_rng([seed, i])
        rows = rng.choice(n, size=n, replace=True, p=probs) if bootstrap else np.arange(n)
        trees.append(build_tree(X[rows], y[rows], rng, max_depth, min_samples_leaf, k))
    hyper = {
        "n_trees": n_trees, "max_depth": max_depth, "min_samples_leaf": min_samples_leaf,
        "features_per_split": k, "seed": seed, "bootstrap": bootstrap, "class_weight": class_weight,
    }
    return RandomForestModel(trees, n_trees, max_depth, min_samples_leaf, k, seed, d, hyper)


# -- prediction and persistence ----------------------------------------------------

Model = LogRegModel | RandomForestModel


def _fit_meta(model: Model, table: FeatureTable) -> Model:
    model.columns = list(table.column_names)
    model.spec_fingerprint = table.spec.fingerprint()
    return model


def fit(kind: str, table: FeatureTable, **hyper) -> Model:
    if kind == "logreg":
        return _fit_meta(train_logreg(table.X, table.labels, **hyper), table)
    if kind == "rf":
        return _fit_meta(train_rf(table.X, table.labels, **hyper), table)
    raise ModelError(f"unknown model kind {kind!r}")


def check_compatible(model: Model, table: FeatureTable) -> None:
    if model.spec_fingerprint and model.spec_fingerprint != table.spec.fingerprint():
        raise ModelError(
            f"feature spec fingerprint mismatch: model {model.spec_fingerprint[:12]}, table {table.spec.fingerprint()[:12]}"
        )
    if model.columns and model.columns != table.column_names:
        raise ModelError("feature columns differ from those the model was trained on")


def predict(model: Model, table: FeatureTable) -> list[Prediction]:
    check_compatible(model, table)
    scores = model.predict_proba(table.X)
    return [
        Prediction(p, c, int(k), float(s), int(y))
        for p, c, k, s, y in zip(table.prefix_ids, table.case_ids, table.lengths, scores, table.labels)
    ]


def predict_logreg(model: LogRegModel, table: FeatureTable) -> list[Prediction]:
    return predict(model, table)


def predict_rf(model: RandomForestModel, table: FeatureTable) -> list[Prediction]:
    return predict(model, table)


def model_to_json(model: Model) -> str:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "kind": model.kind,
        "hyperparameters": model.hyper,
        "columns": model.columns,
        "spec_fingerprint": model.spec_fingerprint,
        "model": model.to_dict(),
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def serialize_model(model: Model, path: str | Path) -> None:
    Path(path).write_text(model_to_json(model), encoding="utf-8")


def load_model(path: str | Path, table: FeatureTable | None = None) -> Model:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != FORMAT or doc.get("version") != VERSION:
        raise ModelError(f"{path}: not a {FORMAT} v{VERSION} file")
    cls = {"logreg": LogRegModel, "rf": RandomForestModel}.get(doc["kind"])
    if cls is None:
        raise ModelError(f"{path}: unknown model kind {doc['kind']!r}")
    model = cls.from_dict(doc["model"])
    model.hyper = doc["hyperparameters"]
    model.columns = doc["columns"]
    model.spec_fingerprint = doc["spec_fingerprint"]
    if table is not None:
        check_compatible(model, table)
    return model
