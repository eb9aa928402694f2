"""Random forest of Gini CART classifiers, used as an in-repo black box."""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError
from .predictor import as_batch

FORMAT_VERSION = 1
_TIE = 1e-12


@dataclass(frozen=True, eq=False)
class ClassificationTree:
    """Flat array tree. ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, num_classes) training class counts

    @property
    def depth(self):
        depth = np.zeros(len(self.feature), dtype=int)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X):
        """Index of the leaf reached by each row of X."""
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                return node
            go_left = X[rows, np.where(inner, feat, 0)] <= self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)

    def predict_proba(self, X):
        counts = self.counts[self.apply(X)].astype(np.float64)
        return counts / counts.sum(axis=1, keepdims=True)

    def to_dict(self):
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "counts": self.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            feature=np.array(doc["feature"], dtype=np.int64),
            threshold=np.array(doc["threshold"], dtype=np.float64),
            left=np.array(doc["left"], dtype=np.int64),
            right=np.array(doc["right"], dtype=np.int64),
            counts=np.array(doc["counts"], dtype=np.int64),
        )


def _best_gini_split(Xn, yn, feats, num_classes):
    """Lowest weighted-Gini split over `feats`; None when nothing improves.

    Candidates are midpoints between consecutive distinct sorted values.
    Ties go to the lowest feature id, then the lowest threshold.
    """
    n = len(yn)
    Xs = Xn[:, feats]
    order = np.argsort(Xs, axis=0, kind="stable")
    sv = np.take_along_axis(Xs, order, axis=0)
    cum = np.cumsum(np.eye(num_classes, dtype=np.int64)[yn[order]], axis=0)  # (n, m, K)
    total = cum[-1, 0]
    left = cum[:-1]
    right = total - left
    n_left = np.arange(1, n)[:, None].astype(np.float64)
    n_right = n - n_left
    impurity = (
        n_left - np.sum(left.astype(np.float64) ** 2, axis=2) / n_left
        + n_right - np.sum(right.astype(np.float64) ** 2, axis=2) / n_right
    )
    impurity[sv[:-1] >= sv[1:]] = np.inf
    parent = n - np.sum(total.astype(np.float64) ** 2) / n
    flat = impurity.T.ravel()  # feature-major, thresholds ascending within a feature
    best = flat.min()
    if not np.isfinite(best) or best >= parent - _TIE * n:
        return None
    pick = int(np.flatnonzero(flat <= best + _TIE * max(1.0, abs(best)))[0])
    j, i = divmod(pick, n - 1)
    return int(feats[j]), float((sv[i, j] + sv[i + 1, j]) / 2.0)


def build_classification_tree(X, y, num_classes, max_depth, feature_subsample, rng):
    """Grow one Gini tree depth-first. ``rng=None`` uses every feature at every split."""
    d = X.shape[1]
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(np.bincount(y[idx], minlength=num_classes))
        return len(feature) - 1

    stack = [(np.arange(len(y)), 0, new_node(np.arange(len(y))))]
    while stack:
        idx, depth, node = stack.pop()
        if depth >= max_depth or len(idx) < 2 or np.count_nonzero(counts[node]) < 2:
            continue
        if rng is None or feature_subsample >= d:
            feats = np.arange(d)
        else:
            feats = np.sort(rng.choice(d, size=feature_subsample, replace=False))
        split = _best_gini_split(X[idx], y[idx], feats, num_classes)
        if split is None:
            continue
        f, t = split
        go_left = X[idx, f] <= t
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, t
        left[node], right[node] = new_node(li), new_node(ri)
        # right pushed first so the left subtree is numbered first
        stack.append((ri, depth + 1, right[node]))
        stack.append((li, depth + 1, left[node]))
    return ClassificationTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        counts=np.array(counts, dtype=np.int64),
    )


class RandomForestModel:
    """Soft-voting forest: class probabilities are averaged leaf frequencies."""

    def __init__(self, trees, num_classes, input_shape, params):
        self.trees = list(trees)
        self.num_classes = int(num_classes)
        self.input_shape = tuple(input_shape)
        self.params = dict(params)
        for t in self.trees:
            totals = t.counts.sum(axis=1)
            if np.any(t.counts < 0) or np.any(totals[t.feature < 0] <= 0):
                raise DataError("every leaf must hold nonnegative class counts with positive total")

    @property
    def feature_subsample(self):
        return self.params.get("feature_subsample")

    @property
    def seed(self):
        return self.params.get("seed")

    def _features(self, batch):
        batch = as_batch(batch)
        if batch.shape[1:] != self.input_shape:
            raise DataError(f"model expects images of shape {self.input_shape}, got {batch.shape[1:]}")
        return batch.reshape(len(batch), -1)

    def predict_proba(self, batch):
        X = self._features(batch)
        probs = np.zeros((len(X), self.num_classes))
        for tree in self.trees:
            probs += tree.predict_proba(X)
        return probs / len(self.trees)

    def predict(self, batch):
        return np.argmax(self.predict_proba(batch), axis=1)

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "num_classes": self.num_classes,
            "input_shape": list(self.input_shape),
            "params": self.params,
            "trees": [t.to_dict() for t in self.trees],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), separators=(",", ":"), sort_keys=True)

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format_version") != FORMAT_VERSION:
            raise DataError(f"unsupported model format_version {doc.get('format_version')!r}")
        trees = [ClassificationTree.from_dict(t) for t in doc["trees"]]
        return cls(trees, doc["num_classes"], doc["input_shape"], doc["params"])


def load_model(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a JSON model file ({exc})") from None
    return RandomForestModel.from_dict(doc)


def rf_train(
    images,
    labels,
    trees=50,
    max_depth=12,
    feature_subsample=None,
    seed=0,
    bootstrap=True,
    num_classes=None,
    workers=1,
):
    """Bagged Gini trees with a random feature subset drawn at every split."""
    if len(images) == 0:
        raise DataError("cannot train on an empty dataset")
    batch = as_batch(images)
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (len(batch),):
        raise DataError(f"{len(batch)} images but {y.size} labels")
    if y.min() < 0:
        raise DataError("labels must be nonnegative class ids")
    if num_classes is None:
        num_classes = int(y.max()) + 1
    elif y.max() >= num_classes:
        raise DataError(f"label {int(y.max())} is not below num_classes={num_classes}")
    if trees < 1 or max_depth < 1:
        raise DataError("trees and max_depth must be at least 1")
    X = batch.reshape(len(batch), -1)
    d = X.shape[1]
    if feature_subsample is None:
        feature_subsample = math.ceil(math.sqrt(d))
    feature_subsample = int(min(max(1, feature_subsample), d))

    def grow(t):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(t,))))
        idx = rng.integers(0, len(y), size=len(y)) if bootstrap else np.arange(len(y))
        split_rng = rng if feature_subsample < d else None
        return build_classification_tree(X[idx], y[idx], num_classes, max_depth, feature_subsample, split_rng)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            grown = list(pool.map(grow, range(trees)))
    else:
        grown = [grow(t) for t in range(trees)]
    params = {
        "trees": trees,
        "max_depth": max_depth,
        "feature_subsample": feature_subsample,
        "seed": seed,
        "bootstrap": bootstrap,
    }
    return RandomForestModel(grown, num_classes, batch.shape[1:], params)


def rf_predict_proba(model, batch):
    return model.predict_proba(batch)


def classification_report(y_true, y_pred, num_classes):
    """Per-class precision/recall/F1/support plus support-weighted averages."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    rows = []
    for k in range(num_classes):
        tp = int(np.sum((y_pred == k) & (y_true == k)))
        predicted = int(np.sum(y_pred == k))
        support = int(np.sum(y_true == k))
        precision = tp / predicted if predicted else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        rows.append({"class": k, "precision": precision, "recall": recall, "f1": f1, "support": support})
    total = sum(r["support"] for r in rows)
    weighted = {
        key: sum(r[key] * r["support"] for r in rows) / total for key in ("precision", "recall", "f1")
    }
    weighted["support"] = total
    weighted["accuracy"] = float(np.mean(y_true == y_pred))
    return {"classes": rows, "weighted": weighted}


def format_report(report):
    lines = [f"{'':>14}{'precision':>11}{'recall':>9}{'f1-score':>10}{'support':>9}"]
    for r in report["classes"]:
        lines.append(f"{r['class']:>14}{r['precision']:>11.2f}{r['recall']:>9.2f}{r['f1']:>10.2f}{r['support']:>9}")
    w = report["weighted"]
    lines.append(f"{'weighted avg':>14}{w['precision']:>11.2f}{w['recall']:>9.2f}{w['f1']:>10.2f}{w['support']:>9}")
    return "\n".join(lines)
