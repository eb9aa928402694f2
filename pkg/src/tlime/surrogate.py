"""Interpretable surrogates fitted on a perturbation database.

Trees are weighted CART regression trees over binary features: each
feature offers a single split, absent (bit 0, left) against present
(bit 1, right). Splits maximize the drop in weighted squared error.
"""

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DataError, SingularSystemError

GAIN_EPSILON = 1e-12
MIN_LEAF_FRACTION = 1e-6
# gains closer than this fraction of the node's SSE count as tied
TIE_RTOL = 1e-10


def weighted_variance(targets, weights):
    y = np.asarray(targets, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if y.shape != w.shape or y.size == 0:
        raise DataError("targets and weights need equal, nonzero length")
    total = w.sum()
    if not total > 0:
        raise DataError("total weight must be positive")
    mean = np.dot(w, y) / total
    return float(np.dot(w, (y - mean) ** 2) / total)


def _sse(y, w):
    """Weighted SSE and mean, two-pass."""
    total = w.sum()
    mean = np.dot(w, y) / total
    return float(np.dot(w, (y - mean) ** 2)), float(mean), float(total)


def split_gains(zprimes, targets, weights):
    """Gain of splitting on every feature, plus the child weight totals.

    Returns (gains, left_weight, right_weight, node_sse) with the gain
    defined as SSE(node) - (SSE(left) + SSE(right)).
    """
    Z = np.asarray(zprimes, dtype=bool)
    y = np.asarray(targets, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    node_sse, _, _ = _sse(y, w)
    child_sse = []
    child_weight = []
    for side in (~Z, Z):
        wk = w[:, None] * side
        wt = wk.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = (wk * y[:, None]).sum(axis=0) / wt
        resid = y[:, None] - np.where(wt > 0, mean, 0.0)[None, :]
        child_sse.append((wk * resid**2).sum(axis=0))
        child_weight.append(wt)
    gains = node_sse - (child_sse[0] + child_sse[1])
    return gains, child_weight[0], child_weight[1], node_sse


def best_split(zprimes, targets, weights, allowed_features=None,
               min_leaf_weight=0.0, gain_epsilon=GAIN_EPSILON):
    """(feature, gain) of the best split, or None.

    Candidates whose children would weigh less than ``min_leaf_weight``
    (or be empty) are skipped; the winner must gain more than
    ``gain_epsilon``. Near-equal gains resolve to the lowest feature id.
    """
    Z = np.asarray(zprimes, dtype=bool)
    if Z.shape[0] == 0:
        raise DataError("cannot split an empty node")
    gains, wl, wr, node_sse = split_gains(Z, targets, weights)
    counts_r = Z.sum(axis=0)
    valid = (counts_r > 0) & (counts_r < Z.shape[0]) & (wl >= min_leaf_weight) & (wr >= min_leaf_weight)
    valid &= (wl > 0) & (wr > 0)
    if allowed_features is not None:
        allowed = np.zeros(Z.shape[1], dtype=bool)
        allowed[list(allowed_features)] = True
        valid &= allowed
    if not valid.any():
        return None
    gains = np.where(valid, gains, -np.inf)
    top = gains.max()
    if not top > gain_epsilon:
        return None
    feature = int(np.flatnonzero(gains >= top - TIE_RTOL * node_sse)[0])
    return feature, float(gains[feature])


@dataclass(frozen=True)
class Leaf:
    value: float
    weight_sum: float
    n_samples: int


@dataclass(frozen=True)
class Split:
    feature: int
    left: object  # subtree for bit 0 (segment absent)
    right: object  # subtree for bit 1 (segment present)
    gain: float
    value: float
    weight_sum: float
    n_samples: int


def _node_to_dict(node):
    if isinstance(node, Leaf):
        return {"value": node.value, "weight_sum": node.weight_sum, "n_samples": node.n_samples}
    return {
        "feature": node.feature,
        "gain": node.gain,
        "value": node.value,
        "weight_sum": node.weight_sum,
        "n_samples": node.n_samples,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(doc):
    if "feature" not in doc:
        return Leaf(doc["value"], doc["weight_sum"], doc["n_samples"])
    return Split(
        doc["feature"], _node_from_dict(doc["left"]), _node_from_dict(doc["right"]),
        doc["gain"], doc["value"], doc["weight_sum"], doc["n_samples"],
    )


class SurrogateTree:
    def __init__(self, root, num_features, max_depth):
        self.root = root
        self.num_features = int(num_features)
        self.max_depth = int(max_depth)
        importances = np.zeros(self.num_features)
        depth = 0
        stack = [(root, 0)]
        while stack:
            node, level = stack.pop()
            depth = max(depth, level)
            if isinstance(node, Split):
                importances[node.feature] += node.gain
                stack.append((node.left, level + 1))
                stack.append((node.right, level + 1))
        total = importances.sum()
        self.feature_importances = importances / total if total > 0 else importances
        self.depth = depth

    def _check(self, bits):
        bits = np.asarray(bits)
        if bits.shape[-1] != self.num_features:
            raise DataError(f"tree expects {self.num_features} bits, got {bits.shape[-1]}")
        return bits

    def predict(self, zprime):
        bits = self._check(zprime)
        node = self.root
        while isinstance(node, Split):
            node = node.right if bits[node.feature] else node.left
        return node.value

    def predict_batch(self, zprimes):
        Z = self._check(np.atleast_2d(zprimes))
        return np.array([self.predict(z) for z in Z])

    def path(self, zprime):
        """Features tested on the way to the leaf, with the branch taken."""
        bits = self._check(zprime)
        node, steps = self.root, []
        while isinstance(node, Split):
            present = bool(bits[node.feature])
            steps.append((node.feature, present))
            node = node.right if present else node.left
        return steps

    def split_features(self):
        """Features used by splits in pre-order, each listed once."""
        seen = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, Split):
                if node.feature not in seen:
                    seen.append(node.feature)
                stack.append(node.right)
                stack.append(node.left)
        return seen

    def leaves(self):
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, Split):
                stack.extend((node.right, node.left))
            else:
                out.append(node)
        return out

    def to_dict(self):
        return {
            "num_features": self.num_features,
            "max_depth": self.max_depth,
            "depth": self.depth,
            "feature_importances": self.feature_importances.tolist(),
            "root": _node_to_dict(self.root),
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(_node_from_dict(doc["root"]), doc["num_features"], doc["max_depth"])

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)

    def to_dot(self, comment=None, precision=4):
        lines = []
        if comment:
            lines += [f"// {line}" for line in comment.splitlines()]
        lines += ["digraph Tree {", 'node [shape=box, style="rounded", fontname="helvetica"] ;',
                  'edge [fontname="helvetica"] ;']
        counter = [0]

        def emit(node):
            nid = counter[0]
            counter[0] += 1
            stats = (f"weight_sum = {node.weight_sum:.{precision}f}\\n"
                     f"samples = {node.n_samples}\\nvalue = {node.value:.{precision}f}")
            if isinstance(node, Split):
                lines.append(f'{nid} [label="feature {node.feature} ≤ 0.5\\n{stats}"] ;')
                left = emit(node.left)
                lines.append(f'{nid} -> {left} [headlabel="True", labeldistance=2.5, labelangle=45] ;')
                right = emit(node.right)
                lines.append(f'{nid} -> {right} [headlabel="False", labeldistance=2.5, labelangle=-45] ;')
            else:
                lines.append(f'{nid} [label="{stats}"] ;')
            return nid

        emit(self.root)
        lines.append("}")
        return "\n".join(lines) + "\n"


def _targets(pset):
    return (np.asarray(pset.zprimes, dtype=bool), np.asarray(pset.fz, dtype=np.float64),
            np.asarray(pset.weights, dtype=np.float64))


def fit_tree_arrays(zprimes, targets, weights, max_depth, min_leaf_weight=None,
                    gain_epsilon=GAIN_EPSILON):
    """Greedy weighted CART on raw arrays; see :func:`fit_tree`."""
    Z = np.asarray(zprimes, dtype=bool)
    y = np.asarray(targets, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] == 0:
        raise DataError("need a nonempty (n, d') bit matrix")
    if max_depth < 1:
        raise DataError("max_depth must be at least 1")
    total = w.sum()
    if not total > 0:
        raise DataError("total weight must be positive")
    if min_leaf_weight is None:
        min_leaf_weight = MIN_LEAF_FRACTION * total
    eps = gain_epsilon * total

    def grow(idx, depth):
        _, mean, wsum = _sse(y[idx], w[idx])
        if depth < max_depth:
            split = best_split(Z[idx], y[idx], w[idx], None, min_leaf_weight, eps)
            if split is not None:
                feature, gain = split
                present = Z[idx, feature]
                return Split(feature, grow(idx[~present], depth + 1), grow(idx[present], depth + 1),
                             gain, mean, wsum, len(idx))
        return Leaf(mean, wsum, len(idx))

    return SurrogateTree(grow(np.arange(len(y)), 0), Z.shape[1], max_depth)


def fit_tree(pset, max_depth, min_leaf_weight=None, gain_epsilon=GAIN_EPSILON):
    """Fit a weighted regression tree of depth at most ``max_depth``.

    ``min_leaf_weight`` defaults to 1e-6 of the total weight and
    ``gain_epsilon`` is per unit of total weight, so rescaling all weights
    leaves the fitted tree unchanged.
    """
    return fit_tree_arrays(*_targets(pset), max_depth, min_leaf_weight, gain_epsilon)


def predict_tree(tree, zprime):
    return tree.predict(zprime)


def tree_sse(tree, zprimes, targets, weights):
    """Weighted squared error of the tree on a dataset."""
    pred = tree.predict_batch(np.asarray(zprimes))
    w = np.asarray(weights, dtype=np.float64)
    return float(np.dot(w, (np.asarray(targets) - pred) ** 2))


@dataclass(frozen=True, eq=False)
class LinearSurrogate:
    intercept: float
    coefficients: np.ndarray
    ridge_lambda: float

    def predict(self, zprime):
        bits = np.asarray(zprime, dtype=np.float64)
        if bits.shape[-1] != len(self.coefficients):
            raise DataError(f"model expects {len(self.coefficients)} bits, got {bits.shape[-1]}")
        return bits @ self.coefficients + self.intercept

    def to_dict(self):
        return {
            "intercept": self.intercept,
            "coefficients": np.asarray(self.coefficients).tolist(),
            "ridge_lambda": self.ridge_lambda,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["intercept"], np.array(doc["coefficients"], dtype=np.float64), doc["ridge_lambda"])


def normalized_weights(weights):
    """Weights rescaled to mean 1, which keeps ridge_lambda's strength independent of the kernel's scale."""
    w = np.asarray(weights, dtype=np.float64)
    return w * (len(w) / w.sum())


def fit_linear_arrays(zprimes, targets, weights, ridge_lambda=0.01):
    """Weighted ridge regression with an unpenalized intercept.

    Minimizes sum_i w_i (y_i - b0 - b.z_i)^2 + lambda |b|^2 with the
    weights rescaled to mean 1, via a Cholesky solve of the normal
    equations.
    """
    Z = np.asarray(zprimes, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] == 0:
        raise DataError("need a nonempty (n, d') bit matrix")
    if ridge_lambda < 0:
        raise DataError("ridge_lambda must be nonnegative")
    w = normalized_weights(weights)
    X = np.hstack([np.ones((len(Z), 1)), Z])
    Xw = X * w[:, None]
    A = X.T @ Xw
    A[np.diag_indices_from(A)] += ridge_lambda * np.r_[0.0, np.ones(Z.shape[1])]
    b = Xw.T @ y
    hint = " (set ridge_lambda > 0)" if ridge_lambda == 0 else ""
    if ridge_lambda == 0 and np.linalg.matrix_rank(X * np.sqrt(w)[:, None]) < X.shape[1]:
        raise SingularSystemError(f"normal equations are singular: features are collinear{hint}")
    try:
        beta = scipy.linalg.cho_solve(scipy.linalg.cho_factor(A), b)
    except np.linalg.LinAlgError:
        raise SingularSystemError(f"normal equations are not positive definite{hint}") from None
    return LinearSurrogate(float(beta[0]), beta[1:], float(ridge_lambda))


def fit_linear(pset, ridge_lambda=0.01):
    Z, y, w = _targets(pset)
    return fit_linear_arrays(Z, y, w, ridge_lambda)


def predict_linear(model, zprime):
    return float(model.predict(zprime))
