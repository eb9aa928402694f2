import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import descend, greedy_cart, same_tree, sse, tree_to_tuple
from tlime.errors import DataError, SingularSystemError
from tlime.surrogate import (
    Leaf,
    LinearSurrogate,
    Split,
    SurrogateTree,
    best_split,
    fit_linear_arrays,
    fit_tree_arrays,
    normalized_weights,
    predict_linear,
    predict_tree,
    tree_sse,
    weighted_variance,
)


def random_problem(rng, n, d):
    Z = rng.integers(0, 2, size=(n, d))
    y = rng.random(n)
    w = rng.random(n) + 0.05
    return Z, y, w


def test_weighted_variance_examples():
    assert weighted_variance([0.3, 0.3, 0.3], [1, 2, 3]) == 0
    assert weighted_variance([0, 1], [1, 1]) == pytest.approx(0.25, abs=1e-15)
    assert weighted_variance([0, 1], [3, 1]) == pytest.approx(0.1875, abs=1e-15)
    with pytest.raises(DataError):
        weighted_variance([1.0], [0.0])


def test_best_split_forced_feature(rng):
    Z = rng.integers(0, 2, size=(40, 5))
    Z[:2, 2] = [0, 1]
    y = Z[:, 2].astype(float)
    feature, gain = best_split(Z, y, np.ones(40))
    assert feature == 2
    assert gain == pytest.approx(sse(y.tolist(), [1.0] * 40)[0])


def test_best_split_constant_targets_is_none(rng):
    Z = rng.integers(0, 2, size=(10, 4))
    assert best_split(Z, np.full(10, 0.4), np.ones(10)) is None


def test_best_split_matches_exhaustive_oracle(rng):
    Z, y, w = random_problem(rng, 20, 6)
    feature, gain = best_split(Z, y, w)
    node = sse(y.tolist(), w.tolist())[0]
    gains = {}
    for k in range(6):
        left = [i for i in range(20) if Z[i, k] == 0]
        right = [i for i in range(20) if Z[i, k] == 1]
        if left and right:
            gains[k] = node - (sse([y[i] for i in left], [w[i] for i in left])[0]
                               + sse([y[i] for i in right], [w[i] for i in right])[0])
    best = max(gains, key=lambda k: (gains[k], -k))
    assert feature == best
    assert gain == pytest.approx(gains[best], rel=1e-12)


def test_best_split_respects_allowed_and_min_weight():
    Z = np.array([[0, 0], [0, 1], [1, 1], [1, 0]])
    y = np.array([0.0, 0.1, 1.0, 0.9])
    assert best_split(Z, y, np.ones(4))[0] == 0
    assert best_split(Z, y, np.ones(4), allowed_features=[1])[0] == 1
    assert best_split(Z, y, np.ones(4), min_leaf_weight=3) is None


def test_best_split_ties_go_to_lowest_feature():
    Z = np.array([[1, 1, 0], [0, 0, 1], [1, 1, 0], [0, 0, 1]])
    y = np.array([1.0, 0.0, 1.0, 0.0])
    assert best_split(Z, y, np.ones(4))[0] == 0


def test_fit_constant_targets_single_leaf(rng):
    Z = rng.integers(0, 2, size=(30, 5))
    tree = fit_tree_arrays(Z, np.full(30, 0.8), rng.random(30) + 0.1, max_depth=4)
    assert isinstance(tree.root, Leaf) and tree.depth == 0
    assert tree.predict(np.ones(5)) == pytest.approx(0.8)
    assert np.all(tree.feature_importances == 0)


def test_fit_depth_one_on_single_bit(rng):
    Z = rng.integers(0, 2, size=(50, 6))
    Z[:2, 3] = [0, 1]
    tree = fit_tree_arrays(Z, Z[:, 3].astype(float), np.ones(50), max_depth=1)
    assert isinstance(tree.root, Split) and tree.root.feature == 3
    assert tree.feature_importances.tolist() == [0, 0, 0, 1, 0, 0]


def test_fit_matches_brute_force_oracle_sample(rng):
    for _ in range(25):
        n, d, depth = int(rng.integers(2, 31)), int(rng.integers(1, 9)), int(rng.integers(1, 3))
        Z, y, w = random_problem(rng, n, d)
        ours = tree_to_tuple(fit_tree_arrays(Z, y, w, depth).root)
        ref = greedy_cart(Z.tolist(), y.tolist(), w.tolist(), depth)
        assert same_tree(ours, ref, 1e-9)


def test_predict_single_leaf():
    tree = SurrogateTree(Leaf(0.7, 1.0, 3), 4, 1)
    assert predict_tree(tree, [0, 1, 0, 1]) == 0.7
    with pytest.raises(DataError):
        predict_tree(tree, [0, 1])


def test_predict_figure_style_tree():
    # splits on 28, then 22, then 30; all present reaches the 0.991 leaf
    deep = Split(30, Leaf(0.62, 1, 1), Leaf(0.991, 1, 1), 0.1, 0.8, 2, 2)
    mid = Split(22, Leaf(0.4, 1, 1), deep, 0.2, 0.7, 3, 3)
    root = Split(28, Leaf(0.05, 1, 1), mid, 0.9, 0.5, 4, 4)
    tree = SurrogateTree(root, 31, 3)
    bits = np.zeros(31, dtype=int)
    bits[[22, 28, 30]] = 1
    assert predict_tree(tree, bits) == 0.991
    assert tree.path(bits) == [(28, True), (22, True), (30, True)]
    assert tree.depth == 3


def test_predict_matches_recursive_oracle(rng):
    for _ in range(20):
        Z, y, w = random_problem(rng, 60, 7)
        tree = fit_tree_arrays(Z, y, w, 4)
        ref = tree_to_tuple(tree.root)
        for bits in rng.integers(0, 2, size=(20, 7)):
            assert predict_tree(tree, bits) == descend(ref, bits.tolist())


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 40), st.integers(1, 8), st.integers(1, 4))
def test_tree_invariants(seed, n, d, depth):
    rng = np.random.default_rng(seed)
    Z, y, w = random_problem(rng, n, d)
    tree = fit_tree_arrays(Z, y, w, depth)
    assert tree.depth <= depth
    # leaf values are weighted means of the rows routed there
    routed = {}
    for i, bits in enumerate(Z):
        node = tree.root
        while isinstance(node, Split):
            node = node.right if bits[node.feature] else node.left
        routed.setdefault(id(node), (node, []))[1].append(i)
    for node, rows in routed.values():
        assert node.value == pytest.approx(np.average(y[rows], weights=w[rows]), abs=1e-9)
        assert node.n_samples == len(rows)
    # every split strictly reduces SSE
    stack = [tree.root]
    while stack:
        node = stack.pop()
        if isinstance(node, Split):
            assert node.gain > 0
            stack += [node.left, node.right]
    imp = tree.feature_importances
    assert np.all(imp >= 0)
    used = set(tree.split_features())
    assert all(imp[k] == 0 for k in range(d) if k not in used)
    if tree.depth >= 1:
        assert imp.sum() == pytest.approx(1.0, abs=1e-9)
    else:
        assert imp.sum() == 0
    # SSE never increases with depth
    errors = [tree_sse(fit_tree_arrays(Z, y, w, k), Z, y, w) for k in range(1, depth + 1)]
    assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_weight_rescaling_invariance(seed, c):
    rng = np.random.default_rng(seed)
    Z, y, w = random_problem(rng, 40, 6)
    a = fit_tree_arrays(Z, y, w, 3)
    b = fit_tree_arrays(Z, y, w * c, 3)
    assert same_tree(tree_to_tuple(a.root), tree_to_tuple(b.root), 1e-9)
    assert np.allclose(a.feature_importances, b.feature_importances, atol=1e-9)
    la = fit_linear_arrays(Z, y, w, 0.01)
    lb = fit_linear_arrays(Z, y, w * c, 0.01)
    assert la.intercept == pytest.approx(lb.intercept, abs=1e-9)
    assert np.allclose(la.coefficients, lb.coefficients, atol=1e-9)


def test_tree_serialization(rng):
    Z, y, w = random_problem(rng, 50, 5)
    tree = fit_tree_arrays(Z, y, w, 3)
    back = SurrogateTree.from_dict(tree.to_dict())
    assert tree_to_tuple(back.root) == tree_to_tuple(tree.root)
    assert np.array_equal(back.feature_importances, tree.feature_importances)
    dot = tree.to_dot(comment="manifest: run.json")
    assert dot.startswith("// manifest: run.json\ndigraph Tree {")
    assert f"feature {tree.root.feature} ≤ 0.5" in dot
    assert dot.count("->") == 2 * sum(isinstance(n, Split) for n in _nodes(tree.root))


def _nodes(node):
    yield node
    if isinstance(node, Split):
        yield from _nodes(node.left)
        yield from _nodes(node.right)


def objective_gradient(model, Z, y, w):
    """Gradient of sum w~ (y - b0 - Zb)^2 + lambda |b|^2, written out directly."""
    wn = normalized_weights(w)
    resid = y - model.intercept - Z @ model.coefficients
    g0 = -2 * np.sum(wn * resid)
    g = -2 * (Z * (wn * resid)[:, None]).sum(axis=0) + 2 * model.ridge_lambda * model.coefficients
    return np.r_[g0, g]


def test_linear_exact_recovery(rng):
    Z = rng.integers(0, 2, size=(200, 5)).astype(float)
    y = 0.2 + 0.5 * Z[:, 1]
    m = fit_linear_arrays(Z, y, rng.random(200) + 0.1, ridge_lambda=0.0)
    assert m.intercept == pytest.approx(0.2, abs=1e-8)
    assert np.allclose(m.coefficients, [0, 0.5, 0, 0, 0], atol=1e-8)


def test_linear_zero_targets(rng):
    Z = rng.integers(0, 2, size=(30, 4))
    m = fit_linear_arrays(Z, np.zeros(30), np.ones(30), ridge_lambda=0.1)
    assert m.intercept == 0 and np.all(m.coefficients == 0)


def test_linear_gradient_vanishes(rng):
    Z = rng.integers(0, 2, size=(200, 10)).astype(float)
    y, w = rng.random(200), rng.random(200) + 0.01
    m = fit_linear_arrays(Z, y, w, ridge_lambda=0.01)
    assert np.linalg.norm(objective_gradient(m, Z, y, w)) < 1e-8


def test_linear_gradient_finite_differences(rng):
    Z = rng.integers(0, 2, size=(80, 4)).astype(float)
    y, w = rng.random(80), rng.random(80) + 0.01
    m = fit_linear_arrays(Z, y, w, ridge_lambda=0.05)
    wn = normalized_weights(w)

    def loss(beta):
        r = y - beta[0] - Z @ beta[1:]
        return np.sum(wn * r * r) + 0.05 * np.sum(beta[1:] ** 2)

    beta = np.r_[m.intercept, m.coefficients]
    h = 1e-6
    fd = [(loss(beta + h * e) - loss(beta - h * e)) / (2 * h) for e in np.eye(5)]
    assert np.max(np.abs(fd)) < 1e-6


def test_linear_singular_without_ridge():
    Z = np.array([[1, 1], [0, 0], [1, 1], [0, 0]])
    with pytest.raises(SingularSystemError, match="ridge_lambda"):
        fit_linear_arrays(Z, np.array([1.0, 0, 1, 0]), np.ones(4), ridge_lambda=0.0)
    fit_linear_arrays(Z, np.array([1.0, 0, 1, 0]), np.ones(4), ridge_lambda=0.01)


def test_predict_linear(rng):
    m = LinearSurrogate(0.3, np.zeros(4), 0.0)
    assert predict_linear(m, [1, 0, 1, 1]) == 0.3
    m = LinearSurrogate(0.1, np.array([0.2, -0.4, 0.3]), 0.0)
    assert predict_linear(m, [0, 1, 0]) == pytest.approx(0.1 - 0.4)
    for _ in range(10):
        coef = rng.normal(size=6)
        bits = rng.integers(0, 2, size=6)
        m = LinearSurrogate(0.5, coef, 0.0)
        assert predict_linear(m, bits) == pytest.approx(0.5 + sum(c * b for c, b in zip(coef, bits)), abs=1e-12)
    with pytest.raises(DataError):
        predict_linear(m, [1, 0])
