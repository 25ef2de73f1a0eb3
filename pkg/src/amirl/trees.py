"""CART-style regression and classification trees.

Plain greedy binary trees used as the nonlinear regression engine inside the
chained-equation imputation.  Splits maximise variance reduction (regression)
or Gini impurity reduction (classification); a split is only accepted when it
improves on the root impurity by at least ``cp`` (rpart-style pre-pruning).
Ties are broken deterministically: lowest variable index, then lowest
threshold, so the fitted tree never depends on row order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit


class TreeError(ValueError):
    pass


@dataclass(frozen=True)
class TreeControls:
    max_depth: int = 10
    min_leaf: int = 5
    cp: float = 0.01  # minimum impurity improvement, relative to the root


@dataclass
class DecisionTree:
    """Array-encoded binary tree.

    For internal node k: feature[k] >= 0, rows with x[:, feature[k]] <=
    threshold[k] go to left[k], the rest to right[k].  For leaves
    feature[k] == -1 and value[k] is the prediction (leaf mean for
    regression, class-1 proportion for classification).
    """

    feature: np.ndarray  # (n_nodes,) int, -1 for leaves
    threshold: np.ndarray  # (n_nodes,) float
    left: np.ndarray  # (n_nodes,) int
    right: np.ndarray  # (n_nodes,) int
    value: np.ndarray  # (n_nodes,) float
    controls: TreeControls

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def leaf_ids(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Node index of the leaf each row lands in."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not np.isfinite(X).all():
            raise TreeError("non-finite attribute value")
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                return node
            rows = np.flatnonzero(active)
            f = feat[rows]
            go_left = X[rows, f] <= self.threshold[node[rows]]
            node[rows[go_left]] = self.left[node[rows[go_left]]]
            node[rows[~go_left]] = self.right[node[rows[~go_left]]]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def with_leaf_values(self, leaf_values: dict) -> "DecisionTree":
        """Copy of the tree with selected leaf predictions replaced."""
        value = self.value.copy()
        for node_id, v in leaf_values.items():
            if self.feature[node_id] >= 0:
                raise TreeError(f"node {node_id} is not a leaf")
            value[node_id] = v
        return DecisionTree(self.feature, self.threshold, self.left, self.right,
                            value, self.controls)


@njit(cache=True)
def _scan_node(Xsub, ysub, min_leaf):  # pragma: no cover
    """Best (feature, threshold, gain) over all admissible splits of one node.

    Impurity is the sum of squared deviations from the node mean; for 0/1
    responses this is n * gini / 2, so the same scan serves both tree kinds.
    Every running sum is taken in a canonical (x, then y) order, so the
    result is bit-identical under any row permutation of the input.  Ties
    resolve to the lowest feature index, then the lowest threshold.
    """
    n, p = Xsub.shape
    ysort = np.sort(ysub)
    mean = 0.0
    for i in range(n):
        mean += ysort[i]
    mean /= n
    node_sse = 0.0
    for i in range(n):
        d = ysort[i] - mean
        node_sse += d * d

    best_gain = 0.0
    best_j = -1
    best_thr = 0.0
    xs = np.empty(n)
    ys = np.empty(n)
    for j in range(p):
        order = np.argsort(Xsub[:, j])
        for i in range(n):
            xs[i] = Xsub[order[i], j]
            ys[i] = ysub[order[i]]
        # canonicalise tie groups: sort the responses within equal-x runs
        start = 0
        for i in range(1, n + 1):
            if i == n or xs[i] != xs[start]:
                if i - start > 1:
                    ys[start:i].sort()
                start = i
        total = 0.0
        total2 = 0.0
        for i in range(n):
            total += ys[i]
            total2 += ys[i] * ys[i]
        csum = 0.0
        csum2 = 0.0
        for i in range(n - 1):
            v = ys[i]
            csum += v
            csum2 += v * v
            if xs[i] == xs[i + 1]:
                continue
            nl = i + 1
            nr = n - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            sse_left = csum2 - csum * csum / nl
            sr = total - csum
            sse_right = (total2 - csum2) - sr * sr / nr
            gain = node_sse - sse_left - sse_right
            if gain > best_gain:
                best_gain = gain
                best_j = j
                best_thr = 0.5 * (xs[i] + xs[i + 1])
    return best_j, best_thr, best_gain


def _grow(X, y, controls, min_improvement):
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        value.append(np.nan)
        return len(feature) - 1

    stack = [(new_node(), np.arange(X.shape[0]), 0)]
    while stack:
        node, rows, depth = stack.pop()
        ysub = y[rows]
        value[node] = float(np.sort(ysub).mean())  # order-canonical mean
        if depth >= controls.max_depth or rows.size < 2 * controls.min_leaf:
            continue
        if ysub.min() == ysub.max():  # exactly constant: never split on fp dust
            continue
        j, thr, gain = _scan_node(np.ascontiguousarray(X[rows]), ysub,
                                  controls.min_leaf)
        if j < 0 or gain < min_improvement:
            continue
        go_left = X[rows, j] <= thr
        feature[node] = j
        threshold[node] = thr
        left[node] = new_node()
        right[node] = new_node()
        # push right first so the left child is processed (and numbered) next
        stack.append((right[node], rows[~go_left], depth + 1))
        stack.append((left[node], rows[go_left], depth + 1))

    return DecisionTree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=float),
        controls,
    )


def fit_regression_tree(X: np.ndarray, y: np.ndarray,
                        controls: TreeControls = TreeControls()) -> DecisionTree:
    """Greedy variance-reduction regression tree.

    Deterministic given the data: among equal-gain splits the lowest variable
    index wins, then the lowest threshold.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] == 0:
        raise TreeError("empty input")
    if X.shape[0] != y.shape[0]:
        raise TreeError("X and y disagree on the number of rows")
    root_sse = float(((y - y.mean()) ** 2).sum())
    return _grow(X, y, controls, controls.cp * root_sse)


def fit_classification_tree(X: np.ndarray, y: np.ndarray,
                            controls: TreeControls = TreeControls()) -> DecisionTree:
    """Gini-impurity classification tree for a 0/1 response.

    Leaves store the class-1 proportion; see ``predict_class``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] == 0:
        raise TreeError("empty input")
    if not np.isin(y, (0.0, 1.0)).all():
        raise TreeError("classification tree needs a binary 0/1 response")
    # sum of squared deviations of a 0/1 vector is n*p*(1-p): half the Gini
    # impurity times n, so variance-reduction splits are Gini splits.
    root_sse = float(((y - y.mean()) ** 2).sum())
    return _grow(X, y, controls, controls.cp * root_sse)


def predict_class(tree: DecisionTree, X: np.ndarray) -> np.ndarray:
    """Class-1 proportion of the leaf each row lands in (in [0, 1])."""
    return tree.predict(X)


def predict_label(tree: DecisionTree, X: np.ndarray) -> np.ndarray:
    """Hard 0/1 label: proportion >= 0.5 maps to 1."""
    return (tree.predict(X) >= 0.5).astype(float)
