# Weighted CART regression tree used as the boosting base learner
# contributors: smlee

# History
# 2025-02-10 | v1.0 - first commit

# Module import
from typing import Any, Dict, List, Optional, Tuple
import numpy as np

# tolerance on split gain, relative to the weighted sum of squared targets
_GAIN_RTOL = 1e-12

# Main
class RegressionTree:
    """Flat array tree; ``feature[i] == -1`` marks a leaf

    Args:
        feature: split feature per node, -1 for leaves
        threshold: split threshold per node; ``x <= threshold`` goes left
        left: left child index per node, -1 for leaves
        right: right child index per node, -1 for leaves
        value: leaf value per node (0 for internal nodes)
        max_depth: depth limit the tree was grown with
    """

    def __init__(self,
                 feature:np.ndarray,
                 threshold:np.ndarray,
                 left:np.ndarray,
                 right:np.ndarray,
                 value:np.ndarray,
                 max_depth:int):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)
        self.max_depth = int(max_depth)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def apply(self, X:np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of X
        """
        X = np.asarray(X, dtype=float)
        n = X.shape[0]
        rows = np.arange(n)
        idx = np.zeros(n, dtype=np.int64)
        for _ in range(self.n_nodes):
            feat = self.feature[idx]
            internal = feat >= 0
            if not internal.any():
                break
            go_left = X[rows, np.where(internal, feat, 0)] <= self.threshold[idx]
            idx = np.where(internal, np.where(go_left, self.left[idx], self.right[idx]), idx)
        return idx

    def predict(self, X:np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_nodes(self) -> List[Dict[str, Any]]:
        nodes = list()
        for i in range(self.n_nodes):
            if self.feature[i] < 0:
                nodes.append({"leaf_value": float(self.value[i])})
            else:
                nodes.append({"feature": int(self.feature[i]),
                              "threshold": float(self.threshold[i]),
                              "left": int(self.left[i]),
                              "right": int(self.right[i])})
        return nodes

    @classmethod
    def from_nodes(cls, nodes:List[Dict[str, Any]], max_depth:int) -> "RegressionTree":
        feature, threshold, left, right, value = [], [], [], [], []
        for node in nodes:
            if "leaf_value" in node:
                feature.append(-1); threshold.append(0.0); left.append(-1); right.append(-1)
                value.append(float(node["leaf_value"]))
            else:
                feature.append(int(node["feature"])); threshold.append(float(node["threshold"]))
                left.append(int(node["left"])); right.append(int(node["right"])); value.append(0.0)
        return cls(feature, threshold, left, right, value, max_depth)


def _best_split(X:np.ndarray,
                r:np.ndarray,
                w:np.ndarray,
                min_leaf_weight:float) -> Optional[Tuple[int, float]]:
    """Exact search; ties go to the lowest feature index, then the lowest threshold
    """
    W = w.sum()
    S = np.dot(w, r)
    tol = _GAIN_RTOL * np.dot(w, r * r)
    parent = S * S / W
    best_gain = tol
    best = None
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        cw = np.cumsum(w[order])
        cs = np.cumsum(w[order] * r[order])
        cut = np.nonzero(xs[:-1] < xs[1:])[0]
        if cut.size == 0:
            continue
        WL = cw[cut]
        SL = cs[cut]
        WR = W - WL
        SR = S - SL
        ok = (WL >= min_leaf_weight) & (WR >= min_leaf_weight) & (WL > 0) & (WR > 0)
        if not ok.any():
            continue
        gain = np.full(cut.size, -np.inf)
        gain[ok] = SL[ok] ** 2 / WL[ok] + SR[ok] ** 2 / WR[ok] - parent
        k = int(np.argmax(gain))
        if gain[k] > best_gain:
            lo, hi = xs[cut[k]], xs[cut[k] + 1]
            threshold = lo + (hi - lo) / 2.0
            if not threshold < hi:
                threshold = lo
            best_gain = gain[k]
            best = (j, float(threshold))
    return best


def grow_tree(X:np.ndarray,
              r:np.ndarray,
              w:np.ndarray,
              *,
              max_depth:int,
              min_leaf_weight:float) -> RegressionTree:
    """Grow a weighted least-squares tree on targets r

    Rows with zero weight must already be removed. ``min_leaf_weight`` is in raw weight units;
    boosting passes leaf_floor.
    """
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node() -> int:
        feature.append(-1); threshold.append(0.0); left.append(-1); right.append(-1); value.append(0.0)
        return len(feature) - 1

    def build(index:np.ndarray, depth:int) -> int:
        node = new_node()
        wi = w[index]
        ri = r[index]
        split = None
        if depth < max_depth and index.size >= 2 and wi.sum() >= 2 * min_leaf_weight:
            split = _best_split(X[index], ri, wi, min_leaf_weight)
        if split is None:
            value[node] = float(np.dot(wi, ri) / wi.sum())
            return node
        j, t = split
        go_left = X[index, j] <= t
        feature[node] = j
        threshold[node] = t
        left[node] = build(index[go_left], depth + 1)
        right[node] = build(index[~go_left], depth + 1)
        return node

    build(np.arange(X.shape[0]), 0)
    return RegressionTree(feature, threshold, left, right, value, max_depth)
