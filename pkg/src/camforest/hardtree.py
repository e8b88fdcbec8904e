"""CART decision trees with cost-complexity pruning, plus bagged forests.

These are the hard baselines whose structure seeds the soft models, so
determinism is part of the contract: split candidates are midpoints of sorted
unique feature values, equal-gain ties go to the lowest feature index then the
lowest threshold, and samples exactly at a threshold route right (the soft
sigmoid limit k -> inf then agrees with the hard tree).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datasets import Dataset

# splits must strictly reduce Gini impurity; exact zero-gain splits are noise
MIN_GAIN = 1e-12

LEAF = -1


@dataclass(frozen=True)
class DecisionTree:
    """Flat-array binary tree. feature[i] == LEAF marks node i as a leaf."""
    feature: np.ndarray     # (n_nodes,) int32, LEAF for leaves
    threshold: np.ndarray   # (n_nodes,) float64, NaN for leaves
    left: np.ndarray        # (n_nodes,) int32 child index, LEAF for leaves
    right: np.ndarray       # (n_nodes,) int32
    dist: np.ndarray        # (n_nodes, n_classes) training class distribution
    n_samples: np.ndarray   # (n_nodes,) int64 training samples seen per node
    n_features: int
    max_depth: int

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_classes(self) -> int:
        return self.dist.shape[1]

    @property
    def n_leaves(self) -> int:
        return int((self.feature == LEAF).sum())

    @property
    def root_feature(self) -> int:
        return int(self.feature[0])

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=int)
        out = 0
        for i in range(self.n_nodes):  # parents precede children in the layout
            if self.feature[i] != LEAF:
                depths[self.left[i]] = depths[self.right[i]] = depths[i] + 1
            else:
                out = max(out, int(depths[i]))
        return out


@dataclass(frozen=True)
class RandomForest:
    trees: tuple[DecisionTree, ...]
    vote_mode: str = "majority"

    @property
    def n_classes(self) -> int:
        return self.trees[0].n_classes

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features

    def root_features(self) -> list[int]:
        return [t.root_feature for t in self.trees]


def _best_split(X: np.ndarray, y: np.ndarray, n_classes: int,
                feat_ids: np.ndarray):
    """Exhaustive Gini search over midpoint candidates.

    Returns (gain, feature, threshold) or None. Works per feature chunk so the
    per-class prefix-count tables stay small; all score arithmetic is float64
    with integer-exact inputs, which keeps cross-feature ties bit-reproducible.
    """
    m = X.shape[0]
    counts = np.bincount(y, minlength=n_classes).astype(np.int64)
    parent_sq = float((counts ** 2).sum())
    best_score = -np.inf
    best_feat = -1
    best_thr = 0.0
    nl = np.arange(1, m, dtype=np.float64)      # left sizes at cut positions
    nr = m - nl
    for start in range(0, len(feat_ids), 256):
        chunk = feat_ids[start:start + 256]
        Xc = X[:, chunk]
        order = np.argsort(Xc, axis=0, kind="stable")
        xs = np.take_along_axis(Xc, order, axis=0)
        ys = y[order]
        sl = np.zeros((m - 1, len(chunk)))
        sr = np.zeros_like(sl)
        for c in range(n_classes):
            cum = np.cumsum(ys == c, axis=0, dtype=np.int64)[:-1]
            sl += (cum.astype(np.float64)) ** 2
            sr += (counts[c] - cum).astype(np.float64) ** 2
        score = sl / nl[:, None] + sr / nr[:, None]
        score[xs[1:] == xs[:-1]] = -np.inf
        if not np.isfinite(score).any():
            continue
        flat = np.argmax(score, axis=0)
        for j, f in enumerate(chunk):
            s = score[flat[j], j]
            if s > best_score:    # strict: earlier feature wins ties
                best_score = s
                best_feat = int(f)
                pos = flat[j]
                best_thr = (xs[pos, j] + xs[pos + 1, j]) / 2.0
    if best_feat < 0:
        return None
    gain = best_score / m - parent_sq / (m * m)
    if gain <= MIN_GAIN:
        return None
    return gain, best_feat, best_thr


def _grow(X, y, n_classes, max_depth, rng, n_sub):
    """Depth-first tree growth (left subtree before right).

    n_sub < n_features turns on per-split random feature subsets; the rng is
    consumed in DFS order, which pins forest structure for a given seed.
    """
    n_feat = X.shape[1]
    feature, threshold, left, right, dists, sizes = [], [], [], [], [], []

    def new_node(idx):
        i = len(feature)
        feature.append(LEAF)
        threshold.append(np.nan)
        left.append(LEAF)
        right.append(LEAF)
        c = np.bincount(y[idx], minlength=n_classes)
        dists.append(c / len(idx))
        sizes.append(len(idx))
        return i

    def build(idx, depth):
        node = new_node(idx)
        if depth >= max_depth or len(idx) < 2:
            return node
        labels = y[idx]
        if (labels == labels[0]).all():
            return node
        if n_sub < n_feat:
            feats = np.sort(rng.choice(n_feat, size=n_sub, replace=False))
        else:
            feats = np.arange(n_feat)
        found = _best_split(X[idx], labels, n_classes, feats)
        if found is None:
            return node
        _, f, thr = found
        go_left = X[idx, f] < thr
        feature[node] = f
        threshold[node] = thr
        left[node] = build(idx[go_left], depth + 1)
        right[node] = build(idx[~go_left], depth + 1)
        return node

    import sys
    old = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old, 10 * max_depth + 100))
    try:
        build(np.arange(len(y)), 0)
    finally:
        sys.setrecursionlimit(old)
    return (np.asarray(feature, dtype=np.int32),
            np.asarray(threshold, dtype=np.float64),
            np.asarray(left, dtype=np.int32),
            np.asarray(right, dtype=np.int32),
            np.asarray(dists, dtype=np.float64),
            np.asarray(sizes, dtype=np.int64))


def _compact(feature, threshold, left, right, dist, sizes) -> DecisionTree:
    """Drop unreachable nodes (after pruning) and reindex, parents first."""
    keep = []
    stack = [0]
    while stack:
        i = stack.pop()
        keep.append(i)
        if feature[i] != LEAF:
            stack.append(int(right[i]))
            stack.append(int(left[i]))
    keep = np.asarray(sorted(keep), dtype=np.int64)
    remap = np.full(len(feature), -1, dtype=np.int32)
    remap[keep] = np.arange(len(keep), dtype=np.int32)
    f = feature[keep]
    l = np.where(f == LEAF, LEAF, remap[left[keep]]).astype(np.int32)
    r = np.where(f == LEAF, LEAF, remap[right[keep]]).astype(np.int32)
    return f, threshold[keep], l, r, dist[keep], sizes[keep]


def _prune(feature, threshold, left, right, dist, sizes, ccp_alpha, n_total):
    """Weakest-link cost-complexity pruning.

    Repeatedly collapses the internal node(s) with the smallest effective
    alpha g(t) = (R(t) - R(subtree)) / (leaves - 1) while g < ccp_alpha.
    Larger ccp_alpha therefore never yields a bigger tree.
    """
    feature = feature.copy()
    n = len(feature)
    while True:
        # leaf counts and subtree error, children have larger indices so a
        # reverse sweep is a valid postorder
        leaves = np.ones(n)
        r_sub = np.empty(n)
        err = (sizes - (dist * sizes[:, None]).max(axis=1)) / n_total
        for i in range(n - 1, -1, -1):
            if feature[i] != LEAF:
                leaves[i] = leaves[left[i]] + leaves[right[i]]
                r_sub[i] = r_sub[left[i]] + r_sub[right[i]]
            else:
                r_sub[i] = err[i]
        internal = np.flatnonzero(feature != LEAF)
        if internal.size == 0:
            break
        g = (err[internal] - r_sub[internal]) / (leaves[internal] - 1)
        g_min = g.min()
        if not g_min < ccp_alpha:
            break
        for i in internal[g <= g_min + 1e-15]:
            feature[i] = LEAF
    return _compact(feature, threshold, left, right, dist, sizes)


def train_dt(train: Dataset, max_depth: int, ccp_alpha: float = 0.0,
             seed: int = 0) -> DecisionTree:
    """Grow a CART tree with Gini splits, then cost-complexity prune it.

    The seed only matters when feature subsampling is active (forests);
    plain trees are deterministic regardless.
    """
    if train.n_samples == 0:
        raise ValueError("empty training set")
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    return _train_single(train.features, train.labels, train.n_classes,
                         max_depth, ccp_alpha,
                         np.random.default_rng(seed), train.n_features,
                         train.n_features)


def _train_single(X, y, n_classes, max_depth, ccp_alpha, rng, n_feat, n_sub):
    arrays = _grow(X, y, n_classes, max_depth, rng, n_sub)
    if ccp_alpha > 0.0:
        arrays = _prune(*arrays, ccp_alpha, len(y))
    return DecisionTree(*arrays, n_features=n_feat, max_depth=max_depth)


def predict_nodes(tree: DecisionTree, X: np.ndarray) -> np.ndarray:
    """Leaf node index reached by each sample (value < threshold goes left)."""
    X = np.atleast_2d(X)
    if X.shape[1] != tree.n_features:
        raise ValueError(
            f"expected {tree.n_features} features, got {X.shape[1]}")
    nodes = np.zeros(len(X), dtype=np.int64)
    while True:
        f = tree.feature[nodes]
        active = f != LEAF
        if not active.any():
            return nodes
        idx = np.flatnonzero(active)
        fa = f[idx]
        go_left = X[idx, fa] < tree.threshold[nodes[idx]]
        nodes[idx] = np.where(go_left, tree.left[nodes[idx]],
                              tree.right[nodes[idx]])


def predict_dt(tree: DecisionTree, sample: np.ndarray) -> np.ndarray:
    """Class distribution of the single leaf reached by one sample."""
    node = predict_nodes(tree, np.asarray(sample, dtype=np.float64))[0]
    return tree.dist[node]


def predict_dt_classes(tree: DecisionTree, X: np.ndarray) -> np.ndarray:
    return np.argmax(tree.dist[predict_nodes(tree, X)], axis=1)


def accuracy_dt(tree: DecisionTree, ds: Dataset) -> float:
    return float(np.mean(predict_dt_classes(tree, ds.features) == ds.labels))


def train_rf(train: Dataset, n_trees: int, max_depth: int, seed: int = 0,
             ccp_alpha: float = 0.0, bootstrap: bool = True,
             feature_subset: str = "sqrt") -> RandomForest:
    """Bootstrap-bagged CART forest with per-split random feature subsets.

    feature_subset 'sqrt' uses max(1, floor(sqrt(F))) candidates per split,
    'all' disables subsampling. With n_trees=1, bootstrap=False and 'all'
    this degenerates to train_dt exactly.
    """
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    if feature_subset == "sqrt":
        n_sub = max(1, int(np.sqrt(train.n_features)))
    elif feature_subset == "all":
        n_sub = train.n_features
    else:
        raise ValueError(f"unknown feature_subset {feature_subset!r}")
    trees = []
    for t in range(n_trees):
        rng = np.random.default_rng([seed, t])
        if bootstrap:
            idx = rng.integers(0, train.n_samples, train.n_samples)
        else:
            idx = np.arange(train.n_samples)
        trees.append(_train_single(
            train.features[idx], train.labels[idx], train.n_classes,
            max_depth, ccp_alpha, rng, train.n_features, n_sub))
    return RandomForest(tuple(trees))


def predict_rf_classes(forest: RandomForest, X: np.ndarray) -> np.ndarray:
    """Majority vote over per-tree argmax predictions; ties pick the lowest class."""
    votes = np.stack([predict_dt_classes(t, X) for t in forest.trees])
    n_classes = forest.n_classes
    out = np.empty(votes.shape[1], dtype=np.int64)
    for i in range(votes.shape[1]):
        out[i] = np.argmax(np.bincount(votes[:, i], minlength=n_classes))
    return out


def accuracy_rf(forest: RandomForest, ds: Dataset) -> float:
    return float(np.mean(predict_rf_classes(forest, ds.features) == ds.labels))


def tune_ccp_alpha(train: Dataset, max_depth: int,
                   alphas=(0.0, 0.001, 0.002, 0.005, 0.01, 0.02),
                   val_fraction: float = 0.25, seed: int = 0) -> float:
    """Pick ccp_alpha by a held-out validation split of the training set.

    Ties prefer the larger alpha (smaller tree).
    """
    from .datasets import split as ds_split
    fit, val = ds_split(train, val_fraction, seed)
    best = (-1.0, 0.0)
    for a in alphas:
        acc = accuracy_dt(train_dt(fit, max_depth, ccp_alpha=a), val)
        if acc >= best[0]:
            best = (acc, a)
    return best[1]


# -- serialization ----------------------------------------------------------

TREE_FORMAT = "camforest-tree-v1"
FOREST_FORMAT = "camforest-forest-v1"


def tree_to_dict(tree: DecisionTree) -> dict:
    nodes = []
    for i in range(tree.n_nodes):
        if tree.feature[i] == LEAF:
            nodes.append({"dist": tree.dist[i].tolist(),
                          "n": int(tree.n_samples[i])})
        else:
            nodes.append({"feature": int(tree.feature[i]),
                          "threshold": float(tree.threshold[i]),
                          "left": int(tree.left[i]),
                          "right": int(tree.right[i]),
                          "dist": tree.dist[i].tolist(),
                          "n": int(tree.n_samples[i])})
    return {"format": TREE_FORMAT, "n_features": tree.n_features,
            "n_classes": tree.n_classes, "max_depth": tree.max_depth,
            "nodes": nodes}


def tree_from_dict(d: dict) -> DecisionTree:
    if d.get("format") != TREE_FORMAT:
        raise ValueError(f"not a {TREE_FORMAT} document")
    n = len(d["nodes"])
    feature = np.full(n, LEAF, dtype=np.int32)
    threshold = np.full(n, np.nan)
    left = np.full(n, LEAF, dtype=np.int32)
    right = np.full(n, LEAF, dtype=np.int32)
    dist = np.zeros((n, d["n_classes"]))
    sizes = np.zeros(n, dtype=np.int64)
    for i, node in enumerate(d["nodes"]):
        dist[i] = node["dist"]
        sizes[i] = node.get("n", 0)
        if "feature" in node:
            feature[i] = node["feature"]
            threshold[i] = node["threshold"]
            left[i] = node["left"]
            right[i] = node["right"]
    return DecisionTree(feature, threshold, left, right, dist, sizes,
                        n_features=d["n_features"], max_depth=d["max_depth"])


def save_tree(tree: DecisionTree, path):
    Path(path).write_text(json.dumps(tree_to_dict(tree)))


def load_tree(path) -> DecisionTree:
    return tree_from_dict(json.loads(Path(path).read_text()))


def forest_to_dict(forest: RandomForest) -> dict:
    return {"format": FOREST_FORMAT, "vote_mode": forest.vote_mode,
            "trees": [tree_to_dict(t) for t in forest.trees]}


def forest_from_dict(d: dict) -> RandomForest:
    if d.get("format") != FOREST_FORMAT:
        raise ValueError(f"not a {FOREST_FORMAT} document")
    return RandomForest(tuple(tree_from_dict(t) for t in d["trees"]),
                        d.get("vote_mode", "majority"))


def save_forest(forest: RandomForest, path):
    Path(path).write_text(json.dumps(forest_to_dict(forest)))


def load_forest(path) -> RandomForest:
    return forest_from_dict(json.loads(Path(path).read_text()))
