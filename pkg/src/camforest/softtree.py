"""Soft decision trees: path-probability forward model, training, forests.

A soft tree is a flat list of root-to-leaf paths. Each path keeps its own
copies of the node thresholds (so shared ancestors decouple during training)
and evaluates to a match probability

    P = clamp( a * prod(p_i) + b * (sum(p_i) - (n-1) * v_ml_t0), 0, 1 )

where p_i is a sigmoid node probability, sigma(k(T - x)) for a less-than
condition and sigma(k(x - T)) for greater-than. Prediction is the argmax path.
Training runs plain minibatch gradient descent on the cross-entropy of
softmax(beta * P) aggregated per class, with analytic gradients through the
whole expression (the clamp passes gradient only strictly inside (0, 1)).
"""

from __future__ import annotations

import json
import pathlib
import sys
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .datasets import Dataset
from .hardtree import LEAF, DecisionTree, RandomForest

THRESHOLD_RANGE = (-1.0, 1.0)


@dataclass(frozen=True)
class Condition:
    feature: int
    op: str                 # "lt" | "gt"
    threshold: float
    trainable: bool = True


@dataclass(frozen=True)
class Path:
    conditions: tuple[Condition, ...]
    label: int
    dist: tuple[float, ...] = ()


@dataclass(frozen=True)
class BehaviorParams:
    """Row-evaluation constants: Eq-style blend of product and sum terms."""
    a: float = 1.0
    b: float = 0.0
    k: float = 20.0         # sigmoid gain over normalized volts
    v_ml_t0: float = 1.0    # precharged match-line voltage, normalized

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("gain k must be positive")


DEFAULT_BEHAVIOR = BehaviorParams()

# gain used when a hard tree is run on the soft/CAM evaluation stack
HARD_GAIN = 1e4


@dataclass(frozen=True)
class SoftTree:
    paths: tuple[Path, ...]
    n_features: int
    n_classes: int
    behavior: BehaviorParams = DEFAULT_BEHAVIOR
    root_feature: int = LEAF   # feature tested at the initializing DT's root

    @property
    def n_paths(self) -> int:
        return len(self.paths)


@dataclass(frozen=True)
class SoftForest:
    trees: tuple[SoftTree, ...]
    pooling: str = "max"       # per-class path pooling: "max" | "mean"

    @property
    def n_classes(self) -> int:
        return self.trees[0].n_classes

    def root_features(self) -> list[int]:
        return [t.root_feature for t in self.trees]


def node_prob(condition: Condition | str, x: float, k: float) -> float:
    """Sigmoid match probability of one condition at input x."""
    if condition == "wildcard" or getattr(condition, "op", None) == "wildcard":
        return 1.0
    if condition.op == "lt":
        return float(expit(k * (condition.threshold - x)))
    if condition.op == "gt":
        return float(expit(k * (x - condition.threshold)))
    raise ValueError(f"unknown condition op {condition.op!r}")


def row_prob(path: Path, sample: np.ndarray, behavior: BehaviorParams) -> float:
    """Scalar reference evaluation of one path on one sample."""
    n = len(path.conditions)
    if n == 0:
        return 1.0   # an always-match row holds its precharge
    prod, total = 1.0, 0.0
    for c in path.conditions:
        p = node_prob(c, float(sample[c.feature]), behavior.k)
        prod *= p
        total += p
    raw = (behavior.a * prod
           + behavior.b * total
           - behavior.b * (n - 1) * behavior.v_ml_t0)
    return float(min(max(raw, 0.0), 1.0))


# -- compiled batch evaluation -----------------------------------------------

@dataclass
class _Compiled:
    offsets: np.ndarray      # (n_paths + 1,) segment bounds into cond arrays
    feat: np.ndarray         # (K,)
    sign: np.ndarray         # (K,) +1 for gt, -1 for lt
    thr: np.ndarray          # (K,)
    trainable: np.ndarray    # (K,) bool
    labels: np.ndarray       # (n_paths,)
    n_conds: np.ndarray      # (n_paths,)


def _compile(tree: SoftTree) -> _Compiled:
    feat, sign, thr, trainable = [], [], [], []
    offsets = [0]
    for p in tree.paths:
        for c in p.conditions:
            feat.append(c.feature)
            sign.append(1.0 if c.op == "gt" else -1.0)
            thr.append(c.threshold)
            trainable.append(c.trainable)
        offsets.append(len(feat))
    n_conds = np.diff(offsets)
    if (n_conds == 0).any() and tree.n_paths > 1:
        raise ValueError("empty path in a multi-path tree")
    return _Compiled(np.asarray(offsets), np.asarray(feat, dtype=np.int64),
                     np.asarray(sign), np.asarray(thr),
                     np.asarray(trainable, dtype=bool),
                     np.asarray([p.label for p in tree.paths]), n_conds)


def _forward(comp: _Compiled, X: np.ndarray, behavior: BehaviorParams):
    """Per-path pre-clamp output and intermediates for a sample batch."""
    a, b, k, v0 = behavior.a, behavior.b, behavior.k, behavior.v_ml_t0
    if len(comp.feat) == 0:     # single all-wildcard path
        ones = np.ones((len(X), len(comp.n_conds)))
        return ones, ones.copy(), ones.copy()
    z = comp.sign[None, :] * (X[:, comp.feat] - comp.thr[None, :])
    p = expit(k * z)
    starts = comp.offsets[:-1]
    prod = np.multiply.reduceat(p, starts, axis=1)
    ssum = np.add.reduceat(p, starts, axis=1)
    pre = a * prod + b * ssum - b * (comp.n_conds - 1) * v0
    return pre, prod, p


def path_probs(tree: SoftTree, X: np.ndarray,
               chunk: int = 512) -> np.ndarray:
    """Clamped path probabilities for a batch, (n_samples, n_paths)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    comp = _compile(tree)
    out = np.empty((len(X), tree.n_paths))
    for s in range(0, len(X), chunk):
        pre, _, _ = _forward(comp, X[s:s + chunk], tree.behavior)
        out[s:s + chunk] = np.clip(pre, 0.0, 1.0)
    return out


def predict_sdt(tree: SoftTree, sample: np.ndarray):
    """(predicted class, per-path probabilities) for one sample."""
    probs = path_probs(tree, np.asarray(sample, dtype=np.float64))[0]
    winner = int(np.argmax(probs))   # ties resolve to the lowest path index
    return tree.paths[winner].label, probs


def predict_sdt_classes(tree: SoftTree, X: np.ndarray) -> np.ndarray:
    probs = path_probs(tree, X)
    labels = np.asarray([p.label for p in tree.paths])
    return labels[np.argmax(probs, axis=1)]


def accuracy_sdt(tree: SoftTree, ds: Dataset) -> float:
    return float(np.mean(predict_sdt_classes(tree, ds.features) == ds.labels))


# -- structure extraction ----------------------------------------------------

def _canonical(conds: list[tuple[int, str, float]]) -> tuple[Condition, ...]:
    """Merge repeated (feature, direction) pairs down to the tightest bound."""
    merged: dict[tuple[int, str], float] = {}
    order: list[tuple[int, str]] = []
    for f, op, t in conds:
        key = (f, op)
        if key not in merged:
            merged[key] = t
            order.append(key)
        else:
            merged[key] = min(merged[key], t) if op == "lt" else max(merged[key], t)
    return tuple(Condition(f, op, merged[(f, op)]) for f, op in order)


def init_sdt(tree: DecisionTree, behavior: BehaviorParams = DEFAULT_BEHAVIOR) -> SoftTree:
    """Extract root-to-leaf paths from a hard tree (leaves left to right).

    Every path gets its own threshold copies; the leaf label is the argmax of
    the leaf distribution.
    """
    paths: list[Path] = []

    def walk(node: int, acc: list):
        if tree.feature[node] == LEAF:
            paths.append(Path(_canonical(acc),
                              int(np.argmax(tree.dist[node])),
                              tuple(tree.dist[node])))
            return
        f = int(tree.feature[node])
        t = float(tree.threshold[node])
        walk(int(tree.left[node]), acc + [(f, "lt", t)])
        walk(int(tree.right[node]), acc + [(f, "gt", t)])

    old = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old, 10 * tree.max_depth + 100))
    try:
        walk(0, [])
    finally:
        sys.setrecursionlimit(old)
    return SoftTree(tuple(paths), tree.n_features, tree.n_classes,
                    behavior, root_feature=tree.root_feature)


def harden(tree: SoftTree, gain: float = HARD_GAIN) -> SoftTree:
    """Same structure evaluated with a near-step gain (hard-boundary model)."""
    return replace(tree, behavior=replace(tree.behavior, k=gain))


# -- training -----------------------------------------------------------------

def _loss_grad(comp: _Compiled, X: np.ndarray, y: np.ndarray,
               behavior: BehaviorParams, beta: float):
    """Mean cross-entropy loss and its gradient wrt the flat threshold vector.

    Loss per sample: -log sum_{paths of the true class} softmax(beta * P).
    The clamp passes gradient only strictly inside (0, 1); outside it the
    threshold gets no signal from that sample.
    """
    a, b, k = behavior.a, behavior.b, behavior.k
    pre, prod, p = _forward(comp, X, behavior)
    inside = (pre > 0.0) & (pre < 1.0)
    P = np.clip(pre, 0.0, 1.0)

    q = np.exp(beta * (P - P.max(axis=1, keepdims=True)))
    q /= q.sum(axis=1, keepdims=True)
    eq = comp.labels[None, :] == y[:, None]
    Qy = np.maximum((q * eq).sum(axis=1), 1e-300)
    loss = float(-np.mean(np.log(Qy)))
    dP = beta * (q - eq * (q / Qy[:, None])) / len(X)
    dP *= inside

    cond_path = np.repeat(np.arange(len(comp.n_conds)), comp.n_conds)
    dPc = dP[:, cond_path]
    dPdp = a * prod[:, cond_path] / np.maximum(p, 1e-300) + b
    dpdT = -comp.sign[None, :] * k * p * (1.0 - p)
    return loss, np.einsum("bk,bk,bk->k", dPc, dPdp, dpdT)


def sdt_gradient(tree: SoftTree, X: np.ndarray, y: np.ndarray,
                 beta: float = 10.0):
    """(loss, gradient) of the training objective at the current thresholds.

    The gradient is ordered like the flattened path-condition list (path by
    path, conditions in path order), the same layout training updates.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return _loss_grad(_compile(tree), X, np.asarray(y), tree.behavior, beta)


def train_sdt(tree: SoftTree, train: Dataset, epochs: int,
              learning_rate: float = 0.05, seed: int = 0,
              batch_size: int = 32, beta: float = 10.0,
              optimizer: str = "sgd") -> SoftTree:
    """Minibatch gradient descent on the path thresholds.

    Analytic gradients (see _loss_grad); thresholds are clamped to [-1, 1]
    after every step. Structure, labels, and behavior parameters stay
    frozen. optimizer "sgd" takes plain steps; "adam" rescales each
    threshold's step by its own gradient history, which matters for deep
    trees where most paths see only a handful of samples per batch and raw
    gradients differ by orders of magnitude across conditions.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    if optimizer not in ("sgd", "adam"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    comp = _compile(tree)
    if len(comp.feat) == 0 or epochs == 0:
        return replace(tree)
    thr = comp.thr.copy()
    X, y = train.features, train.labels
    rng = np.random.default_rng(seed)
    m = np.zeros_like(thr)
    v = np.zeros_like(thr)
    step = 0

    for _ in range(epochs):
        for sl in _batches(rng, len(X), batch_size):
            comp.thr = thr
            _, grad = _loss_grad(comp, X[sl], y[sl], tree.behavior, beta)
            if not np.isfinite(grad).all():
                bad = int(np.flatnonzero(~np.isfinite(grad))[0])
                raise RuntimeError(
                    f"non-finite gradient at condition {bad} "
                    f"(feature {comp.feat[bad]})")
            if optimizer == "adam":
                step += 1
                m = 0.9 * m + 0.1 * grad
                v = 0.999 * v + 0.001 * grad * grad
                mhat = m / (1.0 - 0.9 ** step)
                vhat = v / (1.0 - 0.999 ** step)
                delta = learning_rate * mhat / (np.sqrt(vhat) + 1e-8)
            else:
                delta = learning_rate * grad
            thr = np.where(comp.trainable, thr - delta, thr)
            np.clip(thr, THRESHOLD_RANGE[0], THRESHOLD_RANGE[1], out=thr)

    return _with_thresholds(tree, thr)


def train_sdt_staged(tree: SoftTree, train: Dataset, stages,
                     learning_rate: float = 0.05, seed: int = 0,
                     batch_size: int = 32,
                     optimizer: str = "sgd") -> SoftTree:
    """Gain-curriculum training: anneal the boundary sharpness upward.

    stages is a sequence of (k, beta, epochs) triples; each stage runs
    train_sdt with the tree's gain temporarily set to k. The returned tree
    keeps the original behavior. At the full hardware gain, a threshold far
    from the data mass sits on a sigmoid plateau and never receives gradient;
    starting soft lets inherited-but-redundant conditions drift out of the
    way before the final stage re-sharpens the boundaries that matter.
    """
    final = tree.behavior
    for i, (k, beta, epochs) in enumerate(stages):
        staged = replace(tree, behavior=replace(final, k=float(k)))
        staged = train_sdt(staged, train, int(epochs), learning_rate,
                           seed=seed + i, batch_size=batch_size,
                           beta=float(beta), optimizer=optimizer)
        tree = replace(staged, behavior=final)
    return tree


def _batches(rng, n, batch_size):
    perm = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield perm[s:s + batch_size]


def _with_thresholds(tree: SoftTree, flat_thr: np.ndarray) -> SoftTree:
    new_paths = []
    i = 0
    for path in tree.paths:
        conds = []
        for c in path.conditions:
            conds.append(replace(c, threshold=float(flat_thr[i])))
            i += 1
        new_paths.append(replace(path, conditions=tuple(conds)))
    return replace(tree, paths=tuple(new_paths))


def loss_sdt(tree: SoftTree, X: np.ndarray, y: np.ndarray,
             beta: float = 10.0) -> float:
    """Mean training loss (useful for convergence monitoring and tests)."""
    P = path_probs(tree, X)
    labels = np.asarray([p.label for p in tree.paths])
    q = np.exp(beta * (P - P.max(axis=1, keepdims=True)))
    q /= q.sum(axis=1, keepdims=True)
    Qy = np.maximum((q * (labels[None, :] == y[:, None])).sum(axis=1), 1e-300)
    return float(-np.mean(np.log(Qy)))


# -- forests ------------------------------------------------------------------

def init_srf(forest: RandomForest,
             behavior: BehaviorParams = DEFAULT_BEHAVIOR,
             pooling: str = "max") -> SoftForest:
    return SoftForest(tuple(init_sdt(t, behavior) for t in forest.trees),
                      pooling)


def train_srf(forest: SoftForest, train: Dataset, epochs: int,
              learning_rate: float = 0.05, seed: int = 0,
              batch_size: int = 32, beta: float = 10.0) -> SoftForest:
    trees = tuple(
        train_sdt(t, train, epochs, learning_rate, seed=seed + i,
                  batch_size=batch_size, beta=beta)
        for i, t in enumerate(forest.trees))
    return replace(forest, trees=trees)


def forest_class_scores(forest: SoftForest, X: np.ndarray) -> np.ndarray:
    """Sum over trees of the per-class pooled path probability, (n, C)."""
    n_classes = forest.n_classes
    scores = np.zeros((len(np.atleast_2d(X)), n_classes))
    for tree in forest.trees:
        probs = path_probs(tree, X)
        labels = np.asarray([p.label for p in tree.paths])
        for c in range(n_classes):
            cols = probs[:, labels == c]
            if cols.shape[1] == 0:
                continue
            scores[:, c] += cols.max(axis=1) if forest.pooling == "max" \
                else cols.mean(axis=1)
    return scores


def predict_srf_classes(forest: SoftForest, X: np.ndarray) -> np.ndarray:
    return np.argmax(forest_class_scores(forest, X), axis=1)


def accuracy_srf(forest: SoftForest, ds: Dataset) -> float:
    return float(np.mean(predict_srf_classes(forest, ds.features) == ds.labels))


# -- serialization ------------------------------------------------------------

SDT_FORMAT = "camforest-sdt-v1"
SRF_FORMAT = "camforest-srf-v1"


def sdt_to_dict(tree: SoftTree) -> dict:
    return {"format": SDT_FORMAT,
            "n_features": tree.n_features,
            "n_classes": tree.n_classes,
            "root_feature": tree.root_feature,
            "behavior": {"a": tree.behavior.a, "b": tree.behavior.b,
                         "k": tree.behavior.k, "v_ml_t0": tree.behavior.v_ml_t0},
            "paths": [{
                "label": p.label,
                "dist": list(p.dist),
                "conditions": [{
                    "feature": c.feature, "op": c.op,
                    "threshold": c.threshold, "trainable": c.trainable,
                } for c in p.conditions],
            } for p in tree.paths]}


def sdt_from_dict(d: dict) -> SoftTree:
    if d.get("format") != SDT_FORMAT:
        raise ValueError(f"not a {SDT_FORMAT} document")
    beh = BehaviorParams(**d["behavior"])
    paths = tuple(
        Path(tuple(Condition(c["feature"], c["op"], c["threshold"],
                             c.get("trainable", True))
                   for c in p["conditions"]),
             p["label"], tuple(p.get("dist", ())))
        for p in d["paths"])
    return SoftTree(paths, d["n_features"], d["n_classes"], beh,
                    d.get("root_feature", LEAF))


def save_sdt(tree: SoftTree, path):
    pathlib.Path(path).write_text(json.dumps(sdt_to_dict(tree)))


def load_sdt(path) -> SoftTree:
    return sdt_from_dict(json.loads(pathlib.Path(path).read_text()))


def srf_to_dict(forest: SoftForest) -> dict:
    return {"format": SRF_FORMAT, "pooling": forest.pooling,
            "trees": [sdt_to_dict(t) for t in forest.trees]}


def srf_from_dict(d: dict) -> SoftForest:
    if d.get("format") != SRF_FORMAT:
        raise ValueError(f"not a {SRF_FORMAT} document")
    return SoftForest(tuple(sdt_from_dict(t) for t in d["trees"]),
                      d.get("pooling", "max"))


def save_srf(forest: SoftForest, path):
    pathlib.Path(path).write_text(json.dumps(srf_to_dict(forest)))


def load_srf(path) -> SoftForest:
    return srf_from_dict(json.loads(pathlib.Path(path).read_text()))
