"""Robustness studies: variation sweeps, root-feature attack, decision surfaces.

Models of any kind (hard/soft, single tree/forest) are mapped onto CAM arrays
and swept under threshold variation; hard models are emulated with a
near-step gain and the pure product form, so every comparison runs through
the same simulator. Each CAM row owns its copy of every threshold, so shared
ancestor splits perturb independently per path, matching the hardware.

The adversarial protocol replaces the input value of each tree's root-split
feature with a uniform[0, 1] draw (one coordinate per sample per tree) and
measures the accuracy hit. Soft trees spread the decision across many paths,
so corrupting the root feature hurts them far less than the hard tree whose
first branch it is.
"""

from __future__ import annotations

import numpy as np

from .cammap import CamArray, map_sdt
from .camsim import (ExperimentReport, VariationModel, inject_variation,
                     forest_infer_classes, infer_classes, monte_carlo,
                     monte_carlo_forest)
from .datasets import Dataset
from .hardtree import (DecisionTree, RandomForest, predict_dt_classes,
                       predict_rf_classes)
from .softtree import (DEFAULT_BEHAVIOR, HARD_GAIN, BehaviorParams, SoftForest,
                       SoftTree, forest_class_scores, init_sdt,
                       predict_sdt_classes, path_probs)

HARD_BEHAVIOR = BehaviorParams(a=1.0, b=0.0, k=HARD_GAIN, v_ml_t0=1.0)


def model_arrays(model, behavior: BehaviorParams = DEFAULT_BEHAVIOR):
    """(arrays, eval behavior, readout mode) for any supported model kind.

    Hard models keep their thresholds but evaluate with a near-step gain and
    the product form; soft models evaluate with the supplied behavior.
    """
    if isinstance(model, DecisionTree):
        return [map_sdt(init_sdt(model))], HARD_BEHAVIOR, "single"
    if isinstance(model, RandomForest):
        return ([map_sdt(init_sdt(t)) for t in model.trees],
                HARD_BEHAVIOR, "vote")
    if isinstance(model, SoftTree):
        return [map_sdt(model)], model.behavior, "single"
    if isinstance(model, SoftForest):
        return ([map_sdt(t) for t in model.trees],
                model.trees[0].behavior, "score")
    raise TypeError(f"unsupported model type {type(model).__name__}")


def variation_sweep(models, test: Dataset, magnitudes, kind: str = "uniform",
                    trials: int = 50, seed: int = 0,
                    threads: int = 1) -> list[ExperimentReport]:
    """Monte Carlo accuracy grid over (model, variation magnitude).

    models: iterable of (label, model) pairs. Returns one report per cell,
    in the given order; the magnitude-0 entries carry noiseless accuracy.
    """
    reports = []
    for label, model in models:
        arrays, behavior, mode = model_arrays(model)
        for mag in magnitudes:
            vm = VariationModel(kind, float(mag), seed)
            if mode == "single":
                rep = monte_carlo(arrays[0], test, vm, behavior,
                                  trials, label=label, threads=threads)
            else:
                rep = monte_carlo_forest(arrays, test, vm, behavior, trials,
                                         mode=mode, label=label,
                                         threads=threads)
            reports.append(rep)
    return reports


# -- root-feature attack --------------------------------------------------------

def root_features(model) -> list[int]:
    if isinstance(model, (DecisionTree, SoftTree)):
        return [model.root_feature]
    return [t.root_feature for t in model.trees]


def _attacked(X: np.ndarray, feature: int, rng) -> np.ndarray:
    Xa = X.copy()
    Xa[:, feature] = rng.uniform(0.0, 1.0, len(X))
    return Xa


def attack_root(model, test: Dataset, trials: int = 10, seed: int = 0,
                level: str = "software",
                vm: VariationModel | None = None,
                label: str = "model") -> ExperimentReport:
    """Replace each tree's root-split input with uniform[0,1] noise.

    level "software" runs the model's own predictor; level "cam" runs the
    mapped arrays through the behavioral simulator, optionally composed with
    threshold variation vm. One coordinate changes per sample per tree; the
    rest of the input is untouched.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if level not in ("software", "cam"):
        raise ValueError(f"unknown attack level {level!r}")
    X, y = test.features, test.labels
    accs = []
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        if level == "software":
            pred = _attack_predict_software(model, X, rng)
        else:
            pred = _attack_predict_cam(model, X, rng, vm, t)
        accs.append(float(np.mean(pred == y)))
    return ExperimentReport.from_accuracies(label, "attack-root", 1.0, accs)


def _attack_predict_software(model, X, rng):
    if isinstance(model, DecisionTree):
        return predict_dt_classes(model, _attacked(X, model.root_feature, rng))
    if isinstance(model, SoftTree):
        return predict_sdt_classes(model, _attacked(X, model.root_feature, rng))
    if isinstance(model, RandomForest):
        votes = np.zeros((len(X), model.trees[0].n_classes), dtype=np.int64)
        for tree in model.trees:
            pred = predict_dt_classes(tree, _attacked(X, tree.root_feature, rng))
            votes[np.arange(len(X)), pred] += 1
        return np.argmax(votes, axis=1)
    if isinstance(model, SoftForest):
        scores = np.zeros((len(X), model.n_classes))
        for tree in model.trees:
            scores += forest_class_scores(
                SoftForest((tree,), model.pooling),
                _attacked(X, tree.root_feature, rng))
        return np.argmax(scores, axis=1)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def _attack_predict_cam(model, X, rng, vm, trial):
    arrays, behavior, mode = model_arrays(model)
    if vm is not None and vm.magnitude > 0:
        vrng = np.random.default_rng([vm.seed, trial])
        arrays = [inject_variation(a, vm, vrng) for a in arrays]
    roots = root_features(model)
    if mode == "single":
        return infer_classes(arrays[0], _attacked(X, roots[0], rng), behavior)
    n_classes = arrays[0].n_classes
    votes = np.zeros((len(X), n_classes), dtype=np.int64)
    scores = np.zeros((len(X), n_classes))
    for arr, root in zip(arrays, roots):
        Xa = _attacked(X, root, rng)
        if mode == "vote":
            pred = infer_classes(arr, Xa, behavior)
            votes[np.arange(len(X)), pred] += 1
        else:
            scores += _array_class_scores(arr, Xa, behavior)
    return np.argmax(votes if mode == "vote" else scores, axis=1)


def _array_class_scores(arr: CamArray, X, behavior):
    from .camsim import ml_values
    ml = ml_values(arr, X, behavior)
    out = np.zeros((len(X), arr.n_classes))
    for c in range(arr.n_classes):
        cols = ml[:, arr.path_labels == c]
        if cols.shape[1]:
            out[:, c] = cols.max(axis=1)
    return out


# -- decision surface ------------------------------------------------------------

def decision_surface(model, feature_pair, fixed_values,
                     grid_resolution: int = 200,
                     feature_range=(-1.0, 1.0), normalize: bool = True):
    """Class-probability grid over two features, the rest held fixed.

    Returns (xs, ys, grid) with grid[i, j, c] the class-c probability at
    (xs[i], ys[j]). fixed_values supplies the frozen coordinates (typically
    training means). With normalize off, soft models report raw pooled path
    probabilities instead of a normalized distribution.
    """
    fx, fy = feature_pair
    fixed = np.asarray(fixed_values, dtype=np.float64).ravel()
    n_features = len(fixed)
    if not (0 <= fx < n_features and 0 <= fy < n_features) or fx == fy:
        raise ValueError(f"bad feature pair {feature_pair!r} "
                         f"for {n_features} features")
    res = int(grid_resolution)
    xs = np.linspace(feature_range[0], feature_range[1], res)
    ys = np.linspace(feature_range[0], feature_range[1], res)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    X = np.tile(fixed, (res * res, 1))
    X[:, fx] = gx.ravel()
    X[:, fy] = gy.ravel()
    probs = _class_probs(model, X, normalize)
    return xs, ys, probs.reshape(res, res, -1)


def _class_probs(model, X, normalize):
    if isinstance(model, DecisionTree):
        from .hardtree import predict_nodes
        return model.dist[predict_nodes(model, X)]
    if isinstance(model, RandomForest):
        from .hardtree import predict_nodes
        return np.mean([t.dist[predict_nodes(t, X)] for t in model.trees],
                       axis=0)
    if isinstance(model, SoftTree):
        scores = _sdt_class_scores(model, X)
    elif isinstance(model, SoftForest):
        scores = forest_class_scores(model, X)
    else:
        raise TypeError(f"unsupported model type {type(model).__name__}")
    if not normalize:
        return scores
    tot = scores.sum(axis=1, keepdims=True)
    flat = tot[:, 0] == 0
    scores[flat] = 1.0          # all paths clamped to zero: no preference
    tot[flat] = scores.shape[1]
    return scores / tot


def _sdt_class_scores(tree: SoftTree, X):
    probs = path_probs(tree, X)
    labels = np.asarray([p.label for p in tree.paths])
    out = np.zeros((len(probs), tree.n_classes))
    for c in range(tree.n_classes):
        cols = probs[:, labels == c]
        if cols.shape[1]:
            out[:, c] = cols.max(axis=1)
    return out


def surface_to_csv(xs, ys, grid, path) -> None:
    import csv
    import pathlib
    res_x, res_y, n_classes = grid.shape
    with pathlib.Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"] + [f"class_{c}" for c in range(n_classes)])
        for i in range(res_x):
            for j in range(res_y):
                w.writerow([repr(float(xs[i])), repr(float(ys[j]))]
                           + [repr(float(v)) for v in grid[i, j]])
