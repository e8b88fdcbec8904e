"""Robustness studies: variation sweeps, root attack, decision surfaces."""

import csv

import numpy as np
import pytest

from camforest.camsim import VariationModel
from camforest.datasets import Dataset
from camforest.hardtree import (accuracy_dt, accuracy_rf, predict_nodes,
                                train_dt, train_rf)
from camforest.robust import (attack_root, decision_surface, model_arrays,
                              root_features, surface_to_csv, variation_sweep)
from camforest.softtree import (BehaviorParams, Condition, Path, SoftTree,
                                accuracy_sdt, accuracy_srf, forest_class_scores,
                                init_sdt, init_srf, path_probs, train_sdt)


@pytest.fixture(scope="module")
def iris_models(iris_splits):
    train, _ = iris_splits
    dt = train_dt(train, 3)
    rf = train_rf(train, 5, 3)
    sdt = train_sdt(init_sdt(dt), train, epochs=20, learning_rate=0.05, seed=0)
    srf = init_srf(rf)
    return dt, rf, sdt, srf


# -- root features ---------------------------------------------------------------

def test_root_features_every_model_kind(iris_models):
    dt, rf, sdt, srf = iris_models
    assert root_features(dt) == [dt.root_feature]
    assert root_features(sdt) == [sdt.root_feature]
    assert root_features(rf) == [t.root_feature for t in rf.trees]
    assert root_features(srf) == [t.root_feature for t in srf.trees]
    assert all(0 <= f < 4 for f in root_features(rf))


def test_model_arrays_rejects_unknown_type():
    with pytest.raises(TypeError, match="unsupported model type"):
        model_arrays(42)


# -- root attack -----------------------------------------------------------------

def _stump_data() -> Dataset:
    # one feature, classes separated at 0.5 exactly (split midpoint of
    # 0.45 and 0.55); attack draws land on either side with prob 1/2
    x = np.concatenate([np.linspace(0.0, 0.45, 100),
                        np.linspace(0.55, 1.0, 100)])
    y = np.repeat(np.int64([0, 1]), 100)
    return Dataset("stump", x[:, None], y, ("f0",))


def test_attack_on_stump_hits_chance_level():
    ds = _stump_data()
    dt = train_dt(ds, 1)
    assert dt.threshold[0] == pytest.approx(0.5)
    assert accuracy_dt(dt, ds) == 1.0
    rep = attack_root(dt, ds, trials=200, seed=0)
    # each attacked sample is correct iff its uniform draw lands on its own
    # side of 0.5, so accuracy concentrates on 1/2
    assert rep.mean == pytest.approx(0.5, abs=0.03)
    assert rep.kind == "attack-root"
    assert rep.trials == 200


def test_attack_soft_stump_also_chance_level():
    ds = _stump_data()
    sdt = init_sdt(train_dt(ds, 1))
    rep = attack_root(sdt, ds, trials=200, seed=1)
    assert rep.mean == pytest.approx(0.5, abs=0.03)


def test_attack_replays_from_seed(iris_models, iris_splits):
    _, test = iris_splits
    dt = iris_models[0]
    a = attack_root(dt, test, trials=6, seed=9)
    b = attack_root(dt, test, trials=6, seed=9)
    assert a.accuracies == b.accuracies
    c = attack_root(dt, test, trials=6, seed=10)
    assert c.accuracies != a.accuracies


def test_attack_cam_level_matches_software_for_sdt(iris_models, iris_splits):
    _, test = iris_splits
    sdt = iris_models[2]
    soft = attack_root(sdt, test, trials=4, seed=2, level="software")
    cam = attack_root(sdt, test, trials=4, seed=2, level="cam")
    assert cam.accuracies == pytest.approx(soft.accuracies, abs=1e-12)


def test_attack_cam_level_composes_with_variation(iris_models, iris_splits):
    _, test = iris_splits
    sdt = iris_models[2]
    vm = VariationModel("uniform", 0.1, 3)
    a = attack_root(sdt, test, trials=4, seed=2, level="cam", vm=vm)
    b = attack_root(sdt, test, trials=4, seed=2, level="cam", vm=vm)
    assert a.accuracies == b.accuracies
    clean = attack_root(sdt, test, trials=4, seed=2, level="cam")
    assert a.accuracies != clean.accuracies


def test_attack_forest_attacks_each_tree_root(iris_models, iris_splits):
    _, test = iris_splits
    _, rf, _, srf = iris_models
    a = attack_root(rf, test, trials=4, seed=0)
    b = attack_root(srf, test, trials=4, seed=0)
    assert 0.0 <= min(a.accuracies + b.accuracies)
    assert max(a.accuracies + b.accuracies) <= 1.0


def test_attack_argument_validation(iris_models, iris_splits):
    _, test = iris_splits
    with pytest.raises(ValueError, match="trials"):
        attack_root(iris_models[0], test, trials=0)
    with pytest.raises(ValueError, match="unknown attack level"):
        attack_root(iris_models[0], test, level="voltage")


# -- variation sweep -------------------------------------------------------------

def test_sweep_zero_magnitude_reports_noiseless_accuracy(iris_models,
                                                         iris_splits):
    _, test = iris_splits
    dt, rf, sdt, srf = iris_models
    reports = variation_sweep(
        [("dt", dt), ("rf", rf), ("sdt", sdt), ("srf", srf)],
        test, [0.0], trials=2)
    want = [accuracy_dt(dt, test), accuracy_rf(rf, test),
            accuracy_sdt(sdt, test), accuracy_srf(srf, test)]
    for rep, acc in zip(reports, want):
        assert rep.std == pytest.approx(0.0, abs=1e-12)
        assert rep.mean == pytest.approx(acc, abs=1e-12)


def test_sweep_layout_and_determinism(iris_models, iris_splits):
    _, test = iris_splits
    dt, _, sdt, _ = iris_models
    models = [("hard", dt), ("soft", sdt)]
    mags = [0.0, 0.05, 0.1]
    a = variation_sweep(models, test, mags, trials=3, seed=5)
    b = variation_sweep(models, test, mags, trials=3, seed=5)
    assert len(a) == 6
    assert [r.label for r in a] == ["hard"] * 3 + ["soft"] * 3
    assert [r.magnitude for r in a] == mags * 2
    assert [r.accuracies for r in a] == [r.accuracies for r in b]


def test_sweep_gaussian_kind_recorded(iris_models, iris_splits):
    _, test = iris_splits
    reports = variation_sweep([("dt", iris_models[0])], test, [0.05],
                              kind="gaussian", trials=2, seed=1)
    assert reports[0].kind == "gaussian"


# -- decision surfaces -----------------------------------------------------------

def _grid_inputs(xs, ys, fixed, fx, fy):
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    X = np.tile(np.asarray(fixed, dtype=np.float64), (gx.size, 1))
    X[:, fx] = gx.ravel()
    X[:, fy] = gy.ravel()
    return X


def test_surface_matches_direct_dt_predictions(iris_models, iris_splits):
    train, _ = iris_splits
    dt = iris_models[0]
    fixed = train.features.mean(axis=0)
    xs, ys, grid = decision_surface(dt, (0, 2), fixed, grid_resolution=17)
    X = _grid_inputs(xs, ys, fixed, 0, 2)
    want = dt.dist[predict_nodes(dt, X)].reshape(17, 17, -1)
    assert np.array_equal(grid, want)


def test_surface_matches_direct_sdt_scores(iris_models, iris_splits):
    train, _ = iris_splits
    sdt = iris_models[2]
    fixed = train.features.mean(axis=0)
    xs, ys, grid = decision_surface(sdt, (1, 3), fixed, grid_resolution=9)
    probs = path_probs(sdt, _grid_inputs(xs, ys, fixed, 1, 3))
    labels = np.asarray([p.label for p in sdt.paths])
    scores = np.stack([probs[:, labels == c].max(axis=1)
                       for c in range(sdt.n_classes)], axis=1)
    want = scores / scores.sum(axis=1, keepdims=True)
    assert grid.reshape(-1, sdt.n_classes) == pytest.approx(want, abs=1e-12)


def test_surface_forest_kinds_normalized(iris_models, iris_splits):
    train, _ = iris_splits
    _, rf, _, srf = iris_models
    fixed = train.features.mean(axis=0)
    for model in (rf, srf):
        _, _, grid = decision_surface(model, (0, 1), fixed, grid_resolution=7)
        assert grid.shape == (7, 7, 3)
        assert grid.sum(axis=2) == pytest.approx(np.ones((7, 7)))


def test_surface_unnormalized_returns_raw_pooled_scores(iris_models,
                                                        iris_splits):
    train, _ = iris_splits
    sdt = iris_models[2]
    fixed = train.features.mean(axis=0)
    _, _, grid = decision_surface(sdt, (0, 2), fixed, grid_resolution=7,
                                  normalize=False)
    sums = grid.reshape(-1, sdt.n_classes).sum(axis=1)
    assert not np.allclose(sums, 1.0)
    assert grid.min() >= 0.0 and grid.max() <= 1.0


def test_surface_dead_zone_reports_no_preference():
    # two opposite-corner paths; b pulls unmatched rows to the 0 rail, so
    # the middle of the grid has every path at zero and normalization must
    # fall back to a flat distribution
    beh = BehaviorParams(a=1.0, b=0.5, k=20.0, v_ml_t0=1.0)
    tree = SoftTree(paths=(
        Path((Condition(0, "lt", -0.5), Condition(1, "lt", -0.5)), 0),
        Path((Condition(0, "gt", 0.5), Condition(1, "gt", 0.5)), 1),
    ), n_features=2, n_classes=2, behavior=beh, root_feature=0)
    xs, ys, grid = decision_surface(tree, (0, 1), [0.0, 0.0],
                                    grid_resolution=5)
    mid = np.searchsorted(xs, 0.0)
    assert grid[mid, mid] == pytest.approx([0.5, 0.5])
    corner = grid[0, 0]
    assert corner[0] > 0.99


def test_surface_respects_feature_range(iris_models, iris_splits):
    train, _ = iris_splits
    xs, ys, _ = decision_surface(iris_models[0], (0, 1),
                                 train.features.mean(axis=0),
                                 grid_resolution=5, feature_range=(0.2, 0.8))
    assert xs[0] == 0.2 and xs[-1] == 0.8 and ys[0] == 0.2 and ys[-1] == 0.8


def test_surface_rejects_bad_feature_pairs(iris_models):
    dt = iris_models[0]
    fixed = np.zeros(4)
    with pytest.raises(ValueError, match="bad feature pair"):
        decision_surface(dt, (0, 0), fixed)
    with pytest.raises(ValueError, match="bad feature pair"):
        decision_surface(dt, (0, 7), fixed)


def test_surface_csv_round_trips(tmp_path, iris_models, iris_splits):
    train, _ = iris_splits
    xs, ys, grid = decision_surface(iris_models[0], (0, 1),
                                    train.features.mean(axis=0),
                                    grid_resolution=6)
    out = tmp_path / "surface.csv"
    surface_to_csv(xs, ys, grid, out)
    with out.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "y", "class_0", "class_1", "class_2"]
    assert len(rows) == 1 + 36
    back = np.asarray([[float(v) for v in r] for r in rows[1:]])
    assert np.array_equal(back[:, 2:].reshape(6, 6, 3), grid)
    assert np.array_equal(back[:, 0].reshape(6, 6), np.repeat(xs, 6).reshape(6, 6))
