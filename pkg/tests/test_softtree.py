"""Sigmoid path model: row evaluation, extraction, gradient training."""

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camforest import (BehaviorParams, Condition, Path, SoftTree, accuracy_sdt,
                       harden, init_sdt, init_srf, loss_sdt, node_prob,
                       path_probs, predict_dt_classes, predict_sdt,
                       predict_sdt_classes, row_prob, sdt_gradient, train_dt,
                       train_rf, train_sdt, train_sdt_staged, train_srf)
from camforest.softtree import (HARD_GAIN, forest_class_scores,
                                predict_srf_classes, sdt_from_dict,
                                sdt_to_dict, srf_from_dict, srf_to_dict)
from camforest.datasets import Dataset


def _sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def test_node_prob_directions():
    # lt matches below the threshold, gt above; both sigmoid in the gap
    assert node_prob(Condition(0, "lt", 0.5), 0.0, k=4.0) == \
        pytest.approx(0.8807970779778823, rel=1e-15)
    assert node_prob(Condition(0, "gt", -0.5), 0.0, k=4.0) == \
        pytest.approx(0.8807970779778823, rel=1e-15)
    assert node_prob(Condition(0, "lt", 0.0), 0.0, k=7.0) == 0.5


def test_node_prob_wildcard_and_bad_op():
    assert node_prob("wildcard", 0.3, k=5.0) == 1.0
    assert node_prob(Condition(0, "wildcard", 0.0), 0.3, k=5.0) == 1.0
    with pytest.raises(ValueError, match="unknown condition op"):
        node_prob(Condition(0, "le", 0.0), 0.3, k=5.0)


def test_row_prob_blends_product_and_sum():
    beh = BehaviorParams(a=0.7, b=0.2, k=3.0, v_ml_t0=0.9)
    path = Path((Condition(0, "lt", 0.4), Condition(1, "gt", -0.1)), label=0)
    x = np.array([0.1, 0.3])
    p1 = _sigmoid(3.0 * (0.4 - 0.1))
    p2 = _sigmoid(3.0 * (0.3 - -0.1))
    want = 0.7 * p1 * p2 + 0.2 * (p1 + p2) - 0.2 * 1 * 0.9
    assert row_prob(path, x, beh) == pytest.approx(want, rel=1e-15)


def test_row_prob_empty_path_holds_precharge():
    assert row_prob(Path((), label=0), np.array([0.0]), BehaviorParams()) == 1.0


def test_row_prob_clamps_to_unit_interval():
    # b term alone can push the raw value past the rails on both sides
    beh = BehaviorParams(a=1.0, b=3.0, k=5.0, v_ml_t0=0.7)
    path = Path((Condition(0, "lt", 0.9), Condition(1, "lt", 0.9)), label=0)
    deep_match = np.array([-0.9, -0.9])      # raw ~ 1 + 6 - 2.1 > 1
    deep_miss = np.array([2.0, 2.0])         # raw ~ 0 + 0 - 2.1 < 0
    assert row_prob(path, deep_match, beh) == 1.0
    assert row_prob(path, deep_miss, beh) == 0.0


def _hand_tree(a=0.8, b=0.1, k=4.0):
    paths = (
        Path((Condition(0, "lt", 0.1), Condition(1, "lt", -0.2)), 0),
        Path((Condition(0, "lt", 0.1), Condition(1, "gt", -0.2)), 1),
        Path((Condition(0, "gt", 0.1), Condition(2, "lt", 0.3)), 2),
        Path((Condition(0, "gt", 0.1), Condition(2, "gt", 0.3)), 0),
    )
    return SoftTree(paths, n_features=3, n_classes=3,
                    behavior=BehaviorParams(a=a, b=b, k=k), root_feature=0)


def test_path_probs_matches_scalar_reference(rng):
    tree = _hand_tree(a=0.9, b=0.05, k=6.0)
    X = rng.uniform(-1, 1, (25, 3))
    got = path_probs(tree, X)
    for i in range(len(X)):
        for j, path in enumerate(tree.paths):
            assert got[i, j] == pytest.approx(
                row_prob(path, X[i], tree.behavior), abs=1e-12)


def test_predict_sdt_takes_best_path_label(rng):
    tree = _hand_tree()
    X = rng.uniform(-1, 1, (10, 3))
    for x in X:
        label, probs = predict_sdt(tree, x)
        assert label == tree.paths[int(np.argmax(probs))].label
    np.testing.assert_array_equal(
        predict_sdt_classes(tree, X),
        [predict_sdt(tree, x)[0] for x in X])


def test_argmax_tie_takes_lowest_path_index():
    paths = (Path((Condition(0, "lt", 0.0),), 2),
             Path((Condition(0, "lt", 0.0),), 1))
    tree = SoftTree(paths, 1, 3)
    label, probs = predict_sdt(tree, np.array([-0.4]))
    assert probs[0] == probs[1]
    assert label == 2


def test_init_sdt_structure(iris_splits):
    tr, _ = iris_splits
    dt = train_dt(tr, max_depth=3)
    sdt = init_sdt(dt)
    assert sdt.n_paths == dt.n_leaves
    assert sdt.root_feature == dt.root_feature
    assert sdt.n_classes == dt.n_classes
    for p in sdt.paths:
        assert 1 <= len(p.conditions) <= 3
        assert len(p.dist) == dt.n_classes


def test_init_sdt_merges_repeated_bounds():
    # two lt splits on the same feature keep only the tighter one
    from camforest.softtree import _canonical
    conds = _canonical([(0, "lt", 0.8), (1, "gt", 0.0), (0, "lt", 0.3)])
    assert conds == (Condition(0, "lt", 0.3), Condition(1, "gt", 0.0))
    conds = _canonical([(0, "gt", -0.5), (0, "gt", 0.2)])
    assert conds == (Condition(0, "gt", 0.2),)


def test_hardened_sdt_equals_dt_off_threshold(iris_splits, rng):
    tr, te = iris_splits
    dt = train_dt(tr, max_depth=4)
    hard = harden(init_sdt(dt))
    assert hard.behavior.k == HARD_GAIN
    thr = dt.threshold[np.isfinite(dt.threshold)]
    X = rng.uniform(-1, 1, (300, tr.n_features))
    clear = np.abs(X[:, :, None] - thr[None, None, :]).min(axis=(1, 2)) > 1e-3
    np.testing.assert_array_equal(
        predict_sdt_classes(hard, X[clear]),
        predict_dt_classes(dt, X[clear]))


def _perturbed(tree, flat_index, h):
    new_paths, i = [], 0
    for path in tree.paths:
        conds = []
        for c in path.conditions:
            t = c.threshold + (h if i == flat_index else 0.0)
            conds.append(dataclasses.replace(c, threshold=t))
            i += 1
        new_paths.append(dataclasses.replace(path, conditions=tuple(conds)))
    return dataclasses.replace(tree, paths=tuple(new_paths))


def test_gradient_matches_finite_differences(rng):
    tree = _hand_tree(a=0.8, b=0.1, k=4.0)
    rng = np.random.default_rng(7)
    X = rng.uniform(-1, 1, (40, 3))
    y = rng.integers(0, 3, 40)
    loss, grad = sdt_gradient(tree, X, y, beta=3.0)
    assert loss == pytest.approx(loss_sdt(tree, X, y, beta=3.0), rel=1e-12)
    h = 1e-6
    for i in range(len(grad)):
        fd = (loss_sdt(_perturbed(tree, i, h), X, y, beta=3.0)
              - loss_sdt(_perturbed(tree, i, -h), X, y, beta=3.0)) / (2 * h)
        assert grad[i] == pytest.approx(fd, rel=1e-4, abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.5, 0.99), st.floats(0.0, 0.3),
       st.floats(2.0, 30.0))
def test_gradient_matches_finite_differences_random(seed, a, b, k):
    rng = np.random.default_rng(seed)
    tree = _hand_tree(a=a, b=b, k=k)
    X = rng.uniform(-1, 1, (12, 3))
    y = rng.integers(0, 3, 12)
    _, grad = sdt_gradient(tree, X, y, beta=5.0)
    h = 1e-6
    for i in rng.choice(len(grad), 3, replace=False):
        fd = (loss_sdt(_perturbed(tree, int(i), h), X, y, beta=5.0)
              - loss_sdt(_perturbed(tree, int(i), -h), X, y, beta=5.0)) / (2 * h)
        assert grad[i] == pytest.approx(fd, rel=2e-3, abs=2e-7)


def test_training_reduces_loss_and_stays_bounded(wdbc_splits):
    tr, _ = wdbc_splits
    sdt = init_sdt(train_dt(tr, max_depth=3))
    before = loss_sdt(sdt, tr.features, tr.labels)
    out = train_sdt(sdt, tr, epochs=20, learning_rate=0.05, seed=0)
    after = loss_sdt(out, tr.features, tr.labels)
    assert after < before
    for p in out.paths:
        for c in p.conditions:
            assert -1.0 <= c.threshold <= 1.0


def test_training_is_deterministic(wdbc_splits):
    tr, _ = wdbc_splits
    sdt = init_sdt(train_dt(tr, max_depth=3))
    o1 = train_sdt(sdt, tr, epochs=3, seed=5)
    o2 = train_sdt(sdt, tr, epochs=3, seed=5)
    assert sdt_to_dict(o1) == sdt_to_dict(o2)
    o3 = train_sdt(sdt, tr, epochs=3, seed=6)
    assert sdt_to_dict(o1) != sdt_to_dict(o3)


def test_training_preserves_structure(wdbc_splits):
    tr, _ = wdbc_splits
    sdt = init_sdt(train_dt(tr, max_depth=3))
    out = train_sdt(sdt, tr, epochs=2, seed=0)
    assert [p.label for p in out.paths] == [p.label for p in sdt.paths]
    assert [(c.feature, c.op) for p in out.paths for c in p.conditions] == \
        [(c.feature, c.op) for p in sdt.paths for c in p.conditions]
    assert out.behavior == sdt.behavior


def test_staged_training_restores_gain_and_helps(wdbc_splits):
    tr, _ = wdbc_splits
    sdt = init_sdt(train_dt(tr, max_depth=3))
    out = train_sdt_staged(sdt, tr, ((5.0, 5.0, 3), (20.0, 10.0, 5)), seed=0)
    assert out.behavior == sdt.behavior
    assert [(c.feature, c.op) for p in out.paths for c in p.conditions] == \
        [(c.feature, c.op) for p in sdt.paths for c in p.conditions]
    assert loss_sdt(out, tr.features, tr.labels) < \
        loss_sdt(sdt, tr.features, tr.labels)


def test_staged_training_is_deterministic(wdbc_splits):
    tr, _ = wdbc_splits
    sdt = init_sdt(train_dt(tr, max_depth=2))
    stages = ((5.0, 5.0, 2), (20.0, 10.0, 2))
    o1 = train_sdt_staged(sdt, tr, stages, seed=1)
    o2 = train_sdt_staged(sdt, tr, stages, seed=1)
    assert sdt_to_dict(o1) == sdt_to_dict(o2)
    assert sdt_to_dict(o1) != sdt_to_dict(train_sdt_staged(sdt, tr, stages,
                                                           seed=2))


def test_staged_training_with_no_stages_is_identity(wdbc_splits):
    tr, _ = wdbc_splits
    sdt = init_sdt(train_dt(tr, max_depth=2))
    assert sdt_to_dict(train_sdt_staged(sdt, tr, ())) == sdt_to_dict(sdt)


def test_shared_nodes_decouple_during_training(wdbc_splits):
    # the same hard-tree split lands in several paths; training may move
    # each copy independently
    tr, _ = wdbc_splits
    sdt = init_sdt(train_dt(tr, max_depth=3))
    out = train_sdt(sdt, tr, epochs=30, learning_rate=0.05, seed=0)
    seen, decoupled = {}, False
    start = {}
    for p, p0 in zip(out.paths, sdt.paths):
        for c, c0 in zip(p.conditions, p0.conditions):
            key = (c.feature, c.op, round(c0.threshold, 12))
            if key in seen and abs(seen[key] - c.threshold) > 1e-9:
                decoupled = True
            seen.setdefault(key, c.threshold)
    assert decoupled


def test_zero_epochs_is_identity(wdbc_splits):
    tr, _ = wdbc_splits
    sdt = init_sdt(train_dt(tr, max_depth=2))
    assert sdt_to_dict(train_sdt(sdt, tr, epochs=0)) == sdt_to_dict(sdt)
    with pytest.raises(ValueError):
        train_sdt(sdt, tr, epochs=-1)


def test_untrainable_conditions_stay_fixed(wdbc_splits):
    tr, _ = wdbc_splits
    sdt = init_sdt(train_dt(tr, max_depth=2))
    frozen_paths = tuple(
        dataclasses.replace(
            p, conditions=tuple(dataclasses.replace(c, trainable=False)
                                for c in p.conditions))
        for p in sdt.paths)
    frozen = dataclasses.replace(sdt, paths=frozen_paths)
    out = train_sdt(frozen, tr, epochs=3, seed=0)
    assert [c.threshold for p in out.paths for c in p.conditions] == \
        [c.threshold for p in sdt.paths for c in p.conditions]


def test_sdt_dict_round_trip(iris_splits, rng):
    tr, te = iris_splits
    sdt = train_sdt(init_sdt(train_dt(tr, max_depth=3)), tr, epochs=2)
    back = sdt_from_dict(sdt_to_dict(sdt))
    assert back == sdt
    np.testing.assert_array_equal(predict_sdt_classes(back, te.features),
                                  predict_sdt_classes(sdt, te.features))


def test_srf_round_trip_and_scores(iris_splits):
    tr, te = iris_splits
    srf = init_srf(train_rf(tr, n_trees=3, max_depth=3, seed=0))
    back = srf_from_dict(srf_to_dict(srf))
    assert back == srf
    scores = forest_class_scores(srf, te.features)
    assert scores.shape == (te.n_samples, 3)
    np.testing.assert_array_equal(predict_srf_classes(srf, te.features),
                                  scores.argmax(axis=1))


def test_srf_training_improves_or_holds_accuracy(iris_splits):
    tr, te = iris_splits
    srf = init_srf(train_rf(tr, n_trees=5, max_depth=3, seed=1))
    out = train_srf(srf, tr, epochs=10, seed=0)
    assert len(out.trees) == 5
    from camforest import accuracy_srf
    assert accuracy_srf(out, te) >= accuracy_srf(srf, te) - 0.05


def test_mean_pooling_differs_from_max(iris_splits):
    tr, te = iris_splits
    forest = train_rf(tr, n_trees=3, max_depth=3, seed=0)
    mx = forest_class_scores(init_srf(forest, pooling="max"), te.features)
    mn = forest_class_scores(init_srf(forest, pooling="mean"), te.features)
    assert (mx >= mn - 1e-12).all()
    assert not np.allclose(mx, mn)


def test_behavior_params_validate():
    with pytest.raises(ValueError):
        BehaviorParams(k=0.0)
    with pytest.raises(ValueError):
        BehaviorParams(k=-3.0)
