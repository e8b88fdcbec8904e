"""Soft tree -> threshold array compilation and its inverse."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camforest import (BehaviorParams, Condition, Path, SoftTree,
                       apply_programming_error, init_sdt, load_array, map_sdt,
                       path_probs, train_dt, unmap)
from camforest.cammap import WILDCARD_EXPORT, save_array


def _tree():
    paths = (
        Path((Condition(0, "lt", 0.2), Condition(2, "gt", -0.4)), 1),
        Path((Condition(0, "gt", 0.2),), 0),
        Path((Condition(2, "lt", 0.1), Condition(2, "gt", -0.9),
              Condition(5, "lt", 0.7)), 2),
    )
    return SoftTree(paths, n_features=6, n_classes=3, root_feature=0)


def test_map_layout_and_devices():
    arr = map_sdt(_tree())
    assert arr.n_rows == 3
    # columns appear in order of first use: f0, f2, f5
    assert arr.col_to_feature.tolist() == [0, 2, 5]
    # lt lands on the left device verbatim
    assert arr.vth_left[0, 0] == 0.2 and not arr.wild_left[0, 0]
    # gt lands negated on the right device (inverter)
    assert arr.vth_right[0, 1] == pytest.approx(0.4)
    assert not arr.wild_right[0, 1]
    # untouched sides are wildcards at the export voltage
    assert arr.wild_right[0, 0] and arr.vth_right[0, 0] == WILDCARD_EXPORT
    assert arr.wild_left[1, 1] and arr.wild_left[1, 2]
    assert arr.condition_count() == 6
    assert arr.path_labels.tolist() == [1, 0, 2]
    assert arr.root_feature == 0


def test_both_bounds_share_one_cell():
    arr = map_sdt(_tree())
    # row 2 constrains f2 from both sides in a single column
    j = arr.col_to_feature.tolist().index(2)
    assert not arr.wild_left[2, j] and not arr.wild_right[2, j]
    assert arr.vth_left[2, j] == pytest.approx(0.1)
    assert arr.vth_right[2, j] == pytest.approx(0.9)


def test_map_rejects_out_of_range_threshold():
    bad = SoftTree((Path((Condition(0, "lt", 1.5),), 0),), 1, 1)
    with pytest.raises(ValueError, match="outside programmable range"):
        map_sdt(bad)


def test_unmap_inverts_map():
    tree = _tree()
    back = unmap(map_sdt(tree))
    assert back.n_classes == tree.n_classes
    assert back.root_feature == tree.root_feature
    for p, q in zip(tree.paths, back.paths):
        assert p.label == q.label
        assert sorted((c.feature, c.op, round(c.threshold, 12))
                      for c in p.conditions) == \
            sorted((c.feature, c.op, round(c.threshold, 12))
                   for c in q.conditions)


def test_unmap_preserves_row_semantics(iris_splits, rng):
    tr, _ = iris_splits
    sdt = init_sdt(train_dt(tr, max_depth=4))
    back = unmap(map_sdt(sdt), sdt.behavior)
    X = rng.uniform(-1, 1, (50, tr.n_features))
    np.testing.assert_allclose(path_probs(back, X), path_probs(sdt, X),
                               rtol=0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4),
                          st.sampled_from(["lt", "gt"]),
                          st.floats(-1.0, 1.0, allow_nan=False)),
                min_size=1, max_size=6, unique_by=lambda c: (c[0], c[1])))
def test_map_unmap_round_trip_property(conds):
    tree = SoftTree((Path(tuple(Condition(*c) for c in conds), 0),), 5, 1)
    back = unmap(map_sdt(tree))
    want = sorted((c.feature, c.op, c.threshold) for c in tree.paths[0].conditions)
    got = sorted((c.feature, c.op, c.threshold) for c in back.paths[0].conditions)
    assert got == pytest.approx(want)


def test_programming_error_bounded_and_seeded():
    arr = map_sdt(_tree())
    noisy = apply_programming_error(arr, 0.05, seed=3)
    again = apply_programming_error(arr, 0.05, seed=3)
    other = apply_programming_error(arr, 0.05, seed=4)
    np.testing.assert_array_equal(noisy.vth_left, again.vth_left)
    assert not np.array_equal(noisy.vth_left, other.vth_left)
    moved_l = ~arr.wild_left
    assert (np.abs(noisy.vth_left - arr.vth_left)[moved_l] <= 0.05).all()
    assert (np.abs(noisy.vth_left - arr.vth_left)[moved_l] > 0).all()
    # wildcards never move
    np.testing.assert_array_equal(noisy.vth_left[arr.wild_left],
                                  arr.vth_left[arr.wild_left])
    np.testing.assert_array_equal(noisy.vth_right[arr.wild_right],
                                  arr.vth_right[arr.wild_right])


def test_programming_error_zero_is_identity():
    arr = map_sdt(_tree())
    noisy = apply_programming_error(arr, 0.0, seed=0)
    np.testing.assert_array_equal(noisy.vth_left, arr.vth_left)
    with pytest.raises(ValueError):
        apply_programming_error(arr, -0.1)


def test_array_file_round_trip(tmp_path):
    arr = apply_programming_error(map_sdt(_tree()), 0.02, seed=1)
    save_array(arr, tmp_path / "a.csv")
    back = load_array(tmp_path / "a.csv")
    np.testing.assert_array_equal(back.vth_left, arr.vth_left)
    np.testing.assert_array_equal(back.vth_right, arr.vth_right)
    np.testing.assert_array_equal(back.wild_left, arr.wild_left)
    np.testing.assert_array_equal(back.wild_right, arr.wild_right)
    np.testing.assert_array_equal(back.col_to_feature, arr.col_to_feature)
    np.testing.assert_array_equal(back.path_labels, arr.path_labels)
    assert back.n_features == arr.n_features
    assert back.root_feature == arr.root_feature


def test_load_array_rejects_foreign_sidecar(tmp_path):
    arr = map_sdt(_tree())
    save_array(arr, tmp_path / "a.csv")
    side = tmp_path / "a.csv.json"
    side.write_text(side.read_text().replace("camforest-array-v1", "other"))
    with pytest.raises(ValueError, match="sidecar"):
        load_array(tmp_path / "a.csv")
