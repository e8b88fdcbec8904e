"""Compile soft trees into analog-CAM threshold-voltage arrays.

One row per path, one column per used feature. Each cell has two threshold
FETs: the left device bounds the match range from above (a less-than
condition programs its threshold directly), the right device bounds it from
below and sits behind an analog inverter, so a greater-than condition stores
the negated threshold. A side that should always match is a wildcard,
exported at +2.0 V: with inputs confined to [-1, 1] V the device never turns
on, so the cell contributes probability 1 and zero discharge current.
"""

from __future__ import annotations

import csv
import json
import pathlib
from dataclasses import dataclass, replace

import numpy as np

from .hardtree import LEAF
from .softtree import (DEFAULT_BEHAVIOR, BehaviorParams, Condition, Path,
                       SoftTree, THRESHOLD_RANGE)

WILDCARD_EXPORT = 2.0


@dataclass(frozen=True)
class CamArray:
    """Threshold grid plus the legends needed to read it back.

    vth_* hold programmed volts, (rows, cols); wildcard sides keep the export
    value and the matching wild_* flag. Perturbation helpers touch only
    non-wildcard entries.
    """
    vth_left: np.ndarray
    vth_right: np.ndarray
    wild_left: np.ndarray
    wild_right: np.ndarray
    col_to_feature: np.ndarray     # column -> feature index
    row_to_path: np.ndarray       # row -> source path index
    path_labels: np.ndarray       # row -> class label
    n_features: int
    n_classes: int
    root_feature: int = LEAF

    @property
    def n_rows(self) -> int:
        return self.vth_left.shape[0]

    @property
    def n_cols(self) -> int:
        return self.vth_left.shape[1]

    def condition_count(self) -> int:
        return int((~self.wild_left).sum() + (~self.wild_right).sum())


def map_sdt(tree: SoftTree) -> CamArray:
    """Program a soft tree onto a CAM threshold array.

    Features take columns in order of first use across the path list. A
    less-than threshold lands on the left device; a greater-than threshold is
    negated onto the right device. Both-bounds conditions on one feature share
    a single cell.
    """
    lo, hi = THRESHOLD_RANGE
    cols: dict[int, int] = {}
    for path in tree.paths:
        for c in path.conditions:
            if not lo <= c.threshold <= hi:
                raise ValueError(
                    f"threshold {c.threshold} outside programmable range "
                    f"[{lo}, {hi}] (feature {c.feature})")
            cols.setdefault(c.feature, len(cols))
    rows, ncols = tree.n_paths, len(cols)
    vth_l = np.full((rows, ncols), WILDCARD_EXPORT)
    vth_r = np.full((rows, ncols), WILDCARD_EXPORT)
    wild_l = np.ones((rows, ncols), dtype=bool)
    wild_r = np.ones((rows, ncols), dtype=bool)
    for r, path in enumerate(tree.paths):
        for c in path.conditions:
            j = cols[c.feature]
            if c.op == "lt":
                vth_l[r, j] = c.threshold
                wild_l[r, j] = False
            else:
                vth_r[r, j] = -c.threshold   # inverter on the right device
                wild_r[r, j] = False
    return CamArray(vth_l, vth_r, wild_l, wild_r,
                    np.fromiter(cols, dtype=np.int64, count=ncols),
                    np.arange(rows), np.asarray([p.label for p in tree.paths]),
                    tree.n_features, tree.n_classes, tree.root_feature)


def apply_programming_error(arr: CamArray, max_err: float,
                            seed=0) -> CamArray:
    """Uniform(-max_err, max_err) write error on every non-wildcard threshold.

    Draw order is fixed: the full left grid, then the full right grid, so a
    test can replay the perturbation from the seed.
    """
    if max_err < 0:
        raise ValueError("max_err must be >= 0")
    rng = np.random.default_rng(seed)
    eps_l = rng.uniform(-max_err, max_err, arr.vth_left.shape)
    eps_r = rng.uniform(-max_err, max_err, arr.vth_right.shape)
    return replace(arr,
                   vth_left=np.where(arr.wild_left, arr.vth_left,
                                     arr.vth_left + eps_l),
                   vth_right=np.where(arr.wild_right, arr.vth_right,
                                      arr.vth_right + eps_r))


def unmap(arr: CamArray, behavior: BehaviorParams = DEFAULT_BEHAVIOR) -> SoftTree:
    """Read an array back into a soft tree (conditions in column order)."""
    paths = []
    for r in range(arr.n_rows):
        conds = []
        for j in range(arr.n_cols):
            f = int(arr.col_to_feature[j])
            if not arr.wild_left[r, j]:
                conds.append(Condition(f, "lt", float(arr.vth_left[r, j])))
            if not arr.wild_right[r, j]:
                conds.append(Condition(f, "gt", float(-arr.vth_right[r, j])))
        paths.append(Path(tuple(conds), int(arr.path_labels[r])))
    return SoftTree(tuple(paths), arr.n_features, arr.n_classes, behavior,
                    arr.root_feature)


# -- export -------------------------------------------------------------------

ARRAY_FORMAT = "camforest-array-v1"


def save_array(arr: CamArray, path) -> None:
    """CSV threshold grid (wildcard sides empty) plus a JSON legend sidecar."""
    path = pathlib.Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        header = ["row"]
        for j in range(arr.n_cols):
            f = int(arr.col_to_feature[j])
            header += [f"f{f}_lt", f"f{f}_gt"]
        w.writerow(header)
        for r in range(arr.n_rows):
            rec = [r]
            for j in range(arr.n_cols):
                rec.append("" if arr.wild_left[r, j]
                           else repr(float(arr.vth_left[r, j])))
                rec.append("" if arr.wild_right[r, j]
                           else repr(float(arr.vth_right[r, j])))
            w.writerow(rec)
    sidecar = {"format": ARRAY_FORMAT,
               "col_to_feature": arr.col_to_feature.tolist(),
               "row_to_path": arr.row_to_path.tolist(),
               "path_labels": arr.path_labels.tolist(),
               "n_features": arr.n_features,
               "n_classes": arr.n_classes,
               "root_feature": arr.root_feature,
               "wildcard_export_volts": WILDCARD_EXPORT}
    _sidecar_path(path).write_text(json.dumps(sidecar))


def load_array(path) -> CamArray:
    path = pathlib.Path(path)
    meta = json.loads(_sidecar_path(path).read_text())
    if meta.get("format") != ARRAY_FORMAT:
        raise ValueError(f"not a {ARRAY_FORMAT} sidecar")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    n_rows, n_cols = len(rows), len(meta["col_to_feature"])
    vth_l = np.full((n_rows, n_cols), WILDCARD_EXPORT)
    vth_r = np.full((n_rows, n_cols), WILDCARD_EXPORT)
    wild_l = np.ones((n_rows, n_cols), dtype=bool)
    wild_r = np.ones((n_rows, n_cols), dtype=bool)
    for r, rec in enumerate(rows):
        for j in range(n_cols):
            lt, gt = rec[1 + 2 * j], rec[2 + 2 * j]
            if lt != "":
                vth_l[r, j], wild_l[r, j] = float(lt), False
            if gt != "":
                vth_r[r, j], wild_r[r, j] = float(gt), False
    return CamArray(vth_l, vth_r, wild_l, wild_r,
                    np.asarray(meta["col_to_feature"], dtype=np.int64),
                    np.asarray(meta["row_to_path"], dtype=np.int64),
                    np.asarray(meta["path_labels"], dtype=np.int64),
                    meta["n_features"], meta["n_classes"],
                    meta.get("root_feature", LEAF))


def _sidecar_path(path: pathlib.Path) -> pathlib.Path:
    return path.with_name(path.name + ".json")
