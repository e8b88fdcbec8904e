"""Behavioral CAM inference: variation injection, row evaluation, WTA, Monte Carlo.

Rows are evaluated with the same product/sum blend as softtree.row_prob. The
left device sees the input directly, the right device sees it inverted, so a
side probability is sigma(k * (vth_side - u_side)) with u_left = x and
u_right = -x; wildcard sides contribute exactly 1. Readout is an ideal
winner-take-all: argmax over row voltages, lowest index on ties.

Evaluation is sparse: only non-wildcard sides are materialized, in ascending
column order (left before right within a cell). The arch module relies on
this canonical order for its exact tiled-equals-untiled equivalence.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .cammap import CamArray
from .datasets import Dataset
from .softtree import BehaviorParams


@dataclass(frozen=True)
class VariationModel:
    kind: str = "uniform"     # "uniform" (half-range) | "gaussian" (sigma)
    magnitude: float = 0.0    # volts
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian"):
            raise ValueError(f"unknown variation kind {self.kind!r}")
        if self.magnitude < 0:
            raise ValueError("magnitude must be >= 0")


@dataclass(frozen=True)
class InferenceResult:
    ml_values: np.ndarray     # per-row match probability, [0, 1]
    winner: int               # argmax row, lowest index on ties
    predicted_class: int


@dataclass(frozen=True)
class ExperimentReport:
    """Per-trial accuracies plus normal-approximation summary statistics."""
    label: str
    kind: str                 # noise kind or protocol name
    magnitude: float
    trials: int
    accuracies: tuple
    mean: float
    std: float
    ci_lo: float
    ci_hi: float

    @classmethod
    def from_accuracies(cls, label, kind, magnitude, accs):
        accs = tuple(float(a) for a in accs)
        mean = float(np.mean(accs))
        std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
        half = 1.96 * std / np.sqrt(len(accs))
        return cls(label, kind, magnitude, len(accs), accs,
                   mean, std, mean - half, mean + half)


def inject_variation(arr: CamArray, vm: VariationModel,
                     rng: np.random.Generator | None = None) -> CamArray:
    """Fresh iid threshold perturbation on every non-wildcard side.

    Draw order is fixed (left grid, then right grid) so results replay from
    the seed; pass an explicit generator to chain draws across trials.
    """
    if rng is None:
        rng = np.random.default_rng(vm.seed)
    if vm.magnitude == 0.0:
        return arr
    shape = arr.vth_left.shape
    if vm.kind == "uniform":
        eps_l = rng.uniform(-vm.magnitude, vm.magnitude, shape)
        eps_r = rng.uniform(-vm.magnitude, vm.magnitude, shape)
    else:
        eps_l = rng.normal(0.0, vm.magnitude, shape)
        eps_r = rng.normal(0.0, vm.magnitude, shape)
    return replace(arr,
                   vth_left=np.where(arr.wild_left, arr.vth_left,
                                     arr.vth_left + eps_l),
                   vth_right=np.where(arr.wild_right, arr.vth_right,
                                      arr.vth_right + eps_r))


# -- sparse row evaluation ----------------------------------------------------

@dataclass
class _SparseRows:
    feature: np.ndarray       # (K,) input column per device
    sign: np.ndarray          # (K,) +1 right side (inverted input), -1 left
    vth: np.ndarray           # (K,)
    starts: np.ndarray        # reduceat starts for rows with >= 1 device
    nonempty: np.ndarray      # row indices with >= 1 device
    n_conds: np.ndarray       # (n_rows,)
    n_rows: int


def _compile_array(arr: CamArray) -> _SparseRows:
    # canonical device order: row-major, ascending column, left before right;
    # realized by flattening an (rows, cols, side) cube in C order
    used = np.stack([~arr.wild_left, ~arr.wild_right], axis=2)
    mask = used.reshape(-1)
    feat_cube = np.broadcast_to(arr.col_to_feature[None, :, None], used.shape)
    sign_cube = np.broadcast_to(np.array([-1.0, 1.0]), used.shape)
    vth_cube = np.stack([arr.vth_left, arr.vth_right], axis=2)
    n_conds = used.sum(axis=(1, 2)).astype(np.int64)
    offsets = np.concatenate([[0], np.cumsum(n_conds)])
    nonempty = np.flatnonzero(n_conds > 0)
    return _SparseRows(feat_cube.reshape(-1)[mask], sign_cube.reshape(-1)[mask],
                       vth_cube.reshape(-1)[mask], offsets[:-1][nonempty],
                       nonempty, n_conds, arr.n_rows)


def _ml_values(sp: _SparseRows, X: np.ndarray, behavior: BehaviorParams,
               chunk: int = 512) -> np.ndarray:
    """Row probabilities for a sample batch, (n_samples, n_rows)."""
    a, b, k, v0 = behavior.a, behavior.b, behavior.k, behavior.v_ml_t0
    out = np.ones((len(X), sp.n_rows))
    if len(sp.feature) == 0:
        return out
    ncond = sp.n_conds[sp.nonempty]
    for s in range(0, len(X), chunk):
        Xc = X[s:s + chunk]
        # u_left = x, u_right = -x; p = sigma(k (vth - u)) = sigma(k (vth + sign x))
        p = expit(k * (sp.vth[None, :] + sp.sign[None, :] * Xc[:, sp.feature]))
        prod = np.multiply.reduceat(p, sp.starts, axis=1)
        ssum = np.add.reduceat(p, sp.starts, axis=1)
        pre = a * prod + b * ssum - b * (ncond - 1) * v0
        out[s:s + chunk, sp.nonempty] = np.clip(pre, 0.0, 1.0)
    return out


def ml_values(arr: CamArray, X: np.ndarray,
              behavior: BehaviorParams) -> np.ndarray:
    """Match-line probabilities for a batch, (n_samples, n_rows)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != arr.n_features:
        raise ValueError(
            f"sample has {X.shape[1]} features, array maps {arr.n_features}")
    return _ml_values(_compile_array(arr), X, behavior)


def infer(arr: CamArray, sample: np.ndarray,
          behavior: BehaviorParams) -> InferenceResult:
    """Evaluate every row on one sample and take the winner row."""
    ml = ml_values(arr, sample, behavior)[0]
    winner = int(np.argmax(ml))
    return InferenceResult(ml, winner, int(arr.path_labels[winner]))


def infer_classes(arr: CamArray, X: np.ndarray,
                  behavior: BehaviorParams) -> np.ndarray:
    ml = ml_values(arr, X, behavior)
    return arr.path_labels[np.argmax(ml, axis=1)]


def accuracy(arr: CamArray, ds: Dataset, behavior: BehaviorParams) -> float:
    return float(np.mean(infer_classes(arr, ds.features, behavior) == ds.labels))


def forest_infer_classes(arrays, X: np.ndarray, behavior: BehaviorParams,
                         mode: str = "vote",
                         pooling: str = "max") -> np.ndarray:
    """Joint readout over a list of arrays (one per tree).

    mode "vote": per-array winner label, majority vote, lowest class on ties
    (hard-forest semantics). mode "score": per-class pooled path probability
    summed across arrays, argmax (soft-forest semantics).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n_classes = arrays[0].n_classes
    if mode == "vote":
        votes = np.zeros((len(X), n_classes), dtype=np.int64)
        for arr in arrays:
            pred = infer_classes(arr, X, behavior)
            votes[np.arange(len(X)), pred] += 1
        return np.argmax(votes, axis=1)
    if mode != "score":
        raise ValueError(f"unknown mode {mode!r}")
    scores = np.zeros((len(X), n_classes))
    for arr in arrays:
        ml = ml_values(arr, X, behavior)
        for c in range(n_classes):
            cols = ml[:, arr.path_labels == c]
            if cols.shape[1]:
                scores[:, c] += cols.max(axis=1) if pooling == "max" \
                    else cols.mean(axis=1)
    return np.argmax(scores, axis=1)


# -- Monte Carlo --------------------------------------------------------------

def _trial_rng(vm: VariationModel, trial: int) -> np.random.Generator:
    # independent per-trial stream; stable under parallel execution order
    return np.random.default_rng([vm.seed, trial])


def monte_carlo(arr: CamArray, test: Dataset, vm: VariationModel,
                behavior: BehaviorParams, trials: int,
                label: str = "model", threads: int = 1) -> ExperimentReport:
    """Accuracy under fresh per-trial threshold variation.

    The perturbation is drawn once per trial and held static across the test
    set. Trial t uses generator seed [vm.seed, t], so reports are
    deterministic and independent of scheduling.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")

    def one(t: int) -> float:
        pert = inject_variation(arr, vm, _trial_rng(vm, t))
        return float(np.mean(
            infer_classes(pert, test.features, behavior) == test.labels))

    accs = _run_trials(one, trials, threads)
    return ExperimentReport.from_accuracies(label, vm.kind, vm.magnitude, accs)


def monte_carlo_forest(arrays, test: Dataset, vm: VariationModel,
                       behavior: BehaviorParams, trials: int,
                       mode: str = "vote", pooling: str = "max",
                       label: str = "forest",
                       threads: int = 1) -> ExperimentReport:
    """monte_carlo over a forest; every tree gets a fresh draw each trial."""
    if trials < 1:
        raise ValueError("trials must be >= 1")

    def one(t: int) -> float:
        rng = _trial_rng(vm, t)
        pert = [inject_variation(a, vm, rng) for a in arrays]
        pred = forest_infer_classes(pert, test.features, behavior,
                                    mode=mode, pooling=pooling)
        return float(np.mean(pred == test.labels))

    accs = _run_trials(one, trials, threads)
    return ExperimentReport.from_accuracies(label, vm.kind, vm.magnitude, accs)


def _run_trials(fn, trials: int, threads: int) -> list:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, range(trials)))
    return [fn(t) for t in range(trials)]


# -- report export ------------------------------------------------------------

REPORT_COLUMNS = ("label", "kind", "magnitude", "trials",
                  "mean", "std", "ci_lo", "ci_hi")


def reports_to_csv(reports, path) -> None:
    import csv as _csv
    import pathlib
    with pathlib.Path(path).open("w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow([r.label, r.kind, repr(float(r.magnitude)), r.trials,
                        repr(r.mean), repr(r.std),
                        repr(r.ci_lo), repr(r.ci_hi)])


def reports_to_json(reports) -> list:
    return [{"label": r.label, "kind": r.kind, "magnitude": r.magnitude,
             "trials": r.trials, "accuracies": list(r.accuracies),
             "mean": r.mean, "std": r.std,
             "ci_lo": r.ci_lo, "ci_hi": r.ci_hi} for r in reports]
