"""Dataset loading, normalization, and deterministic stratified splitting.

Three carriers are supported: small tabular CSVs vendored with the package
(iris, wdbc), and MNIST in IDX format from a data directory. Tabular features
are normalized per-feature onto [-1, 1] using ranges recorded from the
training split; pixels are divided by 255 onto [0, 1].
"""

from __future__ import annotations

import csv
import gzip
import math
import os
import struct
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

# input voltages are physically bounded, so normalized tabular values are
# clamped to this window no matter what the raw test value was
TABULAR_RANGE = (-1.0, 1.0)


@dataclass(frozen=True)
class Dataset:
    name: str
    features: np.ndarray          # (n_samples, n_features) float64
    labels: np.ndarray            # (n_samples,) int64, contiguous from 0
    feature_names: tuple[str, ...]
    label_names: tuple[str, ...] = ()
    # per-feature (min, max) recorded at normalization time, None when raw
    feature_range: np.ndarray | None = None
    warnings: tuple[str, ...] = ()

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


def load_csv(path, label_column: str) -> Dataset:
    """Load a headered CSV with numeric feature columns and one label column.

    Labels may be integers or strings; strings are mapped to contiguous class
    indices in sorted order. Row order is preserved as read.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such dataset file: {path}")
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header:
            raise ValueError(f"{path}: empty file")
        if label_column not in header:
            raise ValueError(f"{path}: no column named {label_column!r}")
        label_idx = header.index(label_column)
        feat_names = [h for i, h in enumerate(header) if i != label_idx]
        rows, raw_labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            vals = []
            for i, cell in enumerate(row):
                if i == label_idx:
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}:{lineno}: non-numeric value {cell!r} "
                        f"in feature column {header[i]!r}") from None
            rows.append(vals)
            raw_labels.append(row[label_idx])
    features = np.asarray(rows, dtype=np.float64)

    # integer labels are taken as-is if already contiguous from 0,
    # anything else is treated as categorical
    try:
        as_int = np.asarray([int(s) for s in raw_labels], dtype=np.int64)
        uniq = np.unique(as_int)
        if uniq[0] == 0 and np.array_equal(uniq, np.arange(len(uniq))):
            return Dataset(path.stem, features, as_int, tuple(feat_names),
                           tuple(str(u) for u in uniq))
    except ValueError:
        pass
    classes = sorted(set(raw_labels))
    lut = {c: i for i, c in enumerate(classes)}
    labels = np.asarray([lut[s] for s in raw_labels], dtype=np.int64)
    return Dataset(path.stem, features, labels, tuple(feat_names), tuple(classes))


def _read_idx(path) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(2)
        f.seek(0)
        data = gzip.open(f).read() if head == b"\x1f\x8b" else f.read()
    if len(data) < 4:
        raise ValueError(f"{path}: truncated IDX header")
    magic, = struct.unpack(">I", data[:4])
    if magic == 0x803:
        ndim = 3
    elif magic == 0x801:
        ndim = 1
    else:
        raise ValueError(f"{path}: bad IDX magic 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", data[4:4 + 4 * ndim])
    count = math.prod(dims)
    payload = data[4 + 4 * ndim:]
    if len(payload) != count:
        raise ValueError(f"{path}: expected {count} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label pair (plain or gzipped) as raw 0-255 pixels."""
    images = _read_idx(images_path)
    labels = _read_idx(labels_path)
    if images.ndim != 3:
        raise ValueError(f"{images_path}: not an image file")
    if labels.ndim != 1:
        raise ValueError(f"{labels_path}: not a label file")
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"image/label count mismatch: {images.shape[0]} vs {labels.shape[0]}")
    n, h, w = images.shape
    names = tuple(f"px{r}_{c}" for r in range(h) for c in range(w))
    return Dataset(Path(str(images_path)).stem.split("-")[0],
                   images.reshape(n, h * w).astype(np.float64),
                   labels.astype(np.int64), names,
                   tuple(str(d) for d in range(10)))


def normalize(ds: Dataset, mode: str = "tabular",
              feature_range: np.ndarray | None = None) -> Dataset:
    """Normalize features in place of the raw values.

    tabular: affine map of the recorded (or freshly computed) per-feature
    min/max onto [-1, 1], clamped; pixel: divide by 255. Degenerate features
    (min == max) map to constant 0 and are listed in the result's warnings.
    """
    if mode == "pixel":
        if ds.features.min() < 0 or ds.features.max() > 255:
            raise ValueError("pixel mode expects raw values in [0, 255]")
        rng = np.tile(np.array([0.0, 255.0]), (ds.n_features, 1))
        return replace(ds, features=ds.features / 255.0, feature_range=rng)
    if mode != "tabular":
        raise ValueError(f"unknown normalization mode {mode!r}")

    if feature_range is None:
        lo = ds.features.min(axis=0)
        hi = ds.features.max(axis=0)
    else:
        feature_range = np.asarray(feature_range, dtype=np.float64)
        lo, hi = feature_range[:, 0], feature_range[:, 1]
    span = hi - lo
    degenerate = span <= 0
    warn = tuple(f"feature {ds.feature_names[i]!r} has degenerate range, "
                 "mapped to constant 0" for i in np.flatnonzero(degenerate))
    safe = np.where(degenerate, 1.0, span)
    scaled = (ds.features - lo) / safe * 2.0 - 1.0
    scaled[:, degenerate] = 0.0
    np.clip(scaled, TABULAR_RANGE[0], TABULAR_RANGE[1], out=scaled)
    return replace(ds, features=scaled, feature_range=np.c_[lo, hi],
                   warnings=ds.warnings + warn)


def denormalize(ds: Dataset) -> Dataset:
    """Invert normalize() using the stored feature_range."""
    if ds.feature_range is None:
        raise ValueError("dataset has no recorded feature_range")
    lo, hi = ds.feature_range[:, 0], ds.feature_range[:, 1]
    if np.allclose(lo, 0.0) and np.allclose(hi, 255.0):
        return replace(ds, features=ds.features * 255.0, feature_range=None)
    raw = (ds.features + 1.0) / 2.0 * (hi - lo) + lo
    raw[:, hi <= lo] = lo[hi <= lo]
    return replace(ds, features=raw, feature_range=None)


def split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic class-stratified split.

    The test set gets ceil(n * test_fraction) samples, allocated per class by
    largest remainder so small classes are never starved. Row order within
    each side follows the original dataset order.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    counts = ds.class_counts()
    if (counts < 2).any():
        tiny = int(np.argmin(counts))
        raise ValueError(f"class {tiny} has fewer than 2 samples")
    n_test = math.ceil(ds.n_samples * test_fraction)
    quota = counts * n_test / ds.n_samples
    base = np.floor(quota).astype(int)
    rem = quota - base
    short = n_test - base.sum()
    # hand out the leftovers to the largest remainders, lowest class first on ties
    order = np.lexsort((np.arange(len(counts)), -rem))
    base[order[:short]] += 1

    rng = np.random.default_rng(seed)
    test_mask = np.zeros(ds.n_samples, dtype=bool)
    for c, n_c in enumerate(base):
        idx = np.flatnonzero(ds.labels == c)
        test_mask[rng.permutation(idx)[:n_c]] = True

    def subset(mask, tag):
        return replace(ds, name=f"{ds.name}-{tag}",
                       features=ds.features[mask], labels=ds.labels[mask])

    return subset(~test_mask, "train"), subset(test_mask, "test")


def _package_csv(name: str) -> Path:
    return resources.files("camforest.data") / f"{name}.csv"


def load_iris() -> Dataset:
    return load_csv(_package_csv("iris"), label_column="species")


def load_wdbc() -> Dataset:
    return load_csv(_package_csv("wdbc"), label_column="diagnosis")


def data_dir(override=None) -> Path:
    """Dataset root: explicit argument, else $CAMFOREST_DATA_DIR, else ./data."""
    if override is not None:
        return Path(override)
    return Path(os.environ.get("CAMFOREST_DATA_DIR", "data"))


def load_mnist(root=None, part: str = "train") -> Dataset:
    """Load the MNIST IDX pair for `part` ('train' or 'test') from the data dir."""
    d = data_dir(root) / "mnist"
    prefix = {"train": "train", "test": "t10k"}[part]
    def find(kind, ndim):
        for suffix in (f"{kind}-idx{ndim}-ubyte.gz", f"{kind}-idx{ndim}-ubyte"):
            p = d / f"{prefix}-{suffix}"
            if p.exists():
                return p
        raise FileNotFoundError(f"no {prefix} {kind} IDX file under {d}")
    ds = load_idx(find("images", 3), find("labels", 1))
    return replace(ds, name=f"mnist-{part}")


def prepared(name: str, test_fraction: float = 0.25, seed: int = 0,
             root=None) -> tuple[Dataset, Dataset]:
    """Load, split, and normalize one of the named benchmarks.

    Tabular sets are split here (stratified, seeded) and normalized with the
    training split's ranges; MNIST uses its own fixed train/test files.
    """
    if name == "iris":
        train, test = split(load_iris(), test_fraction, seed)
    elif name == "wdbc":
        train, test = split(load_wdbc(), test_fraction, seed)
    elif name == "mnist":
        train, test = load_mnist(root, "train"), load_mnist(root, "test")
        return normalize(train, "pixel"), normalize(test, "pixel")
    else:
        raise ValueError(f"unknown dataset {name!r}")
    train = normalize(train, "tabular")
    test = normalize(test, "tabular", feature_range=train.feature_range)
    return train, test
