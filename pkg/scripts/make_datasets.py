"""Regenerate the vendored datasets.

Writes:
  src/camforest/data/iris.csv, src/camforest/data/wdbc.csv
      from sklearn's bundled copies of the UCI datasets (sklearn is a
      dev-time dependency of this script only, not of the package)
  data/mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte.gz
      by re-gzipping the four uncompressed IDX files found in a directory,
      e.g. the data/ directory of the npm `mnist-data` tarball
      (`npm pack mnist-data && tar xzf mnist-data-*.tgz`), which ships the
      canonical 60k/10k MNIST corpus

Usage:
  python scripts/make_datasets.py [--mnist-dir DIR]
"""

import argparse
import csv
import gzip
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent

MNIST_FILES = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)


def write_iris(out: Path):
    from sklearn.datasets import load_iris

    d = load_iris()
    names = ["sepal_length", "sepal_width", "petal_length", "petal_width"]
    with open(out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(names + ["species"])
        for row, t in zip(d.data, d.target):
            w.writerow([f"{v:g}" for v in row] + [d.target_names[t]])
    print(f"wrote {out} ({len(d.target)} rows)")


def write_wdbc(out: Path):
    from sklearn.datasets import load_breast_cancer

    d = load_breast_cancer()
    names = [n.replace(" ", "_") for n in d.feature_names]
    with open(out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(names + ["diagnosis"])
        for row, t in zip(d.data, d.target):
            # sklearn target: 0 = malignant, 1 = benign
            w.writerow([repr(float(v)) for v in row] + [d.target_names[t]])
    print(f"wrote {out} ({len(d.target)} rows)")


def write_mnist(mnist_dir: Path, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in MNIST_FILES:
        src = mnist_dir / name
        if not src.exists():
            raise FileNotFoundError(f"missing {src}")
        with gzip.open(out_dir / f"{name}.gz", "wb", compresslevel=9) as f:
            f.write(src.read_bytes())
        print(f"wrote {out_dir / name}.gz")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--mnist-dir", type=Path, default=None,
                    help="directory holding the four uncompressed MNIST IDX files")
    args = ap.parse_args()

    pkg_data = ROOT / "src" / "camforest" / "data"
    pkg_data.mkdir(parents=True, exist_ok=True)
    write_iris(pkg_data / "iris.csv")
    write_wdbc(pkg_data / "wdbc.csv")
    if args.mnist_dir is not None:
        write_mnist(args.mnist_dir, ROOT / "data" / "mnist")
