"""Command-line entry point: train, soften, map, simulate, report.

Subcommands mirror the library modules; `run` executes a whole declarative
pipeline from a JSON config and writes models, arrays, reports, and a
manifest into an output directory. Every random seed consumed is recorded in
the manifest, in consumption order, so runs replay exactly.

Exit codes: 0 success, 1 pipeline failure, 2 bad config/arguments (including
missing datasets, checked before any output is written).
"""

from __future__ import annotations

import argparse
import json
import os
import pathlib
import sys

import numpy as np

from . import __version__
from . import arch, camsim, circuit, cammap, datasets, hardtree, robust, softtree


class ConfigError(Exception):
    pass


# -- model file dispatch --------------------------------------------------------

_LOADERS = {
    hardtree.TREE_FORMAT: hardtree.tree_from_dict,
    hardtree.FOREST_FORMAT: hardtree.forest_from_dict,
    softtree.SDT_FORMAT: softtree.sdt_from_dict,
    softtree.SRF_FORMAT: softtree.srf_from_dict,
}


def load_model(path):
    doc = json.loads(pathlib.Path(path).read_text())
    fmt = doc.get("format")
    if fmt not in _LOADERS:
        raise ConfigError(f"{path}: unknown model format {fmt!r}")
    return _LOADERS[fmt](doc)


def save_model(model, path) -> None:
    if isinstance(model, hardtree.DecisionTree):
        hardtree.save_tree(model, path)
    elif isinstance(model, hardtree.RandomForest):
        hardtree.save_forest(model, path)
    elif isinstance(model, softtree.SoftTree):
        softtree.save_sdt(model, path)
    elif isinstance(model, softtree.SoftForest):
        softtree.save_srf(model, path)
    else:
        raise TypeError(f"unsupported model type {type(model).__name__}")


# -- dataset resolution -----------------------------------------------------------

def _resolve_dataset(spec: dict):
    """Validate a dataset spec and return a loader thunk (no side effects yet)."""
    if not isinstance(spec, dict):
        raise ConfigError("dataset spec must be an object")
    frac = float(spec.get("test_fraction", 0.2))
    seed = int(spec.get("seed", 0))
    if "csv" in spec:
        path = pathlib.Path(spec["csv"])
        if not path.exists():
            raise ConfigError(f"dataset file not found: {path}")
        label_col = spec.get("label_column", "label")

        def load():
            ds = datasets.load_csv(path, label_col)
            tr, te = datasets.split(ds, frac, seed)
            tr_n = datasets.normalize(tr, "tabular")
            te_n = datasets.normalize(te, "tabular",
                                      feature_range=tr_n.feature_range)
            return tr_n, te_n
        return load, seed
    name = spec.get("name")
    if name not in ("iris", "wdbc", "mnist"):
        raise ConfigError(f"unknown dataset name {name!r}")
    root = spec.get("root")
    if name == "mnist":
        mdir = pathlib.Path(root) if root else datasets.data_dir() / "mnist"
        probe = list(mdir.glob("train-images-idx3-ubyte*")) if mdir.is_dir() else []
        if not probe:
            raise ConfigError(f"mnist data not found under {mdir}")
    return (lambda: datasets.prepared(name, test_fraction=frac, seed=seed,
                                      root=root)), seed


def _parse_noise(text: str) -> camsim.VariationModel:
    # "uniform:0.1" or "gaussian:0.05"
    try:
        kind, mag = text.split(":")
        return camsim.VariationModel(kind, float(mag))
    except (ValueError, TypeError) as e:
        raise ConfigError(f"bad noise spec {text!r} (want kind:magnitude)") from e


def _behavior_from(spec) -> softtree.BehaviorParams:
    if spec is None:
        return softtree.DEFAULT_BEHAVIOR
    if spec == "fit-from-circuit":
        return fitted_default_behavior()
    if isinstance(spec, dict):
        return softtree.BehaviorParams(**spec)
    raise ConfigError(f"bad behavior spec {spec!r}")


_CAL_ROW = ((0, "lt", -0.3), (1, "lt", 0.27), (0, "lt", -0.75), (1, "lt", 0.77))
_fitted_cache = {}


def fitted_default_behavior(params: circuit.CircuitParams | None = None):
    """Behavior params fitted to the circuit on the standard 4-cell row."""
    p = params or circuit.CircuitParams()
    if p not in _fitted_cache:
        beh, _, _, _ = circuit.fit_row_behavior(list(_CAL_ROW), p)
        _fitted_cache[p] = beh
    return _fitted_cache[p]


# -- subcommands -------------------------------------------------------------------

def cmd_train(args) -> int:
    load, _ = _resolve_dataset(_dataset_spec(args))
    train, test = load()
    if args.kind == "dt":
        model = hardtree.train_dt(train, args.depth, args.ccp_alpha, args.seed)
        acc = hardtree.accuracy_dt(model, test)
    else:
        model = hardtree.train_rf(train, args.n_trees, args.depth,
                                  seed=args.seed, ccp_alpha=args.ccp_alpha)
        acc = hardtree.accuracy_rf(model, test)
    save_model(model, args.out)
    print(f"{args.kind} test accuracy {acc:.4f} -> {args.out}")
    return 0


def cmd_soften(args) -> int:
    model = load_model(args.model)
    behavior = (fitted_default_behavior() if args.fit_from_circuit
                else softtree.BehaviorParams(k=args.gain))
    load, _ = _resolve_dataset(_dataset_spec(args))
    train, test = load()
    if isinstance(model, hardtree.DecisionTree):
        soft = softtree.init_sdt(model, behavior)
        soft = softtree.train_sdt(soft, train, args.epochs, args.learning_rate,
                                  args.seed, args.batch_size, args.beta)
        acc = softtree.accuracy_sdt(soft, test)
    elif isinstance(model, hardtree.RandomForest):
        soft = softtree.init_srf(model, behavior)
        soft = softtree.train_srf(soft, train, args.epochs, args.learning_rate,
                                  args.seed, args.batch_size, args.beta)
        acc = softtree.accuracy_srf(soft, test)
    else:
        raise ConfigError("soften expects a hard tree or forest model")
    save_model(soft, args.out)
    print(f"soft model test accuracy {acc:.4f} -> {args.out}")
    return 0


def cmd_map(args) -> int:
    model = load_model(args.model)
    if isinstance(model, hardtree.DecisionTree):
        model = softtree.init_sdt(model)
    if not isinstance(model, softtree.SoftTree):
        raise ConfigError("map expects a single-tree model")
    arr = cammap.map_sdt(model)
    cammap.save_array(arr, args.out)
    print(f"{arr.n_rows} rows x {arr.n_cols} cols -> {args.out}")
    return 0


def cmd_mc(args) -> int:
    model = load_model(args.model)
    load, _ = _resolve_dataset(_dataset_spec(args))
    _, test = load()
    vm = _parse_noise(args.noise)
    vm = camsim.VariationModel(vm.kind, vm.magnitude, args.seed)
    arrays, behavior, mode = robust.model_arrays(model)
    label = pathlib.Path(args.model).stem
    if mode == "single":
        rep = camsim.monte_carlo(arrays[0], test, vm, behavior, args.trials,
                                 label=label, threads=args.threads)
    else:
        rep = camsim.monte_carlo_forest(arrays, test, vm, behavior,
                                        args.trials, mode=mode, label=label,
                                        threads=args.threads)
    camsim.reports_to_csv([rep], args.out)
    print(f"mean {rep.mean:.4f} std {rep.std:.4f} "
          f"ci [{rep.ci_lo:.4f}, {rep.ci_hi:.4f}] -> {args.out}")
    return 0


def cmd_sweep(args) -> int:
    models = [(pathlib.Path(p).stem, load_model(p)) for p in args.models]
    load, _ = _resolve_dataset(_dataset_spec(args))
    _, test = load()
    mags = [float(m) for m in args.magnitudes.split(",")]
    reports = robust.variation_sweep(models, test, mags, kind=args.kind,
                                     trials=args.trials, seed=args.seed,
                                     threads=args.threads)
    camsim.reports_to_csv(reports, args.out)
    for r in reports:
        print(f"{r.label} {r.kind} {r.magnitude:g}: mean {r.mean:.4f}")
    return 0


def cmd_attack(args) -> int:
    model = load_model(args.model)
    load, _ = _resolve_dataset(_dataset_spec(args))
    _, test = load()
    rep = robust.attack_root(model, test, trials=args.trials, seed=args.seed,
                             level=args.level,
                             label=pathlib.Path(args.model).stem)
    camsim.reports_to_csv([rep], args.out)
    print(f"attacked accuracy mean {rep.mean:.4f} std {rep.std:.4f} "
          f"-> {args.out}")
    return 0


def cmd_circuit(args) -> int:
    doc = json.loads(pathlib.Path(args.row).read_text())
    conds = [(c["feature"], c["op"], c["threshold"])
             for c in doc["conditions"]]
    p = circuit.CircuitParams()
    n_features = max(c[0] for c in conds) + 1
    xs = np.linspace(-1.0, 1.0, args.points)
    X = np.zeros((args.points, n_features))
    X[:, args.sweep_feature] = xs
    sensed = circuit.row_sense_sweep(conds, X, p)
    with pathlib.Path(args.out).open("w") as fh:
        fh.write("input_volts,sensed\n")
        for x, s in zip(xs, sensed):
            fh.write(f"{x!r},{s!r}\n")
    print(f"swept feature {args.sweep_feature} over {args.points} points "
          f"-> {args.out}")
    if args.fit:
        beh, rep, _, _ = circuit.fit_row_behavior(conds, p)
        print(f"fit a={beh.a:.4f} b={beh.b:.4f} k={beh.k:.3f} "
              f"r2={rep.r2:.5f} rmse={rep.rmse:.5f}")
    return 0


def cmd_plan(args) -> int:
    model = load_model(args.model)
    if isinstance(model, hardtree.DecisionTree):
        model = softtree.init_sdt(model)
    arr = cammap.map_sdt(model)
    plan = arch.plan_tiling(arr, args.width)
    arch.save_plan(plan, args.out)
    print(f"{plan.n_subarrays} subarrays of width {plan.subarray_width}, "
          f"{plan.enabled_segments}/{plan.enable_mask.size} segments enabled "
          f"-> {args.out}")
    return 0


def cmd_cost(args) -> int:
    model = load_model(args.model)
    if isinstance(model, hardtree.DecisionTree):
        depth = args.depth or model.max_depth
        model = softtree.init_sdt(model)
    else:
        depth = args.depth or max(len(p.conditions) for p in model.paths)
    arr = cammap.map_sdt(model)
    plan = arch.plan_tiling(arr, args.width)
    if args.calibration == "reported":
        cal = arch.reported_calibration(plan)
    else:
        cal = arch.CostCalibration(**json.loads(
            pathlib.Path(args.calibration).read_text()))
    report = arch.estimate_cost(plan, depth, cal)
    pathlib.Path(args.out).write_text(json.dumps(arch.cost_to_json(report)))
    print(f"latency {report.latency_per_sample:.3e} s, energy "
          f"{report.energy_array * 1e9:.2f} + {report.energy_wta * 1e9:.2f} nJ "
          f"-> {args.out}")
    return 0


def cmd_surface(args) -> int:
    model = load_model(args.model)
    load, _ = _resolve_dataset(_dataset_spec(args))
    train, _ = load()
    fx, fy = _resolve_features(args.features, train)
    xs, ys, grid = robust.decision_surface(
        model, (fx, fy), train.features.mean(axis=0),
        grid_resolution=args.resolution)
    robust.surface_to_csv(xs, ys, grid, args.out)
    print(f"{args.resolution}x{args.resolution} surface over features "
          f"({fx}, {fy}) -> {args.out}")
    return 0


def _resolve_features(text: str, ds) -> tuple[int, int]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ConfigError("surface needs exactly two features")
    out = []
    for p in parts:
        if p.isdigit() or (p.startswith("-") and p[1:].isdigit()):
            out.append(int(p))
        elif p in ds.feature_names:
            out.append(ds.feature_names.index(p))
        else:
            raise ConfigError(f"unknown feature {p!r}")
    return out[0], out[1]


def _dataset_spec(args) -> dict:
    ds = args.dataset
    if ds.endswith(".csv"):
        spec = {"csv": ds, "label_column": args.label_column}
    else:
        spec = {"name": ds}
    spec["test_fraction"] = args.test_fraction
    spec["seed"] = args.split_seed
    return spec


# -- declarative pipeline -----------------------------------------------------------

def cmd_run(args) -> int:
    cfg_path = pathlib.Path(args.config)
    if not cfg_path.exists():
        raise ConfigError(f"config not found: {cfg_path}")
    try:
        cfg = json.loads(cfg_path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    return run(cfg)


def run(cfg: dict) -> int:
    # validate everything up front; nothing is written before this passes
    mspec = cfg.get("model") or {}
    kind = mspec.get("kind")
    if kind not in ("dt", "rf", "sdt", "srf"):
        raise ConfigError(f"model.kind must be dt|rf|sdt|srf, got {kind!r}")
    load, split_seed = _resolve_dataset(cfg.get("dataset") or {})
    behavior = _behavior_from(cfg.get("behavior"))
    exp = cfg.get("experiment") or {"kind": "none"}
    if exp.get("kind", "none") not in ("none", "mc", "sweep", "attack",
                                       "surface"):
        raise ConfigError(f"unknown experiment kind {exp.get('kind')!r}")
    out_dir = pathlib.Path(cfg.get("output_dir", "camforest-out"))

    out_dir.mkdir(parents=True, exist_ok=True)
    seeds: list[dict] = []
    manifest = {"config": cfg, "package_version": __version__,
                "seeds": seeds, "outputs": []}
    train, test = load()
    seeds.append({"stage": "split", "seed": split_seed})

    depth = int(mspec.get("depth", 4))
    model_seed = int(mspec.get("seed", 0))
    ccp_alpha = float(mspec.get("ccp_alpha", 0.0))
    if kind in ("dt", "sdt"):
        hard = hardtree.train_dt(train, depth, ccp_alpha, model_seed)
    else:
        hard = hardtree.train_rf(train, int(mspec.get("n_trees", 10)), depth,
                                 seed=model_seed, ccp_alpha=ccp_alpha)
    seeds.append({"stage": "train", "seed": model_seed})

    model = hard
    if kind in ("sdt", "srf"):
        epochs = int(mspec.get("epochs", 30))
        lr = float(mspec.get("learning_rate", 0.05))
        bs = int(mspec.get("batch_size", 32))
        beta = float(mspec.get("beta", 10.0))
        if kind == "sdt":
            model = softtree.train_sdt(softtree.init_sdt(hard, behavior),
                                       train, epochs, lr, model_seed, bs, beta)
        else:
            model = softtree.train_srf(softtree.init_srf(hard, behavior),
                                       train, epochs, lr, model_seed, bs, beta)
        seeds.append({"stage": "soften", "seed": model_seed})
    if cfg.get("behavior") == "fit-from-circuit":
        manifest["fitted_behavior"] = {"a": behavior.a, "b": behavior.b,
                                       "k": behavior.k,
                                       "v_ml_t0": behavior.v_ml_t0}

    model_path = out_dir / "model.json"
    save_model(model, model_path)
    manifest["outputs"].append(model_path.name)

    if kind in ("dt", "sdt"):
        arr = cammap.map_sdt(model if kind == "sdt"
                             else softtree.init_sdt(model))
        cammap.save_array(arr, out_dir / "array.csv")
        manifest["outputs"] += ["array.csv", "array.csv.json"]

    noiseless = _noiseless_accuracy(model, test)
    manifest["noiseless_accuracy"] = noiseless

    reports = []
    nspec = cfg.get("noise") or {}
    trials = int(nspec.get("trials", 50))
    noise_seed = int(nspec.get("seed", 0))
    nkind = nspec.get("kind", "uniform")
    threads = int(cfg.get("threads", 0)) or (os.cpu_count() or 1)
    ekind = exp.get("kind", "none")
    label = kind
    if ekind == "mc":
        vm = camsim.VariationModel(nkind, float(nspec.get("magnitude", 0.1)),
                                   noise_seed)
        reports = robust.variation_sweep([(label, model)], test,
                                         [vm.magnitude], kind=vm.kind,
                                         trials=trials, seed=noise_seed,
                                         threads=threads)
        seeds.append({"stage": "mc", "seed": noise_seed,
                      "per_trial": [[noise_seed, t] for t in range(trials)]})
    elif ekind == "sweep":
        mags = [float(m) for m in exp.get("magnitudes", [0.0, 0.05, 0.1])]
        reports = robust.variation_sweep([(label, model)], test, mags,
                                         kind=nkind, trials=trials,
                                         seed=noise_seed, threads=threads)
        seeds.append({"stage": "sweep", "seed": noise_seed})
    elif ekind == "attack":
        reports = [robust.attack_root(model, test,
                                      trials=int(exp.get("trials", 10)),
                                      seed=noise_seed, label=label)]
        seeds.append({"stage": "attack", "seed": noise_seed})
    elif ekind == "surface":
        fx, fy = exp.get("features", [0, 1])
        xs, ys, grid = robust.decision_surface(
            model, (int(fx), int(fy)), train.features.mean(axis=0),
            grid_resolution=int(exp.get("resolution", 200)))
        robust.surface_to_csv(xs, ys, grid, out_dir / "surface.csv")
        manifest["outputs"].append("surface.csv")

    if reports:
        camsim.reports_to_csv(reports, out_dir / "report.csv")
        (out_dir / "report.json").write_text(
            json.dumps(camsim.reports_to_json(reports)))
        manifest["outputs"] += ["report.csv", "report.json"]

    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1,
                                                      sort_keys=True))
    print(f"wrote {', '.join(manifest['outputs'] + ['manifest.json'])} "
          f"under {out_dir}")
    return 0


def _noiseless_accuracy(model, test) -> float:
    if isinstance(model, hardtree.DecisionTree):
        return hardtree.accuracy_dt(model, test)
    if isinstance(model, hardtree.RandomForest):
        return hardtree.accuracy_rf(model, test)
    if isinstance(model, softtree.SoftTree):
        return softtree.accuracy_sdt(model, test)
    return softtree.accuracy_srf(model, test)


# -- argument parsing -----------------------------------------------------------------

def _add_dataset_args(sp):
    sp.add_argument("--dataset", required=True,
                    help="iris | wdbc | mnist | path to a CSV file")
    sp.add_argument("--label-column", default="label")
    sp.add_argument("--test-fraction", type=float, default=0.2)
    sp.add_argument("--split-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="camforest",
        description="tree models on analog CAM: training, mapping, simulation")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("train", help="fit a hard tree or forest")
    _add_dataset_args(sp)
    sp.add_argument("--kind", choices=("dt", "rf"), default="dt")
    sp.add_argument("--depth", type=int, default=4)
    sp.add_argument("--ccp-alpha", type=float, default=0.0)
    sp.add_argument("--n-trees", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("soften", help="soft-boundary training from a hard model")
    _add_dataset_args(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--epochs", type=int, default=30)
    sp.add_argument("--learning-rate", type=float, default=0.05)
    sp.add_argument("--batch-size", type=int, default=32)
    sp.add_argument("--beta", type=float, default=10.0)
    sp.add_argument("--gain", type=float, default=20.0,
                    help="sigmoid gain k of the behavioral model")
    sp.add_argument("--fit-from-circuit", action="store_true")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_soften)

    sp = sub.add_parser("map", help="compile a tree to a CAM threshold array")
    sp.add_argument("--model", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_map)

    sp = sub.add_parser("mc", help="Monte Carlo accuracy under variation")
    _add_dataset_args(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--noise", default="uniform:0.1",
                    help="kind:magnitude, e.g. uniform:0.1")
    sp.add_argument("--trials", type=int, default=50)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_mc)

    sp = sub.add_parser("sweep", help="variation sweep over several models")
    _add_dataset_args(sp)
    sp.add_argument("--models", nargs="+", required=True)
    sp.add_argument("--kind", choices=("uniform", "gaussian"),
                    default="uniform")
    sp.add_argument("--magnitudes", default="0,0.05,0.1")
    sp.add_argument("--trials", type=int, default=50)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("attack", help="root-feature replacement attack")
    _add_dataset_args(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--trials", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--level", choices=("software", "cam"),
                    default="software")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_attack)

    sp = sub.add_parser("circuit", help="transient simulation of a stored row")
    sp.add_argument("--row", required=True,
                    help="JSON file with a conditions list")
    sp.add_argument("--sweep-feature", type=int, default=0)
    sp.add_argument("--points", type=int, default=101)
    sp.add_argument("--fit", action="store_true",
                    help="also fit (a, b, k) on a full input grid")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_circuit)

    sp = sub.add_parser("plan", help="tile an array into subarrays")
    sp.add_argument("--model", required=True)
    sp.add_argument("--width", type=int, default=64)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_plan)

    sp = sub.add_parser("cost", help="latency/energy estimate vs digital")
    sp.add_argument("--model", required=True)
    sp.add_argument("--width", type=int, default=64)
    sp.add_argument("--depth", type=int, default=0,
                    help="override the model depth for the digital reference")
    sp.add_argument("--calibration", default="reported",
                    help="'reported' (measured hardware constants) or a "
                         "JSON calibration file")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_cost)

    sp = sub.add_parser("surface", help="2-D decision surface export")
    _add_dataset_args(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--features", default="0,1",
                    help="two feature indices or names, comma separated")
    sp.add_argument("--resolution", type=int, default=200)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_surface)

    sp = sub.add_parser("run", help="full pipeline from a JSON config")
    sp.add_argument("--config", required=True)
    sp.set_defaults(fn=cmd_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:   # pipeline failure, exit 1 with diagnostic
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
