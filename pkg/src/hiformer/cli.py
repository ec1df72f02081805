"""Command-line front end: synth, decompose, embed-graph, train, predict, evaluate.

Every run is reproducible from its manifest (configs + dataset fingerprint
+ seed), all artifacts are written atomically, and the report paths render
figures next to their CSV/JSON outputs (suppress with --no-plot).

Exit codes: 0 success, 2 data problem, 3 configuration problem,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import importlib.metadata
import json
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import plots
from . import tensor as T
from .data import (
    NormStats,
    SynthRecipe,
    load_csv,
    make_windows,
    synth_generate,
    write_csv,
)
from .errors import ConfigError, DataError, HiformerError, NumericsError
from .graph import (
    Node2vecConfig,
    TurbineGraph,
    build_adjacency,
    node2vec_embed,
    read_adjacency_csv,
    read_coords_csv,
    uniform_adjacency,
    write_embeddings_csv,
)
from .ioutil import atomic_path, file_sha256
from .model import ModelConfig, init_params, load_checkpoint, save_checkpoint
from .training import (
    MetricsReport,
    TrainConfig,
    predict_split,
    prepare_inputs,
    train,
    write_history_csv,
)
from .vmd import VmdConfig, decompose_columns

# desk-scale defaults; a config file overrides any of them (full-scale runs
# would set history_len=288, hidden_dim=512, n_heads=32, n_layers=5, modes 7)
DEFAULT_MODEL = {
    "history_len": 48, "horizon": 12, "n_modes": 3, "hidden_dim": 32,
    "n_heads": 4, "head_dim": 8, "n_layers": 2, "dropout": 0.1,
    "ffn_hidden": 64, "node_dims": 16, "projection_hidden": 0,
}


class CliUsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliUsageError(message)


def entry():
    sys.exit(main())


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        result = args.func(args)
        return int(result or 0)
    except CliUsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 3
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except HiformerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="hiformer",
        description=__doc__.splitlines()[0],
        epilog="HIFORMER_THREADS caps the decomposition worker pool (default 1).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic wind farm CSV with known coupling")
    p.add_argument("--turbines", type=int, default=8)
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--features", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coupling", type=float, default=None, help="weather-power coupling coefficient")
    p.add_argument("--lag", type=int, default=None, help="steps by which weather leads power")
    p.add_argument("--recipe", type=Path, default=None, help="JSON recipe file overriding all recipe fields")
    p.add_argument("--out", type=Path, required=True, help="output CSV path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("decompose", help="decompose per-turbine power into band-limited modes")
    p.add_argument("data", type=Path)
    p.add_argument("--schema", default="generic", choices=["sdwpf", "gefcom", "generic"])
    p.add_argument("--modes", type=int, default=7)
    p.add_argument("--alpha", type=float, default=2000.0)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--init", default="uniform", choices=["uniform", "zero", "random"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--turbine", default=None, help="turbine id to plot (default: first)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("embed-graph", help="node vectors from biased walks over the farm graph")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--coords", type=Path, help="CSV with turbine_id,x,y")
    src.add_argument("--adjacency", type=Path, help="square numeric CSV adjacency")
    p.add_argument("--sigma", type=float, default=None, help="kernel length scale (default: median distance)")
    p.add_argument("--epsilon", type=float, default=0.05, help="sparsity threshold")
    p.add_argument("--dims", type=int, default=64)
    p.add_argument("--walk-len", type=int, default=20)
    p.add_argument("--walks-per-node", type=int, default=10)
    p.add_argument("--p", type=float, default=1.0, help="return parameter")
    p.add_argument("--q", type=float, default=1.0, help="in-out parameter")
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.025)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="output CSV path")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_embed_graph)

    p = sub.add_parser("train", help="train a forecasting model end to end")
    p.add_argument("data", type=Path)
    p.add_argument("--schema", default="generic", choices=["sdwpf", "gefcom", "generic"])
    p.add_argument("--config", type=Path, default=None, help="JSON config file (model/train/vmd/node2vec)")
    p.add_argument("--coords", type=Path, default=None, help="turbine coordinates CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--history", type=int, default=None, help="history window length")
    p.add_argument("--horizon", type=int, default=None, help="forecast steps")
    p.add_argument("--modes", type=int, default=None, help="decomposition mode count")
    p.add_argument("--precision", default="fp64", choices=["fp64", "fp32"])
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_train)

    for name, helptext in (
        ("predict", "emit forecasts for a split of a dataset"),
        ("evaluate", "forecast a split and report metrics vs the persistence baseline"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("data", type=Path)
        p.add_argument("--checkpoint", type=Path, required=True)
        p.add_argument("--schema", default=None, choices=["sdwpf", "gefcom", "generic"])
        p.add_argument("--split", default="test", choices=["train", "val", "test"])
        p.add_argument("--horizon", type=int, default=None, help="forecast steps to keep (<= trained horizon)")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--no-plot", action="store_true")
        p.set_defaults(func=cmd_predict if name == "predict" else cmd_evaluate)

    return parser


def cmd_synth(args) -> int:
    if args.recipe is not None:
        try:
            recipe = SynthRecipe.from_json(args.recipe.read_text())
        except FileNotFoundError:
            raise DataError(f"recipe file not found: {args.recipe}") from None
        except (json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"bad recipe file {args.recipe}: {exc}") from None
    else:
        recipe = SynthRecipe()
    overrides = {}
    if args.coupling is not None:
        overrides["coupling"] = args.coupling
    if args.lag is not None:
        overrides["lag"] = args.lag
    recipe = dataclasses.replace(recipe, **overrides)

    raw = synth_generate(args.turbines, args.steps, args.features, seed=args.seed, recipe=recipe)
    write_csv(raw, args.out, schema="generic")
    coords_path = args.out.with_suffix(".coords.csv")
    with atomic_path(coords_path) as tmp:
        lines = ["turbine_id,x,y"]
        lines += [f"{tid},{x},{y}" for tid, (x, y) in zip(raw.turbine_ids, raw.coords)]
        tmp.write_text("\n".join(lines) + "\n")
    recipe_path = args.out.with_suffix(".recipe.json")
    with atomic_path(recipe_path) as tmp:
        tmp.write_text(recipe.to_json() + "\n")
    print(f"wrote {args.out} ({args.turbines} turbines x {args.steps} steps, "
          f"analytic lagged corr {recipe.analytic_lagged_correlation():.3f})")
    print(f"wrote {coords_path}")
    print(f"wrote {recipe_path}")
    return 0


def cmd_decompose(args) -> int:
    raw = load_csv(args.data, schema=args.schema)
    cfg = VmdConfig(num_modes=args.modes, alpha=args.alpha, tau=args.tau, tol=args.tol,
                    max_iters=args.max_iters, init=args.init, seed=args.seed)
    cfg.validate()
    sets = decompose_columns(raw.power, cfg)

    args.out.mkdir(parents=True, exist_ok=True)
    imfs_path = args.out / "imfs.csv"
    with atomic_path(imfs_path) as tmp:
        with open(tmp, "w") as fh:
            mode_cols = ",".join(f"mode_{i + 1}" for i in range(cfg.num_modes))
            fh.write(f"turbine,t,original,{mode_cols},residual\n")
            for v, (tid, s) in enumerate(zip(raw.turbine_ids, sets)):
                for t_idx in range(s.modes.shape[1]):
                    modes = ",".join(repr(float(x)) for x in s.modes[:, t_idx])
                    fh.write(f"{tid},{t_idx},{float(raw.power[t_idx, v])!r},"
                             f"{modes},{float(s.residual[t_idx])!r}\n")

    freq_path = args.out / "center_frequencies.csv"
    with atomic_path(freq_path) as tmp:
        with open(tmp, "w") as fh:
            fh.write("turbine,mode,frequency,iterations,converged\n")
            for tid, s in zip(raw.turbine_ids, sets):
                for i, freq in enumerate(s.center_freqs):
                    fh.write(f"{tid},{i + 1},{float(freq)!r},{s.iterations_used},{s.converged}\n")

    if not args.no_plot:
        tid = args.turbine or raw.turbine_ids[0]
        if tid not in raw.turbine_ids:
            raise ConfigError(f"turbine {tid!r} not in dataset (have {raw.turbine_ids[:5]}...)")
        v = raw.turbine_ids.index(tid)
        plots.save_mode_figure(raw.power[:, v], sets[v], args.out / "imfs.png",
                               title=f"turbine {tid}: {cfg.num_modes} modes")

    for tid, s in zip(raw.turbine_ids, sets):
        mark = "" if s.converged else " (not converged)"
        freqs = ", ".join(f"{f:.4f}" for f in s.center_freqs)
        print(f"turbine {tid}: center frequencies [{freqs}] in {s.iterations_used} iterations{mark}")
    print(f"wrote {imfs_path}")
    print(f"wrote {freq_path}")
    return 0


def cmd_embed_graph(args) -> int:
    if args.coords is not None:
        ids, coords = read_coords_csv(args.coords)
        graph = build_adjacency(coords, sigma=args.sigma, epsilon=args.epsilon)
    else:
        graph = read_adjacency_csv(args.adjacency)
        ids = [str(i) for i in range(graph.n)]
    cfg = Node2vecConfig(dims=args.dims, walk_len=args.walk_len, walks_per_node=args.walks_per_node,
                         p=args.p, q=args.q, window=args.window, negatives=args.negatives,
                         epochs=args.epochs, lr=args.lr, seed=args.seed)
    result = node2vec_embed(graph, cfg)
    write_embeddings_csv(args.out, result.vectors, ids=ids)
    if not args.no_plot:
        plots.save_embedding_figure(result.vectors.data, ids, args.out.with_suffix(".png"))
    print(f"trained {graph.n} node vectors ({cfg.dims} dims), "
          f"loss {result.epoch_loss[0]:.4f} -> {result.epoch_loss[-1]:.4f}")
    print(f"wrote {args.out}")
    return 0


def _read_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    unknown = set(cfg) - {"model", "train", "vmd", "node2vec"}
    if unknown:
        raise ConfigError(f"config file has unknown sections {sorted(unknown)}")
    return cfg


def _resolve_train_configs(args, n_turbines: int, n_weather: int):
    file_cfg = _read_config_file(args.config)

    model_d = dict(DEFAULT_MODEL)
    model_d.update(file_cfg.get("model", {}))
    for flag, key in (("history", "history_len"), ("horizon", "horizon"), ("modes", "n_modes")):
        if getattr(args, flag) is not None:
            model_d[key] = getattr(args, flag)
    for key, expected in (("n_turbines", n_turbines), ("n_weather", n_weather)):
        if key in model_d and model_d[key] != expected:
            raise ConfigError(f"config {key}={model_d[key]} but dataset has {expected}")
    model_d["n_turbines"] = n_turbines
    model_d["n_weather"] = n_weather

    vmd_d = dict(file_cfg.get("vmd", {}))
    modes_pinned = args.modes is not None or "n_modes" in file_cfg.get("model", {})
    if "num_modes" in vmd_d:
        if modes_pinned and vmd_d["num_modes"] != model_d["n_modes"]:
            raise ConfigError(
                f"model n_modes={model_d['n_modes']} conflicts with vmd num_modes={vmd_d['num_modes']}"
            )
        if not modes_pinned:
            model_d["n_modes"] = vmd_d["num_modes"]
    vmd_d["num_modes"] = model_d["n_modes"]
    vmd_d.setdefault("seed", args.seed)

    train_d = dict(file_cfg.get("train", {}))
    for flag, key in (("epochs", "epochs"), ("lr", "lr"), ("batch_size", "batch_size")):
        if getattr(args, flag) is not None:
            train_d[key] = getattr(args, flag)
    train_d["seed"] = args.seed

    n2v_d = dict(file_cfg.get("node2vec", {}))
    n2v_d.setdefault("dims", model_d["node_dims"])
    n2v_d.setdefault("seed", args.seed)
    if n2v_d["dims"] != model_d["node_dims"]:
        raise ConfigError(
            f"node2vec dims {n2v_d['dims']} must match model node_dims {model_d['node_dims']}"
        )

    try:
        model_cfg = ModelConfig(**model_d)
        train_cfg = TrainConfig(**train_d)
        vmd_cfg = VmdConfig(**vmd_d)
        n2v_cfg = Node2vecConfig(**n2v_d)
    except TypeError as exc:
        raise ConfigError(f"bad config field: {exc}") from None
    model_cfg.validate()
    train_cfg.validate()
    vmd_cfg.validate()
    n2v_cfg.validate()
    return model_cfg, train_cfg, vmd_cfg, n2v_cfg


def _build_graph(args, raw) -> TurbineGraph:
    if args.coords is not None:
        ids, coords = read_coords_csv(args.coords)
        order = []
        for tid in raw.turbine_ids:
            if tid not in ids:
                raise DataError(f"coords file {args.coords} is missing turbine {tid!r}")
            order.append(ids.index(tid))
        return build_adjacency(coords[order])
    if raw.coords is not None:
        return build_adjacency(raw.coords)
    return uniform_adjacency(raw.n_turbines)


def _code_revision() -> str:
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "-C", str(here), "rev-parse", "HEAD"],
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except OSError:
        pass
    try:
        return "hiformer-" + importlib.metadata.version("hiformer")
    except importlib.metadata.PackageNotFoundError:
        return "unknown"


def cmd_train(args) -> int:
    if args.precision == "fp32":
        T.set_default_dtype(np.float32)
    try:
        raw = load_csv(args.data, schema=args.schema)
        model_cfg, train_cfg, vmd_cfg, n2v_cfg = _resolve_train_configs(args, raw.n_turbines, raw.n_weather)
        fingerprint = file_sha256(args.data)

        windowed = make_windows(raw, model_cfg.history_len, model_cfg.horizon)
        graph = _build_graph(args, raw)
        embedding = node2vec_embed(graph, n2v_cfg)
        prepared = prepare_inputs(windowed, embedding.vectors.data, vmd_cfg)

        params = init_params(model_cfg, seed=args.seed)
        result = train(params, prepared, train_cfg, model_cfg)

        args.out.mkdir(parents=True, exist_ok=True)
        ckpt_path = args.out / "checkpoint.npz"
        extras = {"e_node": embedding.vectors.data}
        extras.update({f"stats_{k}": v for k, v in windowed.stats.to_arrays().items()})
        meta = {
            "train": train_cfg.to_dict(), "vmd": dataclasses.asdict(vmd_cfg),
            "node2vec": dataclasses.asdict(n2v_cfg), "dataset_sha256": fingerprint,
            "schema": args.schema, "seed": args.seed, "precision": args.precision,
            "best_epoch": result.best_epoch, "best_val_loss": result.best_val_loss,
        }
        save_checkpoint(ckpt_path, params, model_cfg, extras=extras, meta=meta)

        history_path = args.out / "history.csv"
        write_history_csv(result.history, history_path)

        manifest = {
            "command": "train",
            "seed": args.seed,
            "dataset": {"path": str(args.data), "sha256": fingerprint, "schema": args.schema},
            "configs": {
                "model": model_cfg.to_dict(), "train": train_cfg.to_dict(),
                "vmd": dataclasses.asdict(vmd_cfg), "node2vec": dataclasses.asdict(n2v_cfg),
            },
            "artifacts": {"checkpoint": str(ckpt_path), "history": str(history_path)},
            "revision": _code_revision(),
        }
        with atomic_path(args.out / "manifest.json") as tmp:
            tmp.write_text(json.dumps(manifest, indent=2) + "\n")

        if not args.no_plot:
            plots.save_history_figure(result.history, args.out / "history.png")

        print(f"trained {train_cfg.epochs} epochs; best val loss "
              f"{result.best_val_loss:.6f} at epoch {result.best_epoch}")
        print(f"wrote {ckpt_path}")
        print(f"wrote {history_path}")
        return 0
    finally:
        T.set_default_dtype(np.float64)


def _load_run_for_inference(args):
    params, model_cfg, extras, meta = load_checkpoint(args.checkpoint)
    schema = args.schema or meta.get("schema", "generic")
    raw = load_csv(args.data, schema=schema)
    fingerprint = file_sha256(args.data)
    if raw.n_turbines != model_cfg.n_turbines or raw.n_weather != model_cfg.n_weather:
        raise ConfigError(
            f"checkpoint/dataset mismatch: model expects {model_cfg.n_turbines} turbines "
            f"x {model_cfg.n_weather} weather channels, dataset has {raw.n_turbines} x "
            f"{raw.n_weather} (checkpoint dataset sha256 {meta.get('dataset_sha256', '?')}, "
            f"this dataset sha256 {fingerprint})"
        )
    stats = NormStats.from_arrays({
        "power": extras["stats_power"],
        "weather_mean": extras["stats_weather_mean"],
        "weather_std": extras["stats_weather_std"],
    })
    windowed = make_windows(raw, model_cfg.history_len, model_cfg.horizon, stats=stats)
    vmd_cfg = VmdConfig(**meta["vmd"])
    prepared = prepare_inputs(windowed, extras["e_node"], vmd_cfg)

    horizon = args.horizon if args.horizon is not None else model_cfg.horizon
    if not 1 <= horizon <= model_cfg.horizon:
        raise ConfigError(
            f"requested horizon {horizon} outside the trained horizon 1..{model_cfg.horizon}"
        )
    split = prepared.split(args.split)
    if split.n_windows == 0:
        raise ConfigError(f"split {args.split!r} is too short for one "
                          f"{model_cfg.history_len}+{model_cfg.horizon} window")
    return params, model_cfg, prepared, split, horizon, fingerprint, meta


def _write_forecast_csv(path, prepared, split, preds, horizon):
    times = prepared.timestamps
    hist = prepared.history_len
    with atomic_path(path) as tmp:
        with open(tmp, "w") as fh:
            fh.write("timestamp,turbine,y_true,y_pred\n")
            for i, start in enumerate(split.starts):
                for q in range(horizon):
                    stamp = times[start + hist + q]
                    for v, tid in enumerate(prepared.turbine_ids):
                        fh.write(f"{stamp},{tid},{float(split.y[i, q, v])!r},{float(preds[i, q, v])!r}\n")


def cmd_predict(args) -> int:
    params, model_cfg, prepared, split, horizon, _, _ = _load_run_for_inference(args)
    preds = predict_split(params, split, prepared.e_node, model_cfg)[:, :horizon]

    args.out.mkdir(parents=True, exist_ok=True)
    forecast_path = args.out / "forecast.csv"
    _write_forecast_csv(forecast_path, prepared, split, preds, horizon)
    if not args.no_plot:
        _forecast_figure(args, prepared, split, preds, horizon)
    print(f"forecast {split.n_windows} windows x {horizon} steps x {len(prepared.turbine_ids)} turbines")
    print(f"wrote {forecast_path}")
    return 0


def _forecast_figure(args, prepared, split, preds, horizon) -> None:
    q = horizon - 1
    times = prepared.timestamps[split.starts + prepared.history_len + q]
    truth = split.y[:, q, :].mean(axis=1)
    pred = preds[:, q, :].mean(axis=1)
    plots.save_forecast_figure(times, truth, pred, args.out / "forecast.png",
                               title=f"{args.split} split, {horizon}-step-ahead")


def cmd_evaluate(args) -> int:
    params, model_cfg, prepared, split, horizon, fingerprint, _ = _load_run_for_inference(args)
    preds = predict_split(params, split, prepared.e_node, model_cfg)[:, :horizon]
    model_report = MetricsReport.from_errors(preds - split.y[:, :horizon])
    naive_pred = np.repeat(split.x[:, -1:, :], horizon, axis=1)
    naive_report = MetricsReport.from_errors(naive_pred - split.y[:, :horizon])

    args.out.mkdir(parents=True, exist_ok=True)
    metrics_path = args.out / "metrics.json"
    with atomic_path(metrics_path) as tmp:
        tmp.write_text(json.dumps({
            "split": args.split, "horizon": horizon, "dataset_sha256": fingerprint,
            "model": model_report.to_dict(), "persistence": naive_report.to_dict(),
        }, indent=2) + "\n")

    forecast_path = args.out / "forecast.csv"
    _write_forecast_csv(forecast_path, prepared, split, preds, horizon)
    if not args.no_plot:
        _forecast_figure(args, prepared, split, preds, horizon)

    print(f"model       MAE {model_report.mae:.6f}  MSE {model_report.mse:.6f}")
    print(f"persistence MAE {naive_report.mae:.6f}  MSE {naive_report.mse:.6f}")
    print(f"wrote {metrics_path}")
    print(f"wrote {forecast_path}")
    return 0
