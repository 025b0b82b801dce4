"""Command-line surface for the kernel-learning pipeline.

Subcommands: train, evaluate, baseline, sample-spectrum, kernel-dump.
Every command writes a manifest.json into its output directory before
any long computation, echoes the merged configuration there, and keeps
all randomness derived from a single --seed. Figure-ready CSV/JSON files
are the outputs; no plots are rendered.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric or
sampler failure.
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    CapacityError,
    ConfigError,
    DataError,
    NumericError,
    SamplerProtocolError,
)
from .data import (
    RawTable,
    SplitSpec,
    apply_known_dataset_rules,
    default_bandwidth_grid,
    gaussian_nw_baseline,
    generate_sinc,
    load_csv,
    load_libsvm,
    save_dataset_cache,
    split_indices,
    standardize_apply,
    standardize_fit_transform,
)
from .regression import (
    EndpointRule,
    metrics_report,
    nw_predict,
    predict_with_endpoint_correction,
    r_squared,
    rmse,
)
from .rff import kernel_matrix, save_frequencies_csv
from .spectral_model import SpectralModelParams, make_backend, sample_frequencies
from .training import TrainConfig, train

DEFAULT_S_LIST = (100, 200, 500, 1000, 2000)

_COMMON_DEFAULTS = {
    "data": None,
    "format": "csv",
    "target_col": -1,
    "has_header": False,
    "seed": 0,
    "eps": 1e-8,
    "backend": "exact",
    "reads": None,
    "burn_in": 100,
    "thinning": 5,
    "external_cmd": None,
    "request_file": None,
    "reply_file": None,
    "out": "run",
    "sinc_n": 300,
    "sinc_d": 2,
    "sinc_noise": 0.05,
}

_COMMAND_DEFAULTS = {
    "train": {**_COMMON_DEFAULTS, "iterations": 300, "lr": 0.01,
              "optimizer": "adam", "baseline_subtraction": False,
              "n_visible": 4, "n_hidden": 4},
    "evaluate": {**_COMMON_DEFAULTS, "params": None,
                 "s_list": ",".join(str(s) for s in DEFAULT_S_LIST),
                 "llr_endpoints": True, "repeats": 1, "endpoint_alpha": 0.01},
    "baseline": {**_COMMON_DEFAULTS, "grid": None},
    "sample-spectrum": {**_COMMON_DEFAULTS, "params": None, "s": 1000, "bins": 50},
    "kernel-dump": {**_COMMON_DEFAULTS, "params": None, "s": 2000,
                    "tag": "post", "split": "train"},
}


def _parse_bool(text: str) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_common_arguments(sub: argparse.ArgumentParser) -> None:
    # No argparse defaults: anything absent falls through to the defaults
    # table so that config-file values sit between defaults and flags.
    kw = {"default": argparse.SUPPRESS}
    sub.add_argument("--config", help="JSON file mirroring the flags; flags override it",
                     **kw)
    sub.add_argument("--data", help="dataset path, or 'sinc' for the synthetic set", **kw)
    sub.add_argument("--format", choices=["csv", "libsvm"], **kw)
    sub.add_argument("--target-col", type=int, dest="target_col",
                     help="target column for CSV input (default: last)", **kw)
    sub.add_argument("--has-header", type=_parse_bool, dest="has_header", **kw)
    sub.add_argument("--seed", type=int, **kw)
    sub.add_argument("--eps", type=float, help="NW denominator stabilizer", **kw)
    sub.add_argument("--backend", choices=["exact", "gibbs", "external"], **kw)
    sub.add_argument("--reads", type=int, help="sampler reads per iteration", **kw)
    sub.add_argument("--burn-in", type=int, dest="burn_in", **kw)
    sub.add_argument("--thinning", type=int, **kw)
    sub.add_argument("--external-cmd", dest="external_cmd",
                     help="command line of an external sampler process", **kw)
    sub.add_argument("--request-file", dest="request_file", **kw)
    sub.add_argument("--reply-file", dest="reply_file", **kw)
    sub.add_argument("--out", help="output directory for this run", **kw)
    sub.add_argument("--sinc-n", type=int, dest="sinc_n", **kw)
    sub.add_argument("--sinc-d", type=int, dest="sinc_d", **kw)
    sub.add_argument("--sinc-noise", type=float, dest="sinc_noise", **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spectralnw",
        description="Learned spectral kernels for Nadaraya-Watson regression",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    kw = {"default": argparse.SUPPRESS}

    p_train = subparsers.add_parser("train", help="learn the spectral kernel")
    _add_common_arguments(p_train)
    p_train.add_argument("--iterations", type=int, **kw)
    p_train.add_argument("--lr", type=float, **kw)
    p_train.add_argument("--optimizer", choices=["adam", "sgd"], **kw)
    p_train.add_argument("--baseline-subtraction", type=_parse_bool,
                         dest="baseline_subtraction", **kw)
    p_train.add_argument("--n-visible", type=int, dest="n_visible", **kw)
    p_train.add_argument("--n-hidden", type=int, dest="n_hidden", **kw)
    p_train.set_defaults(func=cmd_train)

    p_eval = subparsers.add_parser("evaluate", help="metrics over a sweep of S")
    _add_common_arguments(p_eval)
    p_eval.add_argument("--params", help="trained (or initial) parameter JSON", **kw)
    p_eval.add_argument("--s-list", dest="s_list",
                        help="comma-separated feature counts", **kw)
    p_eval.add_argument("--llr-endpoints", type=_parse_bool, dest="llr_endpoints", **kw)
    p_eval.add_argument("--repeats", type=int,
                        help="frequency-resampling repetitions per S", **kw)
    p_eval.add_argument("--endpoint-alpha", type=float, dest="endpoint_alpha", **kw)
    p_eval.set_defaults(func=cmd_evaluate)

    p_base = subparsers.add_parser("baseline", help="grid-tuned Gaussian NW baseline")
    _add_common_arguments(p_base)
    p_base.add_argument("--grid", help="comma-separated bandwidths gamma", **kw)
    p_base.set_defaults(func=cmd_baseline)

    p_spec = subparsers.add_parser("sample-spectrum",
                                   help="draw frequencies and histogram them")
    _add_common_arguments(p_spec)
    p_spec.add_argument("--params", **kw)
    p_spec.add_argument("--s", type=int, help="number of frequencies", **kw)
    p_spec.add_argument("--bins", type=int, **kw)
    p_spec.set_defaults(func=cmd_sample_spectrum)

    p_kern = subparsers.add_parser("kernel-dump", help="write a dense kernel matrix")
    _add_common_arguments(p_kern)
    p_kern.add_argument("--params", **kw)
    p_kern.add_argument("--s", type=int, **kw)
    p_kern.add_argument("--tag", choices=["pre", "post"], **kw)
    p_kern.add_argument("--split", choices=["train", "all"], **kw)
    p_kern.set_defaults(func=cmd_kernel_dump)
    return parser


def _merge_config(args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags."""
    merged = dict(_COMMAND_DEFAULTS[args.command])
    explicit = {k: v for k, v in vars(args).items() if k not in ("command", "func")}
    config_path = explicit.pop("config", None)
    if config_path is not None:
        try:
            file_cfg = json.loads(Path(config_path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_path} is not valid JSON: {exc}") from None
        for key, value in file_cfg.items():
            key = key.replace("-", "_")
            if key not in merged:
                raise ConfigError(f"unknown config key {key!r} for command {args.command!r}")
            merged[key] = value
    merged.update(explicit)
    merged["command"] = args.command
    return merged


def _load_table(cfg: dict) -> RawTable:
    if cfg["data"] is None:
        raise ConfigError("no dataset given; use --data <path> or --data sinc")
    if cfg["data"] == "sinc":
        return generate_sinc(cfg["sinc_n"], cfg["sinc_d"], cfg["sinc_noise"],
                             seed=cfg["seed"])
    path = Path(cfg["data"])
    if not path.exists():
        raise ConfigError(f"dataset path does not exist: {path}")
    if cfg["format"] == "libsvm":
        table = load_libsvm(path)
    else:
        table = load_csv(path, target_column=cfg["target_col"],
                         has_header=cfg["has_header"])
    return apply_known_dataset_rules(table)


def _prepare_splits(cfg: dict):
    table = _load_table(cfg)
    spec = SplitSpec(train_fraction=0.8, seed=cfg["seed"], shuffle=True)
    train_idx, test_idx = split_indices(table.n, spec)
    train_table = RawTable(table.X[train_idx], table.y[train_idx], table.source)
    test_table = RawTable(table.X[test_idx], table.y[test_idx], table.source)
    train_ds, means, stds = standardize_fit_transform(train_table)
    test_ds = standardize_apply(test_table, means, stds)
    descriptor = {
        "source": table.source,
        "n": table.n,
        "d": table.d,
        "n_train": train_ds.n,
        "n_test": test_ds.n,
    }
    return table, train_ds, test_ds, descriptor, (train_idx, test_idx)


def _make_backend_from(cfg: dict):
    external_cmd = cfg["external_cmd"].split() if cfg["external_cmd"] else None
    try:
        return make_backend(cfg["backend"], burn_in=cfg["burn_in"],
                            thinning=cfg["thinning"], external_command=external_cmd,
                            request_path=cfg["request_file"],
                            reply_path=cfg["reply_file"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _load_params(cfg: dict) -> SpectralModelParams:
    if not cfg.get("params"):
        raise ConfigError("this command needs --params <file.json>")
    path = Path(cfg["params"])
    if not path.exists():
        raise ConfigError(f"params file does not exist: {path}")
    return SpectralModelParams.load_json(path)


def _write_manifest(out_dir: Path, cfg: dict, dataset_descriptor: dict | None,
                    finished: bool = False) -> None:
    manifest = {
        "command": cfg["command"],
        "config": {k: v for k, v in cfg.items() if k != "command"},
        "dataset": dataset_descriptor,
        "out_dir": str(out_dir),
        "version": __version__,
        "started_at": cfg.setdefault("_started_at", _utc_now()),
    }
    if finished:
        manifest["finished_at"] = _utc_now()
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2, default=str) + "\n"
    )


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Commands


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _merge_config(args)
    out = _out_dir(cfg)
    table, train_ds, _, descriptor, (train_idx, test_idx) = _prepare_splits(cfg)
    _write_manifest(out, cfg, descriptor)

    config = TrainConfig(
        iterations=cfg["iterations"], learning_rate=cfg["lr"],
        optimizer=cfg["optimizer"], reads=cfg["reads"], eps_nw=cfg["eps"],
        seed=cfg["seed"], backend=_make_backend_from(cfg),
        baseline_subtraction=cfg["baseline_subtraction"],
        n_visible=cfg["n_visible"], n_hidden=cfg["n_hidden"],
    )
    params, history = train(train_ds, config)

    history.save_csv(out / "history.csv", deterministic_timing=True)
    history.params_init.save_json(out / "params_init.json")
    params.save_json(out / "params_final.json")
    save_dataset_cache(out / "data_cache.csv", out / "data_cache.json",
                       table, train_ds.feature_means, train_ds.feature_stds,
                       train_idx, test_idx)
    _write_manifest(out, cfg, descriptor, finished=True)
    print(f"trained {cfg['iterations']} iterations; "
          f"final loss {history.records[-1].loss:.6g}; outputs in {out}")
    return 0


def _evaluate_once(params, train_ds, test_ds, backend, s, rep, cfg):
    ss = np.random.SeedSequence((cfg["seed"], s, rep))
    rng_spins, rng_freq = (np.random.default_rng(c) for c in ss.spawn(2))
    V, _ = backend.sample(params, s, rng_spins)
    omegas = sample_frequencies(params, V, rng_freq)
    rule = EndpointRule.from_training(train_ds.X, cfg["endpoint_alpha"],
                                      1.0 - cfg["endpoint_alpha"])
    rows = []
    for split, ds in (("train", train_ds), ("test", test_ds)):
        preds = nw_predict(ds.X, train_ds.X, train_ds.y, omegas, cfg["eps"])
        rows.append(("nw", split, r_squared(ds.y, preds), rmse(ds.y, preds), 0, 0))
        if cfg["llr_endpoints"]:
            preds, report = predict_with_endpoint_correction(
                ds.X, train_ds.X, train_ds.y, omegas, cfg["eps"], rule)
            rows.append(("nw_llr", split, r_squared(ds.y, preds), rmse(ds.y, preds),
                         report.n_endpoint_queries, report.n_llr_fallbacks))
    return rows


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _merge_config(args)
    out = _out_dir(cfg)
    params = _load_params(cfg)
    _, train_ds, test_ds, descriptor, _ = _prepare_splits(cfg)
    if params.n_omega != train_ds.d:
        raise ConfigError(
            f"params expect {params.n_omega} features, dataset has {train_ds.d}"
        )
    _write_manifest(out, cfg, descriptor)
    backend = _make_backend_from(cfg)
    s_values = _parse_int_list(cfg["s_list"])
    repeats = int(cfg["repeats"])
    if repeats < 1:
        raise ConfigError("--repeats must be >= 1")

    results = []
    for s in s_values:
        per_rep: dict[tuple, list] = {}
        for rep in range(repeats):
            for method, split, r2, rm, n_ep, n_fb in _evaluate_once(
                    params, train_ds, test_ds, backend, s, rep, cfg):
                per_rep.setdefault((method, split), []).append((r2, rm, n_ep, n_fb))
        for (method, split), vals in per_rep.items():
            r2s = np.array([v[0] for v in vals])
            rms = np.array([v[1] for v in vals])
            report = metrics_report(
                dataset=descriptor["source"], split=split, n_features_s=s,
                r2=r2s.mean(), rmse_value=rms.mean(),
                n_endpoint_queries=vals[0][2],
                n_llr_fallbacks=int(round(np.mean([v[3] for v in vals]))),
            )
            report.update({
                "method": method,
                "repeats": repeats,
                "r2_std": float(r2s.std()),
                "rmse_std": float(rms.std()),
            })
            results.append(report)

    (out / "results_eval.json").write_text(json.dumps(results, indent=2) + "\n")
    header = ("S,method,split,repeats,r2,r2_std,rmse,rmse_std,"
              "n_endpoint_queries,n_llr_fallbacks")
    lines = [header] + [
        f"{r['S']},{r['method']},{r['split']},{r['repeats']},{r['r2']!r},"
        f"{r['r2_std']!r},{r['rmse']!r},{r['rmse_std']!r},"
        f"{r['n_endpoint_queries']},{r['n_llr_fallbacks']}"
        for r in results
    ]
    (out / "results_eval.csv").write_text("\n".join(lines) + "\n")
    _write_manifest(out, cfg, descriptor, finished=True)
    for r in results:
        print(f"S={r['S']:>5} {r['method']:>6} {r['split']:>5}  "
              f"R2={r['r2']:.4f}  RMSE={r['rmse']:.4g}")
    return 0


def cmd_baseline(args: argparse.Namespace) -> int:
    cfg = _merge_config(args)
    out = _out_dir(cfg)
    _, train_ds, test_ds, descriptor, _ = _prepare_splits(cfg)
    _write_manifest(out, cfg, descriptor)
    grid = (default_bandwidth_grid() if cfg["grid"] is None
            else np.array([float(x) for x in str(cfg["grid"]).split(",")]))
    result = gaussian_nw_baseline(train_ds, test_ds, grid, cfg["eps"])
    result["dataset"] = descriptor["source"]
    (out / "results_baseline.json").write_text(
        json.dumps(result, sort_keys=True, indent=2) + "\n")
    _write_manifest(out, cfg, descriptor, finished=True)
    print(f"baseline gamma={result['gamma']}  "
          f"train R2={result['train_r2']:.4f}  test R2={result['test_r2']:.4f}")
    return 0


def cmd_sample_spectrum(args: argparse.Namespace) -> int:
    cfg = _merge_config(args)
    out = _out_dir(cfg)
    params = _load_params(cfg)
    _write_manifest(out, cfg, None)
    backend = _make_backend_from(cfg)
    s = int(cfg["s"])
    ss = np.random.SeedSequence((cfg["seed"], s))
    rng_spins, rng_freq = (np.random.default_rng(c) for c in ss.spawn(2))
    V, _ = backend.sample(params, s, rng_spins)
    omegas = sample_frequencies(params, V, rng_freq)
    save_frequencies_csv(omegas, out / "spectrum.csv")
    bins = int(cfg["bins"])
    hist = {
        "S": s,
        "bins": bins,
        "coordinates": [
            {
                "coordinate": m,
                "edges": np.histogram(omegas[:, m], bins=bins)[1].tolist(),
                "counts": np.histogram(omegas[:, m], bins=bins)[0].tolist(),
            }
            for m in range(omegas.shape[1])
        ],
    }
    (out / "spectrum_hist.json").write_text(json.dumps(hist, indent=2) + "\n")
    _write_manifest(out, cfg, None, finished=True)
    print(f"wrote {s} frequencies ({omegas.shape[1]} coordinates) to {out}")
    return 0


def cmd_kernel_dump(args: argparse.Namespace) -> int:
    cfg = _merge_config(args)
    out = _out_dir(cfg)
    params = _load_params(cfg)
    if cfg["split"] == "all":
        table = _load_table(cfg)
        dataset, _, _ = standardize_fit_transform(table)
        descriptor = {"source": table.source, "n": table.n, "d": table.d}
    else:
        _, dataset, _, descriptor, _ = _prepare_splits(cfg)
    if params.n_omega != dataset.d:
        raise ConfigError(
            f"params expect {params.n_omega} features, dataset has {dataset.d}"
        )
    _write_manifest(out, cfg, descriptor)
    s = int(cfg["s"])
    ss = np.random.SeedSequence((cfg["seed"], s))
    rng_spins, rng_freq = (np.random.default_rng(c) for c in ss.spawn(2))
    V, _ = _make_backend_from(cfg).sample(params, s, rng_spins)
    omegas = sample_frequencies(params, V, rng_freq)
    K = kernel_matrix(dataset.X, omegas)
    np.savetxt(out / f"kernel_{cfg['tag']}.csv", K, delimiter=",", fmt="%.17g")
    _write_manifest(out, cfg, descriptor, finished=True)
    print(f"wrote {K.shape[0]}x{K.shape[1]} kernel matrix (S={s}) to {out}")
    return 0


def _parse_int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    try:
        values = [int(tok) for tok in str(text).split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"bad integer list: {text!r}") from None
    if not values:
        raise ConfigError("empty S list")
    return values


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CapacityError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, SamplerProtocolError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
