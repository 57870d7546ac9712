"""
Command-line front end.

    pcvlab simulate  --config gen.toml --seed 7 --out runs/sim
    pcvlab sweep     --config plan.toml --out runs/sweep --workers 8
    pcvlab replicate --config plan.toml --out runs/rep
    pcvlab fit scores.csv --method grid --config fit.toml --out runs/fit

Config files are TOML or JSON. Every output directory receives one
``manifest.json`` holding the resolved configuration and master seed; passing
that manifest back as ``--config`` reproduces the run. Exit codes: 0 success,
2 input or validation error, 3 runtime or numerical error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from . import fit as _fit
from . import pca as _pca
from . import sweep as _sweep
from .lvgen import ConfigError, GeneratorConfig, Rotation, generate

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_RUNTIME = 3

MANIFEST = "manifest.json"


class InputError(Exception):
    """Anything wrong with what the user handed us: files, flags, config values."""


# ---------------------------------------------------------------- helpers


def load_config_file(path) -> dict:
    """Parse a TOML or JSON file into a dict. A run manifest is accepted as-is."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(raw)
        else:
            data = tomli.loads(raw.decode())
    except (json.JSONDecodeError, tomli.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise InputError(f"{path}: top level must be a table/object")
    return data


def _unwrap_manifest(data: dict, command: str) -> tuple[dict, dict | None]:
    """Return ``(config, manifest)``; ``manifest`` is None for ordinary config files."""
    if "command" in data and "config" in data and "version" in data:
        if data["command"] != command:
            raise InputError(f"manifest was written by {data['command']!r}, not {command!r}")
        return dict(data["config"]), data
    return data, None


def resolve_workers(flag: int | None, fallback: int = 1) -> int:
    if flag is not None:
        workers = flag
    elif os.environ.get("PCVLAB_WORKERS"):
        try:
            workers = int(os.environ["PCVLAB_WORKERS"])
        except ValueError:
            raise InputError(f"PCVLAB_WORKERS must be an integer, got {os.environ['PCVLAB_WORKERS']!r}") from None
    else:
        workers = fallback
    if workers < 1:
        raise InputError(f"workers must be >= 1, got {workers}")
    return workers


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "value"):
        return obj.value
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_manifest(out: Path, command: str, config: dict, seed: int, started: str, outputs: list[str]) -> Path:
    manifest = {
        "command": command,
        "config": _jsonable(config),
        "seed": int(seed),
        "version": __version__,
        "started": started,
        "finished": _now(),
        "outputs": sorted(outputs),
    }
    path = out / MANIFEST
    # key order matters: factor and domain order fix cell order and search encoding
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _matrix_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def _prepare_out(path) -> Path:
    if path is None:
        raise InputError("--out is required")
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc.strerror or exc}") from None
    if not os.access(out, os.W_OK):
        raise InputError(f"output directory {out} is not writable")
    return out


def _progress(done: int, total: int) -> None:
    print(f"progress {done}/{total}", flush=True)


def _coerce_seed(value) -> int:
    try:
        seed = int(value)
    except (TypeError, ValueError):
        raise InputError(f"seed must be an unsigned 64-bit integer, got {value!r}") from None
    if not 0 <= seed < 2**64:
        raise InputError(f"seed must be an unsigned 64-bit integer, got {value!r}")
    return seed


# ---------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    started = _now()
    data = load_config_file(args.config) if args.config else {}
    data, _ = _unwrap_manifest(data, "simulate")
    if args.seed is not None:
        data["seed"] = _coerce_seed(args.seed)
    try:
        config = GeneratorConfig.from_dict(data)
    except TypeError as exc:
        raise InputError(str(exc)) from None
    out = _prepare_out(args.out)

    system = generate(config)
    model = _pca.retain_kaiser_guttman(_pca.fit_pca(system.observed))
    p, m = config.n_observed, config.n_latents

    outputs = ["observed.csv", "latents.csv", "weights.csv", "eigenvalues.csv", "loadings.csv", "summary.json"]
    _matrix_csv(out / "observed.csv", [f"x{j + 1}" for j in range(p)], system.observed)
    _matrix_csv(out / "latents.csv", [f"latent_{j + 1}" for j in range(m)], system.latents)
    _matrix_csv(out / "weights.csv", [f"x{j + 1}" for j in range(p)], system.weights)
    _matrix_csv(
        out / "eigenvalues.csv",
        ["component", "eigenvalue", "variance_explained"],
        [(i + 1, lam, lam / p) for i, lam in enumerate(model.eigenvalues)],
    )
    _matrix_csv(
        out / "loadings.csv",
        ["variable", *[f"component_{i + 1}" for i in range(model.n_components)]],
        [(j + 1, *row) for j, row in enumerate(model.loadings)],
    )
    summary = {
        "k_retained": model.k_retained,
        "eigenvalues_above_one": [float(x) for x in model.eigenvalues[: model.k_retained]],
        "variance_explained": [float(x) for x in model.variance_explained],
        "total_variance_explained": float(np.sum(model.variance_explained)),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_manifest(out, "simulate", config.to_dict(), config.seed, started, outputs)
    print(f"k_retained {model.k_retained}", flush=True)
    return EXIT_OK


# ---------------------------------------------------------------- sweep / replicate


def _load_plan(args, command: str) -> _sweep.SweepPlan:
    data = load_config_file(args.config) if args.config else {}
    data, _ = _unwrap_manifest(data, command)
    if args.preset:
        data = {"preset": args.preset, **{k: v for k, v in data.items() if k != "factors"}}
    if not data:
        raise InputError("sweep needs --config <plan> or --preset <name>")
    if args.seed is not None:
        data["seed"] = _coerce_seed(args.seed)
    if args.simulations is not None:
        data["n_simulations"] = args.simulations
    if command == "replicate":
        data["paired"] = True
    data.pop("workers", None)
    try:
        return _sweep.SweepPlan.from_dict(data)
    except KeyError as exc:
        raise InputError(exc.args[0] if exc.args else str(exc)) from None
    except (TypeError, ValueError) as exc:
        raise InputError(f"plan: {exc}") from None


def write_sweep_outputs(out: Path, plan: _sweep.SweepPlan, results) -> list[str]:
    """Persist cell records and every derived table; returns paths relative to ``out``."""
    _sweep.save_results(results, out / "cells")
    outputs = [f"cells/cell_{r.index:05d}.json" for r in results]

    def put(name, text):
        (out / name).write_text(text)
        outputs.append(name)

    put("aggregate.csv", _sweep.aggregate_csv(results, plan))
    good = [r for r in results if r.ok]
    put("effects.csv", _sweep.effects_csv(_sweep.factor_effects(good)))
    put("curve_variance.csv", _sweep.curve_csv(_sweep.proxy_curve_variance(good), "variance_explained"))
    if plan.paired:
        put("curve_replication.csv", _sweep.curve_csv(_sweep.proxy_curve_replication(good), "replication"))
    rows = _sweep.validity_ve_correlation(good)
    lines = ["stratum,r,p,n"] + [f"{r['stratum']},{r['r']!r},{r['p']!r},{r['n']}" for r in rows]
    put("ve_correlation.csv", "\n".join(lines) + "\n")
    return outputs


def _cmd_sweep(args, command: str) -> int:
    started = _now()
    plan = _load_plan(args, command)
    workers = resolve_workers(args.workers, plan.workers)
    out = _prepare_out(args.out)
    print(f"cells {plan.n_cells} simulations/cell {plan.n_simulations} workers {workers}", flush=True)
    results = _sweep.run_sweep(plan, workers=workers, progress=_progress)
    outputs = write_sweep_outputs(out, plan, results)
    write_manifest(out, command, plan.to_dict(), plan.seed, started, outputs)
    failed = [r.index for r in results if not r.ok]
    if failed:
        print(f"{len(failed)} cells failed: {failed[:10]}", file=sys.stderr, flush=True)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_sweep(args) -> int:
    return _cmd_sweep(args, "sweep")


def cmd_replicate(args) -> int:
    return _cmd_sweep(args, "replicate")


# ---------------------------------------------------------------- fit

_FIT_DEFAULTS = {
    "method": "grid",
    "space": None,
    "n_replicates": 20,
    "n_iterations": 300,
    "metric": "sorted",
    "penalty": 0.0,
    "top_k": 100,
    "validity_simulations": 1000,
    "rotations": ["None", "Varimax", "Promax"],
}


def _resolve_fit_options(args) -> tuple[dict, str | None, int]:
    data = load_config_file(args.config) if args.config else {}
    data, manifest = _unwrap_manifest(data, "fit")
    data_path = data.pop("data", None)
    seed = data.pop("seed", 0)
    unknown = set(data) - set(_FIT_DEFAULTS)
    if unknown:
        raise InputError(f"{sorted(unknown)[0]}: unknown fit option")
    opts = {**_FIT_DEFAULTS, **data}
    for key in ("method", "space", "n_replicates", "n_iterations", "metric", "penalty", "top_k", "validity_simulations"):
        flag = getattr(args, key, None)
        if flag is not None:
            opts[key] = flag
    if args.rotations is not None:
        opts["rotations"] = args.rotations.split(",")
    if args.data is not None:
        data_path = args.data
    if args.seed is not None:
        seed = args.seed
    if data_path is None:
        raise InputError("fit needs a data CSV")
    if opts["method"] not in ("grid", "bayes"):
        raise InputError(f"method: expected 'grid' or 'bayes', got {opts['method']!r}")
    if opts["metric"] not in _fit.METRICS:
        raise InputError(f"metric: expected one of {sorted(_fit.METRICS)}, got {opts['metric']!r}")
    for key in ("n_replicates", "n_iterations", "top_k", "validity_simulations"):
        if not isinstance(opts[key], int) or opts[key] < 0:
            raise InputError(f"{key}: expected a non-negative integer, got {opts[key]!r}")
    try:
        opts["rotations"] = [Rotation(r).value for r in opts["rotations"]]
    except ValueError as exc:
        raise InputError(f"rotations: {exc}") from None
    return opts, str(data_path), _coerce_seed(seed)


def _load_space(spec, method: str, n: int, p: int) -> _fit.SearchSpace:
    if spec is None:
        spec = {"preset": "desk-200" if method == "grid" else "bayes"}
    elif isinstance(spec, str):
        spec = {"preset": spec} if not Path(spec).suffix else load_config_file(spec)
    try:
        space = _fit.SearchSpace.from_dict(spec)
        return space.pinned(n, p)
    except KeyError as exc:
        raise InputError(f"space: {exc.args[0] if exc.args else exc}") from None
    except (TypeError, ValueError) as exc:
        raise InputError(f"space: {exc}") from None


def cmd_fit(args) -> int:
    started = _now()
    opts, data_path, seed = _resolve_fit_options(args)
    try:
        names, data = _fit.read_score_csv(data_path)
    except OSError as exc:
        raise InputError(f"cannot read {data_path}: {exc.strerror or exc}") from None
    n, p = data.shape
    space = _load_space(opts["space"], opts["method"], n, p)
    if opts["method"] == "grid" and not space.is_finite:
        raise InputError("space: grid search needs finite domains")
    out = _prepare_out(args.out)
    workers = resolve_workers(args.workers)

    try:
        cov = _fit.empirical_covariance(data)
        k_empirical = _pca.fit_pca(data).k_retained
    except _pca.DataError as exc:
        raise InputError(f"{data_path}: {exc}") from None
    print(f"participants {n} scores {p} k_empirical {k_empirical} space size {space.size}", flush=True)

    common = dict(n_replicates=opts["n_replicates"], seed=seed, penalty=opts["penalty"], metric=opts["metric"])
    if opts["method"] == "grid":
        records = _fit.grid_search(space, cov, workers=workers, **common)
    else:
        records = _fit.bayesian_search(space, cov, n_iterations=opts["n_iterations"], **common)
    records = _fit.rank_records(records)
    if not any(r.ok for r in records):
        print("no configuration could be evaluated", file=sys.stderr, flush=True)
        return EXIT_RUNTIME

    k_slots = max(k_empirical, 1)
    best = next(r for r in records if r.ok)
    best.validity = _fit.estimate_empirical_validity(
        best, k_slots, opts["validity_simulations"], opts["rotations"], seed, workers=workers
    )
    summary = _fit.top_k_validity_summary(
        records, opts["top_k"], k_slots, opts["validity_simulations"], opts["rotations"], seed, workers
    )

    outputs = ["fits.jsonl", "fits.csv", "validity_top1.json", "validity_topk.json"]
    _fit.write_records_jsonl(out / "fits.jsonl", records)
    (out / "fits.csv").write_text(_fit.records_csv(records))
    top1 = {
        "config": best.config.to_dict(),
        "mae_mean": best.mae_mean,
        "k_empirical": k_empirical,
        "validity": {k: v.to_dict() for k, v in best.validity.items()},
    }
    (out / "validity_top1.json").write_text(json.dumps(top1, indent=2, sort_keys=True) + "\n")
    topk = {
        "k_requested": opts["top_k"],
        "k_used": summary.k_used,
        "shortfall": summary.shortfall,
        "slot_means": summary.slot_means,
        "fraction_above_half": summary.fraction_above_half,
        "fraction_above_half_pooled": summary.fraction_above_half_pooled,
        "n_estimates": summary.n_estimates,
    }
    (out / "validity_topk.json").write_text(json.dumps(_nan_to_none(topk), indent=2, sort_keys=True) + "\n")
    config = {"data": os.path.abspath(data_path), "seed": seed, **opts, "space": space.to_dict()}
    write_manifest(out, "fit", config, seed, started, outputs)
    print(f"best mae {best.mae_mean:.6f} m {best.config.n_latents}", flush=True)
    return EXIT_OK


def _nan_to_none(obj):
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_nan_to_none(v) for v in obj]
    if isinstance(obj, float) and obj != obj:
        return None
    return obj


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcvlab", description="Construct validity of PCA components.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML or JSON config file, or a manifest.json from an earlier run")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int, help="worker processes (default: $PCVLAB_WORKERS or 1)")

    p = sub.add_parser("simulate", help="generate one synthetic system and its PCA")
    common(p)
    p.set_defaults(func=cmd_simulate)

    for name, func, text in (
        ("sweep", cmd_sweep, "run a grid of configurations"),
        ("replicate", cmd_replicate, "grid sweep with paired datasets for replication"),
    ):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--preset", choices=sorted(_sweep.PRESETS), help="named sweep plan")
        p.add_argument("--simulations", type=int, help="override simulations per cell")
        p.set_defaults(func=func)

    p = sub.add_parser("fit", help="fit generator hyperparameters to an empirical score CSV")
    common(p)
    p.add_argument("data", nargs="?", help="participant x score CSV with a header row")
    p.add_argument("--method", choices=("grid", "bayes"))
    p.add_argument("--space", help="search-space file or preset name (grid-768, grid-omnibus, desk-200, bayes)")
    p.add_argument("--replicates", dest="n_replicates", type=int, help="synthetic replicates per configuration")
    p.add_argument("--iterations", dest="n_iterations", type=int, help="Bayesian evaluation budget")
    p.add_argument("--metric", choices=sorted(_fit.METRICS))
    p.add_argument("--penalty", type=float, help="objective penalty per latent (default 0)")
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--validity-simulations", dest="validity_simulations", type=int)
    p.add_argument("--rotations", help="comma-separated subset of None,Varimax,Promax")
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (InputError, ConfigError, _fit.ScoreCsvError) as exc:
        print(f"error: {exc}", file=sys.stderr, flush=True)
        return EXIT_INPUT
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # numerical or other runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr, flush=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
