"""Command-line entry point: ``mrmr simulate | fit | predict | benchmark | diagnose``.

Exit codes: 0 on success (a fit that hit its iteration cap still counts, with a
warning on stderr), 1 on runtime failure, 2 on usage errors.

Wall-clock timings are written to ``*.timing.json`` sidecars so that all other
artifacts are byte-identical for fixed seeds, whatever ``--threads`` is.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import secrets
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import fileio
from .errors import MRMRError
from .evaluation import (
    METHODS,
    BenchmarkConfig,
    export_diagnostics,
    loss_predictions,
    run_benchmark,
)
from .mcem import FitConfig, fit, predict
from .model import ResponseSchema
from .sampler import McmcConfig, e_step
from .simgen import SimDesign, simulate
from .tuning import TuningGrid, ebic, grid_search

THREADS_ENV = "MRMR_THREADS"


class UsageError(Exception):
    pass


def _float_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _schema(text: str) -> ResponseSchema:
    try:
        return ResponseSchema.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def desk_grid(tau: float = 0.5) -> TuningGrid:
    """Every second point of the default grid, 4 x 4."""
    full = TuningGrid()
    return TuningGrid(full.lambda1_values[::2], full.lambda2_values[::2], tau)


def _grid(name: str, tau: float) -> TuningGrid:
    if name == "default":
        return TuningGrid(tau=tau)
    if name == "desk":
        return desk_grid(tau)
    raise UsageError(f"unknown grid {name!r}; use 'default' or 'desk'")


def _seed(value):
    return int(secrets.randbits(32)) if value is None else int(value)


def _manifest(command: str, config: dict, seed: int, inputs=()) -> dict:
    return {
        "format": "mrmr-manifest",
        "format_version": fileio.FORMAT_VERSION,
        "tool": "mrmr",
        "tool_version": __version__,
        "command": command,
        "seed": seed,
        "config": config,
        "inputs": {Path(p).name: fileio.file_digest(p) for p in inputs},
        "timing": "see the .timing.json sidecar",
    }


def _timing(path: Path, start: float, **extra) -> None:
    fileio.write_json({"wall_clock_seconds": time.perf_counter() - start, **extra},
                      path.with_name(path.name + ".timing.json"))


def _add_design_flags(p):
    p.add_argument("--example", type=int, choices=(1, 2, 3), default=2)
    p.add_argument("--p", type=int, default=30)
    p.add_argument("--schema", type=_schema, default=ResponseSchema(3, 3, 3))
    p.add_argument("--n-train", type=int, default=50)
    p.add_argument("--n-test", type=int, default=30)
    p.add_argument("--sigma-x", type=float, default=0.3)
    p.add_argument("--a-b", type=float, default=-0.7)
    p.add_argument("--b-b", type=float, default=0.7)
    p.add_argument("--s-b", type=float, default=0.5)


def _add_mcmc_flags(p):
    p.add_argument("--chain-length", type=int, default=1000)
    p.add_argument("--burn-in", type=int, default=300)
    p.add_argument("--em-max-iter", type=int, default=50)
    p.add_argument("--em-tol", type=float, default=1e-3)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--grid", default="default", help="'default' (8x8) or 'desk' (4x4)")


def _design(args, phi: float, seed: int) -> SimDesign:
    try:
        return SimDesign(
            example_id=args.example, p=args.p, schema=args.schema, n_train=args.n_train,
            n_test=args.n_test, phi=phi, sigma_X=args.sigma_x, a_B=args.a_b, b_B=args.b_b,
            s_B=args.s_b, seed=seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _fit_config(args, seed: int, threads: int) -> FitConfig:
    try:
        mcmc = McmcConfig(chain_length=args.chain_length, burn_in=args.burn_in, seed=seed)
        return FitConfig(mcmc=mcmc, em_max_iter=args.em_max_iter, em_tol=args.em_tol, threads=threads)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# ------------------------------------------------------------------ commands


def cmd_simulate(args) -> int:
    start = time.perf_counter()
    seed = _seed(args.seed)
    design = _design(args, args.phi, seed)
    truth, train, test = simulate(design)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_dataset(train, out / "train.csv")
    fileio.write_dataset(test, out / "test.csv")
    truth_doc = {
        "format": "mrmr-truth",
        "format_version": fileio.FORMAT_VERSION,
        "B": truth.B,
        "Sigma": truth.sigma,
        "Omega": truth.omega,
        "eigen_floor_applied": truth.floor_applied,
    }
    fileio.write_json(truth_doc, out / "truth.json")
    manifest = _manifest("simulate", {"design": design.to_dict()}, seed)
    manifest["schema"] = design.schema.to_dict()
    manifest["truth"] = truth_doc
    manifest["outputs"] = {name: fileio.file_digest(out / name) for name in ("train.csv", "test.csv", "truth.json")}
    fileio.write_json(manifest, out / "manifest.json")
    _timing(out / "manifest.json", start)
    return 0


def _schema_for(args, train_path: Path):
    if args.schema is not None:
        return args.schema
    manifest = train_path.parent / "manifest.json"
    if manifest.exists():
        d = fileio.read_json(manifest)
        if "schema" in d:
            return ResponseSchema(**d["schema"])
    return None


def cmd_fit(args) -> int:
    start = time.perf_counter()
    if (args.lambda1 is None) != (args.lambda2 is None):
        raise UsageError("--lambda1 and --lambda2 must be given together")
    seed = _seed(args.seed)
    train_path = Path(args.train)
    data = fileio.read_dataset(train_path, _schema_for(args, train_path))
    cfg = _fit_config(args, seed, args.threads)
    table = None
    if args.lambda1 is not None:
        if args.lambda1 < 0 or args.lambda2 < 0:
            raise UsageError("penalties must be non-negative")
        model = fit(data, cfg.with_lambdas(args.lambda1, args.lambda2))
        model = dataclasses.replace(model, ebic=ebic(model, data, args.tau))
        grid_doc = None
    else:
        grid = _grid(args.grid, args.tau)
        model, table = grid_search(data, grid, cfg, threads=args.threads)
        grid_doc = grid.to_dict()
    doc = fileio.model_to_dict(model)
    doc["ebic_table"] = None if table is None else [c.to_dict() for c in table]
    config = {"fit": cfg.to_dict(), "grid": grid_doc}
    doc["manifest"] = _manifest("fit", config, seed, [train_path])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fileio.write_json(doc, out)
    _timing(out, start)
    if not model.converged:
        print(f"warning: EM stopped at the iteration cap ({model.n_iter}) without meeting the tolerance; "
              "model written with converged=false", file=sys.stderr)
    return 0


def cmd_predict(args) -> int:
    start = time.perf_counter()
    model_path = Path(args.model)
    model = fileio.model_from_dict(fileio.read_json(model_path))
    X = fileio.read_predictors(args.data, p=model.B_hat.shape[0])
    pred = predict(model, X, classify=args.classify)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    names = model.schema.column_names()
    rows = [dict(zip(names, row)) for row in pred]
    out.write_text(fileio.rows_to_csv(rows, names))
    if args.metrics:
        data = fileio.read_dataset(args.data, model.schema)
        norm, pois, binary = loss_predictions(data.Y, predict(model, data.X), model.schema)
        metrics = {
            "format": "mrmr-metrics",
            "format_version": fileio.FORMAT_VERSION,
            "L_Norm": norm, "L_Poisson": pois, "L_Binary": binary,
            "manifest": _manifest("predict", {"classify": args.classify}, None, [model_path, Path(args.data)]),
        }
        fileio.write_json(metrics, args.metrics)
    _timing(out, start)
    return 0


def cmd_benchmark(args) -> int:
    start = time.perf_counter()
    seed = _seed(args.seed)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise UsageError(f"unknown methods {bad}; choose from {list(METHODS)}")
    if args.replicates < 1:
        raise UsageError("--replicates must be at least 1")
    fit_cfg = _fit_config(args, seed, args.threads)
    cfg = BenchmarkConfig(fit=fit_cfg, grid=_grid(args.grid, args.tau))
    reports, runtimes = [], {}
    for phi in args.phi:
        report = run_benchmark(_design(args, phi, seed), args.replicates, methods, cfg)
        reports.append(report)
        runtimes[repr(float(phi))] = report.runtimes
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "format": "mrmr-benchmark",
        "format_version": fileio.FORMAT_VERSION,
        "reports": [r.to_dict() for r in reports],
        "manifest": _manifest("benchmark", {"benchmark": cfg.to_dict(), "phi": args.phi,
                                            "replicates": args.replicates, "methods": methods}, seed),
    }
    fileio.write_json(doc, out / "report.json")
    rows = [row for r in reports for row in r.table_rows()]
    (out / "table.csv").write_text(fileio.rows_to_csv(rows))
    _timing(out / "report.json", start, per_fit_seconds=runtimes)
    failures = sum(1 for r in reports for rec in r.records if rec["error"])
    if failures:
        print(f"warning: {failures} method fits failed and were excluded; see report.json", file=sys.stderr)
    return 0


def _selection(text: str, n: int, q: int):
    pairs = []
    for item in text.split(","):
        try:
            obs, coord = (int(v) for v in item.split(":"))
        except ValueError:
            raise UsageError(f"selection items must look like obs:coord, got {item!r}") from None
        if not (0 <= obs < n and 0 <= coord < q):
            raise UsageError(f"selection {item!r} out of range for n={n}, q={q}")
        pairs.append((obs, coord))
    return pairs


def cmd_diagnose(args) -> int:
    start = time.perf_counter()
    seed = _seed(args.seed)
    model_path, train_path = Path(args.model), Path(args.train)
    model = fileio.model_from_dict(fileio.read_json(model_path))
    data = fileio.read_dataset(train_path, model.schema)
    try:
        mcmc = McmcConfig(chain_length=args.chain_length, burn_in=args.burn_in, seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.select:
        selection = _selection(args.select, data.n, model.schema.q)
    else:
        rng = np.random.default_rng(seed)
        free = np.arange(model.schema.l, model.schema.q)
        if free.size == 0:
            raise UsageError("no latent coordinates to diagnose: all responses are continuous")
        selection = [(int(rng.integers(data.n)), int(rng.choice(free))) for _ in range(args.n_random)]
    tensor = e_step(data, model.B_hat, model.omega_hat, mcmc, threads=args.threads)
    trace, acf = export_diagnostics(model, tensor, selection, max_lag=args.max_lag)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.csv").write_text(fileio.rows_to_csv(trace, ["obs", "coord", "draw", "value"]))
    (out / "acf.csv").write_text(fileio.rows_to_csv(acf, ["obs", "coord", "lag", "acf", "constant"]))
    fileio.write_json(_manifest("diagnose", {"mcmc": mcmc.to_dict(), "selection": selection,
                                            "max_lag": args.max_lag}, seed, [model_path, train_path]),
                      out / "manifest.json")
    _timing(out / "manifest.json", start)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrmr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mrmr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    threads = dict(type=int, default=_default_threads(),
                   help=f"worker cap (default from ${THREADS_ENV}, else 1)")

    p = sub.add_parser("simulate", help="generate a synthetic train/test pair")
    _add_design_flags(p)
    p.add_argument("--phi", type=float, default=1.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the joint model (grid search, or fixed penalties)")
    p.add_argument("--train", required=True)
    p.add_argument("--schema", type=_schema, default=None)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    _add_mcmc_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", **threads)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="plug-in predictions from a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--classify", action="store_true", help="emit 0/1 classes for binary columns")
    p.add_argument("--metrics", help="also score against responses in --data and write JSON here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("benchmark", help="replicated simulation comparison")
    _add_design_flags(p)
    p.add_argument("--phi", type=_float_list, default=[1.0, 1.8, 2.6, 3.4])
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--methods", default="proposed,sglm")
    _add_mcmc_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", **threads)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("diagnose", help="MCMC trace and ACF tables at a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--select", help="comma-separated obs:coord pairs (0-based)")
    p.add_argument("--n-random", type=int, default=4)
    p.add_argument("--max-lag", type=int, default=40)
    p.add_argument("--chain-length", type=int, default=1000)
    p.add_argument("--burn-in", type=int, default=300)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", **threads)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (MRMRError, OSError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
