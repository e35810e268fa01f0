"""Loss measures, benchmark protocol, data splits and report helpers."""

from __future__ import annotations

import dataclasses
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import MRMRError
from .mcem import FitConfig, predict
from .model import MixedDataset, PrecisionMatrix, ResponseSchema
from .sglm import fit_sglm, predict_sglm
from .simgen import SimDesign, simulate
from .tuning import TuningGrid, grid_search

METRICS = ("L_B", "L_Omega", "L_Norm", "L_Poisson", "L_Binary")
METHODS = ("proposed", "sglm")


def loss_matrices(B_true, B_hat, omega_true=None, omega_hat=None):
    """Squared Frobenius distances ``||B - B_hat||^2`` and ``||Omega - Omega_hat||^2``.

    The precision loss is ``None`` when either precision is missing.
    """
    B_true = np.asarray(B_true, dtype=float)
    B_hat = np.asarray(B_hat, dtype=float)
    if B_true.shape != B_hat.shape:
        raise ValueError(f"B shapes differ: {B_true.shape} vs {B_hat.shape}")
    L_B = float(np.sum((B_true - B_hat) ** 2))
    if omega_true is None or omega_hat is None:
        return L_B, None
    omega_true = np.asarray(getattr(omega_true, "omega", omega_true), dtype=float)
    omega_hat = np.asarray(getattr(omega_hat, "omega", omega_hat), dtype=float)
    if omega_true.shape != omega_hat.shape:
        raise ValueError(f"Omega shapes differ: {omega_true.shape} vs {omega_hat.shape}")
    return L_B, float(np.sum((omega_true - omega_hat) ** 2))


def loss_predictions(y_true, y_pred, schema: ResponseSchema):
    """Pooled RMSE on continuous and count cells, misclassification rate on binary cells.

    Binary predictions are probabilities (or classes); class 1 when >= 0.5.
    An empty block yields ``None`` for its metric.
    """
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")

    def rmse(block):
        a, b = y_true[:, block], y_pred[:, block]
        return float(np.sqrt(np.mean((a - b) ** 2))) if a.size else None

    yb, pb = y_true[:, schema.binary], y_pred[:, schema.binary]
    me = float(np.mean((pb >= 0.5) != (yb == 1))) if yb.size else None
    return rmse(schema.gaussian), rmse(schema.poisson), me


def correlation_report(omega) -> np.ndarray:
    """Correlation matrix implied by a precision matrix."""
    prec = omega if isinstance(omega, PrecisionMatrix) else PrecisionMatrix(omega)
    sigma = np.array(prec.sigma)
    sd = np.sqrt(np.diag(sigma))
    corr = np.clip(sigma / np.outer(sd, sd), -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr


# --------------------------------------------------------------------- splits


def split_protocols(data: MixedDataset, mode: str, seed=None, n_train: Optional[int] = None,
                    groups=None, n_splits: int = 1):
    """Train/test partitions.

    ``mode="random_split"`` draws ``n_splits`` seeded partitions with ``n_train``
    training rows each.  ``mode="leave_one_group_out"`` yields one fold per
    distinct label in ``groups``, holding that group out.
    """
    n = data.n
    if mode == "random_split":
        if n_train is None or not 0 < n_train < n:
            raise ValueError("random_split needs 0 < n_train < n so the test set is non-empty")
        rng = np.random.default_rng(seed)
        out = []
        for _ in range(n_splits):
            perm = rng.permutation(n)
            tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
            out.append((data.subset(tr), data.subset(te)))
        return out
    if mode == "leave_one_group_out":
        if groups is None:
            raise ValueError("leave_one_group_out needs group labels")
        groups = np.asarray(groups)
        if groups.shape != (n,):
            raise ValueError("one group label per row is required")
        labels = list(dict.fromkeys(groups.tolist()))
        if len(labels) < 2:
            raise ValueError("leave_one_group_out needs at least two groups")
        out = []
        for g in labels:
            test = np.flatnonzero(groups == g)
            train = np.flatnonzero(groups != g)
            out.append((data.subset(train), data.subset(test)))
        return out
    raise ValueError(f"unknown split mode {mode!r}")


# ---------------------------------------------------------------- diagnostics


def autocorrelation(x, max_lag: int = 40):
    """Sample ACF at lags ``0..max_lag``; ``None`` for a constant chain."""
    x = np.asarray(x, dtype=float)
    xc = x - x.mean()
    denom = float(xc @ xc)
    if denom <= 0.0:
        return None
    lags = min(max_lag, x.size - 1)
    return np.array([float(xc[: x.size - k] @ xc[k:]) / denom for k in range(lags + 1)])


def export_diagnostics(model, tensor, selection, max_lag: int = 40):
    """Trace and ACF tables for selected ``(observation, coordinate)`` pairs.

    Returns ``(trace_rows, acf_rows)``; each row is a dict ready for CSV.
    ACF rows for zero-variance chains carry ``acf=None`` and ``constant=True``.
    """
    samples = tensor.samples
    trace_rows, acf_rows = [], []
    for obs, coord in selection:
        obs, coord = int(obs), int(coord)
        if not (0 <= obs < samples.shape[0] and 0 <= coord < samples.shape[2]):
            raise IndexError(f"selection ({obs}, {coord}) out of range")
        chain = samples[obs, :, coord]
        for t, v in enumerate(chain):
            trace_rows.append({"obs": obs, "coord": coord, "draw": t, "value": float(v)})
        acf = autocorrelation(chain, max_lag)
        if acf is None:
            acf_rows.append({"obs": obs, "coord": coord, "lag": None, "acf": None, "constant": True})
        else:
            for k, r in enumerate(acf):
                acf_rows.append({"obs": obs, "coord": coord, "lag": k, "acf": float(r), "constant": False})
    return trace_rows, acf_rows


# ------------------------------------------------------------------ benchmark


@dataclass(frozen=True)
class BenchmarkConfig:
    fit: FitConfig = field(default_factory=FitConfig)
    grid: TuningGrid = field(default_factory=TuningGrid)
    sglm_n_lambda: int = 100
    sglm_lambda_min_ratio: float = 1e-3
    workers: int = 1

    def to_dict(self) -> dict:
        return {
            "fit": self.fit.to_dict(),
            "grid": self.grid.to_dict(),
            "sglm_n_lambda": self.sglm_n_lambda,
            "sglm_lambda_min_ratio": self.sglm_lambda_min_ratio,
        }


def replicate_seed(master: int, replicate: int, stream: int = 0) -> int:
    return int(np.random.SeedSequence([int(master), int(replicate), int(stream)]).generate_state(1)[0])


def _aggregate(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return {"mean": None, "se": None, "count": 0}
    arr = np.array(vals, dtype=float)
    se = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else None
    return {"mean": float(arr.mean()), "se": se, "count": int(arr.size)}


@dataclass
class BenchmarkReport:
    design: dict
    methods: list
    records: list
    runtimes: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def method_records(self, method: str, include_failed: bool = False):
        return [r for r in self.records if r["method"] == method and (include_failed or r["error"] is None)]

    def values(self, method: str, metric: str) -> list:
        return [r[metric] for r in self.method_records(method)]

    def aggregates(self) -> dict:
        out = {}
        for method in self.methods:
            ok = self.method_records(method)
            failed = [r for r in self.records if r["method"] == method and r["error"] is not None]
            entry = {metric: _aggregate([r[metric] for r in ok]) for metric in METRICS}
            entry["n_replicates"] = len(ok)
            entry["n_excluded"] = len(failed)
            out[method] = entry
        return out

    def to_dict(self, include_runtimes: bool = False) -> dict:
        d = {
            "design": self.design,
            "methods": list(self.methods),
            "config": self.config,
            "records": self.records,
            "aggregates": self.aggregates(),
        }
        if include_runtimes:
            d["runtimes"] = self.runtimes
        return d

    def table_rows(self) -> list:
        rows = []
        agg = self.aggregates()
        for method in self.methods:
            row = {
                "example": self.design["example_id"],
                "p": self.design["p"],
                "phi": self.design["phi"],
                "method": method,
                "n_replicates": agg[method]["n_replicates"],
                "n_excluded": agg[method]["n_excluded"],
            }
            for metric in METRICS:
                row[f"{metric}_mean"] = agg[method][metric]["mean"]
                row[f"{metric}_se"] = agg[method][metric]["se"]
            rows.append(row)
        return rows


def _score_proposed(train, test, truth, cfg: BenchmarkConfig, mcmc_seed: int):
    fit_cfg = dataclasses.replace(cfg.fit, mcmc=dataclasses.replace(cfg.fit.mcmc, seed=mcmc_seed))
    model, _ = grid_search(train, cfg.grid, fit_cfg)
    L_B, L_Om = loss_matrices(truth.B, model.B_hat, truth.omega, model.omega_hat)
    norm, pois, binary = loss_predictions(test.Y, predict(model, test.X), test.schema)
    return {
        "L_B": L_B, "L_Omega": L_Om, "L_Norm": norm, "L_Poisson": pois, "L_Binary": binary,
        "lambda1": model.lambda1, "lambda2": model.lambda2, "converged": model.converged,
        "ebic": model.ebic,
    }


def _score_sglm(train, test, truth, cfg: BenchmarkConfig):
    fit = fit_sglm(train, n_lambda=cfg.sglm_n_lambda, lambda_min_ratio=cfg.sglm_lambda_min_ratio)
    if fit.failures:
        raise MRMRError(f"SGLM failed for columns {fit.failures}")
    L_B, _ = loss_matrices(truth.B, fit.B)
    norm, pois, binary = loss_predictions(test.Y, predict_sglm(fit, test.X), test.schema)
    notes = [f"col{i}: {c.message}" for i, c in enumerate(fit.columns) if c.message]
    return {
        "L_B": L_B, "L_Omega": None, "L_Norm": norm, "L_Poisson": pois, "L_Binary": binary,
        "lambdas": [c.lambda_ for c in fit.columns], "notes": notes,
    }


def run_replicate(design: SimDesign, replicate: int, methods: Sequence[str], cfg: BenchmarkConfig):
    """Generate one replicate and score every method on the same data."""
    seed = replicate_seed(design.seed, replicate)
    truth, train, test = simulate(design, seed)
    records, runtimes = [], {}
    for method in methods:
        rec = {"replicate": replicate, "seed": seed, "method": method, "error": None}
        start = time.perf_counter()
        try:
            if method == "proposed":
                rec.update(_score_proposed(train, test, truth, cfg, replicate_seed(design.seed, replicate, 1)))
            elif method == "sglm":
                rec.update(_score_sglm(train, test, truth, cfg))
            else:
                raise ValueError(f"unknown method {method!r}")
        except (MRMRError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            if isinstance(exc, ValueError) and str(exc).startswith("unknown method"):
                raise
            rec.update({m: None for m in METRICS})
            rec["error"] = f"{type(exc).__name__}: {exc}"
        runtimes[f"{replicate}/{method}"] = time.perf_counter() - start
        records.append(rec)
    return records, runtimes


def run_benchmark(design: SimDesign, replicates: int, methods: Sequence[str] = METHODS,
                  cfg: BenchmarkConfig = BenchmarkConfig()) -> BenchmarkReport:
    """Simulate ``replicates`` datasets and score each method on each.

    All methods within a replicate consume identical train/test data.
    Failures are recorded per replicate and excluded from aggregates.
    """
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    methods = list(methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(lambda r: run_replicate(design, r, methods, cfg), range(replicates)))
    else:
        results = [run_replicate(design, r, methods, cfg) for r in range(replicates)]
    records, runtimes = [], {}
    for recs, rts in results:
        records.extend(recs)
        runtimes.update(rts)
    return BenchmarkReport(design.to_dict(), methods, records, runtimes, cfg.to_dict())
