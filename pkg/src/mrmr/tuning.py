"""EBIC and the (lambda1, lambda2) grid search."""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import MRMRError
from .mcem import FitConfig, FittedModel, fit
from .model import MixedDataset

TAU = 0.5


def _default_values():
    return tuple(float(v) for v in np.geomspace(1e-3, 1e1, 8))


@dataclass(frozen=True)
class TuningGrid:
    lambda1_values: tuple = field(default_factory=_default_values)
    lambda2_values: tuple = field(default_factory=_default_values)
    tau: float = TAU

    def __post_init__(self):
        for name in ("lambda1_values", "lambda2_values"):
            values = tuple(float(v) for v in getattr(self, name))
            if not values:
                raise ValueError(f"{name} must be non-empty")
            if any(b < a for a, b in zip(values, values[1:])):
                raise ValueError(f"{name} must be sorted ascending")
            if any(not v > 0 for v in values):
                raise ValueError(f"{name} must be positive")
            object.__setattr__(self, name, values)
        if not 0 <= self.tau <= 1:
            raise ValueError("tau must lie in [0, 1]")

    def pairs(self):
        return [(a, b) for a in self.lambda1_values for b in self.lambda2_values]

    def to_dict(self) -> dict:
        return {"lambda1_values": list(self.lambda1_values),
                "lambda2_values": list(self.lambda2_values), "tau": self.tau}


def ebic_value(q_approx: float, nu_B: int, nu_omega: int, n: int, p: int, q: int, tau: float = TAU) -> float:
    """``-2 Q + (nu_B + nu_Omega) log n + 2 tau nu_B log(p q) + 4 tau nu_Omega log q``."""
    return (
        -2.0 * q_approx
        + (nu_B + nu_omega) * np.log(n)
        + 2.0 * tau * nu_B * np.log(p * q)
        + 4.0 * tau * nu_omega * np.log(q)
    )


def nonzero_counts(model: FittedModel, offdiag_only: bool = False):
    nu_B = int(np.count_nonzero(model.B_hat))
    om = model.omega_hat.omega
    nu_om = int(np.count_nonzero(om))
    if offdiag_only:
        nu_om -= int(np.count_nonzero(np.diag(om)))
    return nu_B, nu_om


def ebic(model: FittedModel, data: MixedDataset, tau: float = TAU, offdiag_only: bool = False) -> float:
    nu_B, nu_om = nonzero_counts(model, offdiag_only)
    return float(ebic_value(model.q_approx, nu_B, nu_om, data.n, data.p, data.schema.q, tau))


@dataclass(frozen=True)
class GridCell:
    lambda1: float
    lambda2: float
    ebic: Optional[float]
    converged: Optional[bool]
    n_iter: Optional[int]
    nu_B: Optional[int]
    nu_Omega: Optional[int]
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _fit_cell(data, cfg, l1, l2, tau, offdiag_only):
    try:
        model = fit(data, cfg.with_lambdas(l1, l2))
    except (MRMRError, np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
        return None, GridCell(l1, l2, None, None, None, None, None, f"{type(exc).__name__}: {exc}")
    score = ebic(model, data, tau, offdiag_only)
    nu_B, nu_om = nonzero_counts(model, offdiag_only)
    model = dataclasses.replace(model, ebic=score)
    return model, GridCell(l1, l2, score, model.converged, model.n_iter, nu_B, nu_om)


def grid_search(data: MixedDataset, grid: TuningGrid, cfg: FitConfig, threads: int = 1,
                offdiag_only: bool = False):
    """Fit every grid cell with the same MCMC seed and keep the lowest EBIC.

    Exact ties go to the lexicographically larger ``(lambda1, lambda2)``.

    Returns
    -------
    best : FittedModel
    table : list of GridCell, in grid order
    """
    pairs = grid.pairs()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda ab: _fit_cell(data, cfg, ab[0], ab[1], grid.tau, offdiag_only), pairs))
    else:
        results = [_fit_cell(data, cfg, a, b, grid.tau, offdiag_only) for a, b in pairs]

    best = None
    best_key = None
    for model, cell in results:
        if model is None:
            continue
        key = (cell.ebic, -cell.lambda1, -cell.lambda2)
        if best_key is None or key < best_key:
            best, best_key = model, key
    if best is None:
        raise MRMRError("every grid cell failed: " + "; ".join(c.error or "" for _, c in results))
    return best, [cell for _, cell in results]
