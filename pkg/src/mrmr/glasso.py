"""Graphical lasso: ``min_Omega tr(S Omega) - log|Omega| + lambda2 * ||Omega||_1``.

Block coordinate descent over columns of the covariance estimate ``W``; each
column sub-problem is a lasso solved by cyclic soft-thresholding.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np
from scipy import linalg

from .errors import ConvergenceWarning, NotPositiveDefiniteError
from .model import PrecisionMatrix


@dataclass(frozen=True)
class GlassoConfig:
    lambda2: float = 0.0
    tol: float = 1e-5
    max_iter: int = 200
    penalize_diagonal: bool = False

    def __post_init__(self):
        if not self.lambda2 >= 0:
            raise ValueError("lambda2 must be non-negative")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")


class GlassoResult(NamedTuple):
    precision: PrecisionMatrix
    n_iter: int
    converged: bool


@numba.njit(cache=True, nogil=True)
def _soft(x, t):
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


@numba.njit(cache=True, nogil=True)
def _bcd(S, W, beta, lam, tol, max_iter, inner_tol, inner_max):
    q = S.shape[0]
    n_iter = 0
    converged = False
    n_off = q * (q - 1)
    for it in range(max_iter):
        n_iter = it + 1
        change = 0.0
        for j in range(q):
            # lasso: min 0.5 b' W11 b - s12' b + lam |b|_1, indices != j
            for _ in range(inner_max):
                delta = 0.0
                for a in range(q):
                    if a == j:
                        continue
                    r = S[a, j]
                    for c in range(q):
                        if c != j and c != a:
                            r -= W[a, c] * beta[c, j]
                    new = _soft(r, lam) / W[a, a]
                    diff = new - beta[a, j]
                    if diff != 0.0:
                        beta[a, j] = new
                        if abs(diff) > delta:
                            delta = abs(diff)
                if delta < inner_tol:
                    break
            for a in range(q):
                if a == j:
                    continue
                v = 0.0
                for c in range(q):
                    if c != j:
                        v += W[a, c] * beta[c, j]
                change += abs(v - W[a, j]) * 2.0
                W[a, j] = v
                W[j, a] = v
        if n_off == 0 or change / n_off < tol:
            converged = True
            break
    return n_iter, converged


def _check_input(S):
    S = np.array(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"S must be square, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError("S must be finite")
    scale = max(np.max(np.abs(S)), 1.0)
    if np.max(np.abs(S - S.T)) > 1e-10 * scale:
        raise ValueError("S must be symmetric")
    return 0.5 * (S + S.T)


def glasso_fit(S, cfg: GlassoConfig = GlassoConfig()) -> GlassoResult:
    """Estimate a sparse precision matrix from the covariance ``S``.

    With ``lambda2 == 0`` the exact inverse of ``S`` is returned.  When
    ``cfg.penalize_diagonal`` is true the penalty covers every entry of
    ``Omega``; otherwise only the off-diagonal entries.
    """
    S = _check_input(S)
    q = S.shape[0]
    lam = float(cfg.lambda2)
    if lam == 0.0:
        try:
            chol = linalg.cho_factor(S, lower=True)
        except linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError("S is singular and lambda2 == 0") from exc
        omega = linalg.cho_solve(chol, np.eye(q))
        return GlassoResult(PrecisionMatrix(0.5 * (omega + omega.T)), 0, True)

    if np.any(np.diag(S) < 0):
        raise ValueError("S has negative diagonal entries")
    W = S.copy()
    if cfg.penalize_diagonal:
        W[np.diag_indices(q)] += lam
    if np.any(np.diag(W) <= 0):
        raise NotPositiveDefiniteError("S has a zero diagonal entry; glasso is undefined")
    beta = np.zeros((q, q))
    n_iter, converged = _bcd(
        S, W, beta, lam, cfg.tol, cfg.max_iter, min(cfg.tol, 1e-8) * 1e-2, 10_000
    )
    if not converged:
        warnings.warn(f"glasso did not converge in {cfg.max_iter} iterations", ConvergenceWarning)

    omega = np.zeros((q, q))
    for j in range(q):
        idx = np.arange(q) != j
        w12 = W[idx, j]
        b = beta[idx, j]
        omega[j, j] = 1.0 / (W[j, j] - w12 @ b)
        omega[idx, j] = -b * omega[j, j]
    upper = np.triu(omega, 1)
    omega = upper + upper.T + np.diag(np.diag(omega))
    return GlassoResult(PrecisionMatrix(omega), n_iter, bool(converged))


def stationarity_residual(S, omega, lambda2: float) -> float:
    """Largest off-diagonal violation of the glasso optimality conditions.

    At an optimum ``Sigma - S = lambda2 * sign(Omega)`` off the diagonal where
    ``Omega`` is non-zero, and ``|Sigma - S| <= lambda2`` where it is zero.
    """
    S = np.asarray(S, dtype=float)
    omega = np.asarray(omega, dtype=float)
    sigma = linalg.inv(omega)
    g = sigma - S
    off = ~np.eye(S.shape[0], dtype=bool)
    nz = off & (omega != 0)
    zero = off & (omega == 0)
    r_nz = np.abs(g[nz] - lambda2 * np.sign(omega[nz]))
    r_zero = np.maximum(np.abs(g[zero]) - lambda2, 0.0)
    return float(max(r_nz.max(initial=0.0), r_zero.max(initial=0.0)))
