"""Closed-form coefficient update under a local quadratic approximation of the L1 norm.

With the current iterate ``B_hat`` the penalty ``lambda1 * ||B||_1`` is replaced by
``lambda1 * sum(B**2 / |B_hat|)``.  Setting the gradient of the resulting
quadratic to zero gives the linear system

    [Omega kron (h X'X) + diag(vec(lambda1 n h / |B_hat|))] vec(B)
        = vec(X' Xi_sum Omega)

where ``Xi_sum[j] = sum over draws of xi_j``.  ``vec`` stacks columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import SingularSystemError
from .model import _as_precision
from .sampler import LatentSampleTensor

RIDGE_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class MStepState:
    B: np.ndarray
    omega: np.ndarray
    surrogate_value: float


def _samples(latents):
    return latents.samples if isinstance(latents, LatentSampleTensor) else np.asarray(latents, dtype=float)


def penalty_weights(B_current, lambda1: float, n: int, h: int, ridge_floor: float = RIDGE_FLOOR):
    return lambda1 * n * h / np.maximum(np.abs(B_current), ridge_floor)


def update_B(X, latents, omega, lambda1: float, B_current, ridge_floor: float = RIDGE_FLOOR):
    """One quadratic-approximation solve for ``B`` with ``Omega`` held fixed."""
    X = np.asarray(X, dtype=float)
    xi = _samples(latents)
    omega = _as_precision(omega).omega
    B_current = np.asarray(B_current, dtype=float)
    n, h, q = xi.shape
    p = X.shape[1]
    if X.shape[0] != n or omega.shape != (q, q) or B_current.shape != (p, q):
        raise ValueError("inconsistent dimensions in update_B")
    if lambda1 < 0:
        raise ValueError("lambda1 must be non-negative")

    gram = h * (X.T @ X)
    sums = latents.moments[1] if isinstance(latents, LatentSampleTensor) else xi.sum(axis=1)
    cross = X.T @ sums
    lhs = np.kron(omega, gram)
    lhs[np.diag_indices_from(lhs)] += penalty_weights(B_current, lambda1, n, h, ridge_floor).ravel(order="F")
    rhs = (cross @ omega).ravel(order="F")
    try:
        vec_b = linalg.solve(lhs, rhs, assume_a="pos")
    except (linalg.LinAlgError, ValueError) as exc:
        raise SingularSystemError(
            "coefficient system is singular; use lambda1 > 0 when X'X is rank deficient"
        ) from exc
    if not np.all(np.isfinite(vec_b)):
        raise SingularSystemError("coefficient system produced non-finite values; use lambda1 > 0")
    return vec_b.reshape((p, q), order="F")


def residual_covariance(X, latents, B):
    """``Phi' Phi / (n h)`` with rows ``xi_j^(v) - B' x_j``."""
    M = np.asarray(X, dtype=float) @ np.asarray(B, dtype=float)
    if isinstance(latents, LatentSampleTensor):
        n, h = latents.n, latents.h
        outer, sums = latents.moments
        cross = sums.T @ M
        S = (outer - cross - cross.T + h * (M.T @ M)) / (n * h)
    else:
        xi = _samples(latents)
        n, h, q = xi.shape
        flat = (xi - M[:, None, :]).reshape(n * h, q)
        S = flat.T @ flat / (n * h)
    return 0.5 * (S + S.T)


def surrogate(X, latents, B, omega, lambda1: float, B_weights_from, ridge_floor: float = RIDGE_FLOOR):
    """Quadratic surrogate ``eta(B)`` around ``B_weights_from``."""
    omega = _as_precision(omega).omega
    S = residual_covariance(X, latents, B)
    w = 1.0 / np.maximum(np.abs(np.asarray(B_weights_from, dtype=float)), ridge_floor)
    return float(np.sum(S * omega) + lambda1 * np.sum(w * np.asarray(B) ** 2))


def hard_threshold(B, ridge_floor: float = RIDGE_FLOOR):
    B = np.array(B, dtype=float)
    B[np.abs(B) < 10.0 * ridge_floor] = 0.0
    return B
