"""Separate lasso GLMs per response, tuned by BIC.

Each column is fitted on its own: lasso linear regression for continuous
responses, lasso Poisson regression for counts and lasso logistic regression
for binary responses.  The objective for one column is

    (1/n) * negative log-likelihood(b0, b) + lambda * ||b||_1

with an unpenalised intercept.  Poisson and logistic fits use IRLS with cyclic
coordinate descent on each weighted least-squares sub-problem and step halving
on the penalised objective.  Predictors are standardised internally and the
coefficients returned on the original scale, following glmnet.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np
from scipy.special import expit, gammaln

from .mcem import predict_natural
from .model import MixedDataset, ResponseSchema

ETA_LIMIT = 50.0
DEV_RATIO_MAX = 0.999
MIN_WEIGHT = 1e-5


@numba.njit(cache=True, nogil=True)
def _wcd(X, w, z, beta, b0, lam, tol, max_iter):
    """Coordinate descent for (1/2n) sum w (z - b0 - X b)^2 + lam |b|_1, in place."""
    n, p = X.shape
    r = z - b0
    for j in range(p):
        if beta[j] != 0.0:
            for i in range(n):
                r[i] -= X[i, j] * beta[j]
    sw = 0.0
    for i in range(n):
        sw += w[i]
    v = np.zeros(p)
    for j in range(p):
        acc = 0.0
        for i in range(n):
            acc += w[i] * X[i, j] * X[i, j]
        v[j] = acc / n
    n_iter = 0
    for it in range(max_iter):
        n_iter = it + 1
        delta = 0.0
        g0 = 0.0
        for i in range(n):
            g0 += w[i] * r[i]
        d0 = g0 / sw
        if d0 != 0.0:
            b0 += d0
            for i in range(n):
                r[i] -= d0
            if abs(d0) > delta:
                delta = abs(d0)
        for j in range(p):
            if v[j] == 0.0:
                continue
            g = 0.0
            for i in range(n):
                g += w[i] * X[i, j] * r[i]
            g = g / n + v[j] * beta[j]
            if g > lam:
                new = (g - lam) / v[j]
            elif g < -lam:
                new = (g + lam) / v[j]
            else:
                new = 0.0
            diff = new - beta[j]
            if diff != 0.0:
                for i in range(n):
                    r[i] -= X[i, j] * diff
                beta[j] = new
                if abs(diff) * np.sqrt(v[j]) > delta:
                    delta = abs(diff) * np.sqrt(v[j])
        if delta < tol:
            break
    return b0, n_iter


def _nll(kind, y, eta):
    """Mean negative log-likelihood, dropping terms free of the parameters."""
    if kind == "gaussian":
        return 0.5 * np.mean((y - eta) ** 2)
    if kind == "poisson":
        with np.errstate(over="ignore"):
            return np.mean(np.exp(eta) - y * eta)
    return np.mean(np.logaddexp(0.0, eta) - y * eta)


def log_likelihood(kind: str, y, eta) -> float:
    """Full log-likelihood; Gaussian variance profiled out at RSS / n."""
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if kind == "gaussian":
        rss = max(float(np.sum((y - eta) ** 2)), 1e-300)
        return -0.5 * n * (np.log(2.0 * np.pi * rss / n) + 1.0)
    if kind == "poisson":
        with np.errstate(over="ignore"):
            return float(np.sum(y * eta - np.exp(eta) - gammaln(y + 1.0)))
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _mean_fn(kind, eta):
    if kind == "poisson":
        return np.exp(eta)
    if kind == "binary":
        return expit(eta)
    return eta


class _Diverged(Exception):
    pass


def lasso_glm(X, y, kind: str, lam: float, b0: float = 0.0, beta=None, tol: float = 1e-10,
              max_irls: int = 100, max_cd: int = 100_000):
    """Solve one penalised GLM at a single ``lam`` (no standardisation).

    Returns ``(b0, beta, converged)``; raises ``_Diverged`` if the linear
    predictor leaves the numerically safe range.
    """
    X = np.asfortranarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    beta = np.zeros(p) if beta is None else np.array(beta, dtype=float)
    if kind == "gaussian":
        b0, _ = _wcd(X, np.ones(n), y.copy(), beta, float(b0), lam, tol, max_cd)
        return b0, beta, True

    def objective(c0, c):
        return _nll(kind, y, c0 + X @ c) + lam * np.abs(c).sum()

    f = objective(b0, beta)
    for _ in range(max_irls):
        eta = b0 + X @ beta
        mu = _mean_fn(kind, eta)
        w = mu if kind == "poisson" else mu * (1.0 - mu)
        w = np.maximum(w, MIN_WEIGHT)
        zwork = eta + (y - mu) / w
        full_beta = beta.copy()
        full_b0, _ = _wcd(X, w, zwork, full_beta, float(b0), lam, tol, max_cd)
        # step halving on the penalised objective
        t = 1.0
        new_b0, new_beta = full_b0, full_beta
        f_new = objective(new_b0, new_beta)
        while not (np.isfinite(f_new) and f_new <= f + 1e-13 * max(1.0, abs(f))):
            t *= 0.5
            if t < 1e-10:
                return b0, beta, True
            new_b0 = b0 + t * (full_b0 - b0)
            new_beta = beta + t * (full_beta - beta)
            f_new = objective(new_b0, new_beta)
        if np.max(np.abs(new_b0 + X @ new_beta)) > ETA_LIMIT:
            raise _Diverged()
        change = max(abs(new_b0 - b0), float(np.max(np.abs(new_beta - beta), initial=0.0)))
        b0, beta = new_b0, new_beta
        done = abs(f - f_new) <= tol * max(1.0, abs(f)) and change < 1e-7
        f = f_new
        if done:
            return b0, beta, True
    return b0, beta, False


@dataclass(frozen=True, eq=False)
class ColumnFit:
    kind: str
    intercept: float
    coef: np.ndarray
    lambda_: Optional[float]
    lambdas: np.ndarray
    bic: np.ndarray
    failed: bool = False
    message: str = ""


@dataclass(frozen=True, eq=False)
class SGLMFit:
    schema: ResponseSchema
    columns: list = field(default_factory=list)

    @property
    def B(self) -> np.ndarray:
        return np.column_stack([c.coef for c in self.columns])

    @property
    def intercepts(self) -> np.ndarray:
        return np.array([c.intercept for c in self.columns])

    @property
    def failures(self) -> list:
        return [i for i, c in enumerate(self.columns) if c.failed]


def lambda_max(X, y) -> float:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.max(np.abs(X.T @ (y - y.mean()))) / X.shape[0])


def fit_column(X, y, kind: str, lambdas=None, n_lambda: int = 100, lambda_min_ratio: float = 1e-3,
               standardize: bool = True) -> ColumnFit:
    """Lasso path for one response, BIC-selected."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    center = X.mean(axis=0) if standardize else np.zeros(p)
    scale = X.std(axis=0) if standardize else np.ones(p)
    scale = np.where(scale > 0, scale, 1.0)
    Xs = (X - center) / scale

    if lambdas is None:
        top = lambda_max(Xs, y)
        if top <= 0:
            top = 1.0
        lambdas = np.geomspace(top, top * lambda_min_ratio, n_lambda)
    else:
        lambdas = np.sort(np.asarray(lambdas, dtype=float))[::-1]
        if np.any(~(lambdas > 0)):
            raise ValueError("lambda grid must be positive")

    ybar = y.mean()
    if kind == "poisson":
        b0 = np.log(max(ybar, 1e-10))
    elif kind == "binary":
        b0 = np.log(max(ybar, 1e-10)) - np.log(max(1.0 - ybar, 1e-10))
    else:
        b0 = ybar
    null_dev = -2.0 * (log_likelihood(kind, y, np.full(n, b0)))
    sat_dev = -2.0 * _saturated_loglik(kind, y)

    beta = np.zeros(p)
    bics = np.full(lambdas.shape[0], np.inf)
    path = []
    message = ""
    for i, lam in enumerate(lambdas):
        try:
            b0, beta, ok = lasso_glm(Xs, y, kind, lam, b0, beta)
        except _Diverged:
            message = f"IRLS diverged at lambda={lam:.4g}"
            break
        if not ok:
            message = f"IRLS did not converge at lambda={lam:.4g}"
            break
        eta = b0 + Xs @ beta
        ll = log_likelihood(kind, y, eta)
        nu = int(np.count_nonzero(beta)) + 1
        bics[i] = -2.0 * ll + nu * np.log(n)
        path.append((b0, beta.copy()))
        dev = -2.0 * ll
        if kind != "gaussian" and null_dev - sat_dev > 0 and (null_dev - dev) / (null_dev - sat_dev) > DEV_RATIO_MAX:
            break

    if not path:
        return ColumnFit(kind, float("nan"), np.full(p, np.nan), None, lambdas, bics, True,
                         message or "no lambda fitted")
    best = int(np.argmin(bics[: len(path)]))
    b0_s, beta_s = path[best]
    coef = beta_s / scale
    intercept = float(b0_s - center @ coef)
    return ColumnFit(kind, intercept, coef, float(lambdas[best]), lambdas, bics, False, message)


def _saturated_loglik(kind, y):
    if kind == "gaussian":
        return 0.0
    if kind == "poisson":
        pos = y > 0
        return float(np.sum(y[pos] * np.log(y[pos]) - y[pos]) - np.sum(gammaln(y + 1.0)))
    return 0.0


def fit_sglm(data: MixedDataset, lambda_grid=None, seed=None, n_lambda: int = 100,
             lambda_min_ratio: float = 1e-3, standardize: bool = True) -> SGLMFit:
    """Fit every response column separately.

    ``seed`` is accepted for interface symmetry; the fit is deterministic.
    """
    columns = []
    for i, kind in enumerate(data.schema.kinds()):
        columns.append(
            fit_column(data.X, data.Y[:, i], kind, lambda_grid, n_lambda, lambda_min_ratio, standardize)
        )
    return SGLMFit(data.schema, columns)


def predict_sglm(fit: SGLMFit, X_new, classify: bool = False) -> np.ndarray:
    if fit.failures:
        raise ValueError(f"SGLM fit failed for columns {fit.failures}")
    return predict_natural(fit.B, fit.schema, X_new, intercept=fit.intercepts, classify=classify)
