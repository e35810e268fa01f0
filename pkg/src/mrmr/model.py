"""Response schema, link mappings and log-density kernels.

Responses are always ordered ``[continuous | count | binary]``.  The natural
parameter ``xi`` relates to the distribution parameter ``theta`` through the
element-wise map ``pi``: identity, ``exp`` and logistic on the three blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg
from scipy.special import expit, gammaln, log1p

from .errors import DomainError, NonFiniteError, NotPositiveDefiniteError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ResponseSchema:
    """Counts of continuous (``l``), count (``m``) and binary (``k``) responses."""

    l: int
    m: int
    k: int

    def __post_init__(self):
        for name in ("l", "m", "k"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.q < 1:
            raise ValueError("schema must contain at least one response")

    @property
    def q(self) -> int:
        return self.l + self.m + self.k

    @property
    def gaussian(self) -> slice:
        return slice(0, self.l)

    @property
    def poisson(self) -> slice:
        return slice(self.l, self.l + self.m)

    @property
    def binary(self) -> slice:
        return slice(self.l + self.m, self.q)

    @property
    def free(self) -> slice:
        """Latent coordinates not pinned by the observed responses."""
        return slice(self.l, self.q)

    def kinds(self) -> list[str]:
        return ["gaussian"] * self.l + ["poisson"] * self.m + ["binary"] * self.k

    def column_names(self) -> list[str]:
        return (
            [f"yG{i + 1}" for i in range(self.l)]
            + [f"yP{i + 1}" for i in range(self.m)]
            + [f"yB{i + 1}" for i in range(self.k)]
        )

    @classmethod
    def parse(cls, text: str) -> "ResponseSchema":
        """Parse ``"l,m,k"``."""
        parts = [p.strip() for p in str(text).split(",")]
        if len(parts) != 3:
            raise ValueError(f"schema must be 'l,m,k', got {text!r}")
        return cls(*(int(p) for p in parts))

    def to_dict(self) -> dict:
        return {"l": self.l, "m": self.m, "k": self.k}


@dataclass(frozen=True)
class MixedDataset:
    """Predictors ``X`` (n x p) and mixed responses ``Y`` (n x q)."""

    X: np.ndarray
    Y: np.ndarray
    schema: ResponseSchema

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        if X.ndim != 2 or Y.ndim != 2:
            raise ValueError("X and Y must be 2-D")
        if X.shape[0] != Y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        if Y.shape[1] != self.schema.q:
            raise ValueError(f"Y has {Y.shape[1]} columns, schema expects {self.schema.q}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("missing or non-finite entries are not supported")
        z = Y[:, self.schema.poisson]
        if np.any(z < 0) or np.any(z != np.round(z)):
            raise ValueError("count responses must be non-negative integers")
        w = Y[:, self.schema.binary]
        if np.any((w != 0) & (w != 1)):
            raise ValueError("binary responses must be 0 or 1")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "MixedDataset":
        rows = np.asarray(rows)
        return MixedDataset(self.X[rows], self.Y[rows], self.schema)


@dataclass(frozen=True, eq=False)
class PrecisionMatrix:
    """Symmetric positive definite precision ``Omega`` with cached inverse."""

    omega: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        omega = np.array(self.omega, dtype=float)
        if omega.ndim != 2 or omega.shape[0] != omega.shape[1]:
            raise NotPositiveDefiniteError(f"precision must be square, got shape {omega.shape}")
        scale = max(np.max(np.abs(omega)), 1.0)
        if np.max(np.abs(omega - omega.T)) > 1e-10 * scale:
            raise NotPositiveDefiniteError("precision matrix is not symmetric")
        omega = 0.5 * (omega + omega.T)
        try:
            chol = linalg.cholesky(omega, lower=True)
        except linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError("precision matrix is not positive definite") from exc
        if not np.all(np.diag(chol) > 0):
            raise NotPositiveDefiniteError("precision matrix is not positive definite")
        omega.setflags(write=False)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "_chol", chol)

    @classmethod
    def from_covariance(cls, sigma) -> "PrecisionMatrix":
        sigma = np.asarray(sigma, dtype=float)
        try:
            inv = linalg.inv(sigma)
        except linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError("covariance is singular") from exc
        return cls(0.5 * (inv + inv.T))

    @property
    def q(self) -> int:
        return self.omega.shape[0]

    @cached_property
    def sigma(self) -> np.ndarray:
        ident = np.eye(self.q)
        sigma = linalg.cho_solve((self._chol, True), ident)
        sigma = 0.5 * (sigma + sigma.T)
        sigma.setflags(write=False)
        return sigma

    @cached_property
    def logdet(self) -> float:
        return float(2.0 * np.sum(np.log(np.diag(self._chol))))


def _as_precision(omega) -> PrecisionMatrix:
    return omega if isinstance(omega, PrecisionMatrix) else PrecisionMatrix(omega)


def map_pi(xi, schema: ResponseSchema) -> np.ndarray:
    """Map natural parameters to distribution parameters along the last axis."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != schema.q:
        raise ValueError(f"expected last dimension {schema.q}, got {xi.shape[-1]}")
    if not np.all(np.isfinite(xi)):
        raise NonFiniteError("natural parameters must be finite")
    theta = xi.copy()
    with np.errstate(over="ignore"):
        theta[..., schema.poisson] = np.exp(xi[..., schema.poisson])
    theta[..., schema.binary] = expit(xi[..., schema.binary])
    if not np.all(np.isfinite(theta)):
        raise NonFiniteError("exp overflow: count rate is not finite")
    return theta


def map_pi_inv(theta, schema: ResponseSchema) -> np.ndarray:
    """Inverse of :func:`map_pi`: identity, ``log`` and ``logit`` per block."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != schema.q:
        raise ValueError(f"expected last dimension {schema.q}, got {theta.shape[-1]}")
    beta = theta[..., schema.poisson]
    gamma = theta[..., schema.binary]
    if np.any(~(beta > 0)):
        raise DomainError("count rates must be strictly positive")
    if np.any(~((gamma > 0) & (gamma < 1))):
        raise DomainError("binary probabilities must lie in (0, 1)")
    xi = theta.copy()
    xi[..., schema.poisson] = np.log(beta)
    xi[..., schema.binary] = np.log(gamma) - log1p(-gamma)
    return xi


def log_lik_counts_binary(y, theta, schema: ResponseSchema) -> float:
    """Log of the Poisson and Bernoulli factors of ``p(y | theta)``.

    The continuous block contributes no factor: after the identifiability
    simplification the continuous responses equal their means exactly.
    """
    y = np.asarray(y, dtype=float)
    theta = np.asarray(theta, dtype=float)
    z = y[schema.poisson]
    beta = theta[schema.poisson]
    w = y[schema.binary]
    gamma = theta[schema.binary]
    if np.any(~(beta > 0)) or np.any(~((gamma > 0) & (gamma < 1))):
        raise DomainError("theta outside the parameter space")
    out = np.sum(z * np.log(beta) - beta - gammaln(z + 1.0))
    out += np.sum(w * np.log(gamma) + (1.0 - w) * log1p(-gamma))
    return float(out)


def _log1pexp(eta):
    return np.maximum(eta, 0.0) + log1p(np.exp(-np.abs(eta)))


def log_lik_natural(Y, xi, schema: ResponseSchema) -> np.ndarray:
    """Vectorised count/binary log-likelihood evaluated in natural-parameter space.

    ``Y`` broadcasts against ``xi`` over all leading axes; returns the sum over
    the response axis.
    """
    Y = np.asarray(Y, dtype=float)
    xi = np.asarray(xi, dtype=float)
    z = Y[..., schema.poisson]
    eta_p = xi[..., schema.poisson]
    w = Y[..., schema.binary]
    eta_b = xi[..., schema.binary]
    with np.errstate(over="ignore"):
        pois = z * eta_p - np.exp(eta_p) - gammaln(z + 1.0)
    bern = w * eta_b - _log1pexp(eta_b)
    return pois.sum(axis=-1) + bern.sum(axis=-1)


def log_gaussian_prior(xi, x, B, omega) -> float:
    """Log N(xi; B^T x, Omega^{-1}) for one observation."""
    prec = _as_precision(omega)
    xi = np.asarray(xi, dtype=float)
    mean = np.asarray(B, dtype=float).T @ np.asarray(x, dtype=float)
    if xi.shape != mean.shape or prec.q != xi.shape[0]:
        raise ValueError("inconsistent dimensions")
    r = xi - mean
    quad = float(r @ prec.omega @ r)
    return -0.5 * quad + 0.5 * prec.logdet - 0.5 * prec.q * LOG_2PI
