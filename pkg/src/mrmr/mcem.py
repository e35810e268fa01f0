"""Monte Carlo EM fit of the mixed-response regression model.

Each iteration runs, in order:

1. ``e_step``   -- MH draws of the latent natural parameters under (B_t, Omega_t)
2. ``phi``      -- residual covariance of the draws around X B_t
3. ``omega``    -- graphical lasso on that covariance with ``lambda2``
4. ``b``        -- quadratic-approximation solve for B with the new Omega

The loop stops when the relative Frobenius change of the running mean of the
last three B and Omega iterates falls below ``em_tol``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg
from scipy.special import expit

from . import bcoef
from .errors import FitError, MRMRError, NonFiniteError
from .glasso import GlassoConfig, glasso_fit
from .model import LOG_2PI, MixedDataset, PrecisionMatrix, ResponseSchema, log_lik_natural
from .sampler import LatentSampleTensor, McmcConfig, e_step

AVERAGE_WINDOW = 3
INIT_RIDGE = 1e-2


@dataclass(frozen=True)
class FitConfig:
    lambda1: float = 0.1
    lambda2: float = 0.1
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    em_max_iter: int = 50
    em_tol: float = 1e-3
    init_B: Optional[np.ndarray] = None
    init_Sigma: Optional[np.ndarray] = None
    ridge_floor: float = bcoef.RIDGE_FLOOR
    b_sweeps: int = 1
    penalize_diagonal: bool = False
    glasso_tol: float = 1e-5
    glasso_max_iter: int = 200
    threads: int = 1

    def __post_init__(self):
        if not (self.lambda1 >= 0 and self.lambda2 >= 0):
            raise ValueError("lambda1 and lambda2 must be non-negative")
        if not self.em_tol > 0:
            raise ValueError("em_tol must be positive")
        if self.em_max_iter < 1 or self.b_sweeps < 1:
            raise ValueError("em_max_iter and b_sweeps must be positive")

    def with_lambdas(self, lambda1: float, lambda2: float) -> "FitConfig":
        return dataclasses.replace(self, lambda1=float(lambda1), lambda2=float(lambda2))

    def to_dict(self) -> dict:
        return {
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "mcmc": self.mcmc.to_dict(),
            "em_max_iter": self.em_max_iter,
            "em_tol": self.em_tol,
            "init_B": None if self.init_B is None else np.asarray(self.init_B).tolist(),
            "init_Sigma": None if self.init_Sigma is None else np.asarray(self.init_Sigma).tolist(),
            "ridge_floor": self.ridge_floor,
            "b_sweeps": self.b_sweeps,
            "penalize_diagonal": self.penalize_diagonal,
            "glasso_tol": self.glasso_tol,
            "glasso_max_iter": self.glasso_max_iter,
        }


@dataclass(frozen=True)
class EMIteration:
    iteration: int
    surrogate: float
    delta_B: float
    delta_Omega: float
    mean_acceptance: Optional[float]
    glasso_converged: bool

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True, eq=False)
class FittedModel:
    B_hat: np.ndarray
    omega_hat: PrecisionMatrix
    lambda1: float
    lambda2: float
    em_trace: list
    converged: bool
    q_approx: float
    schema: ResponseSchema
    latents: Optional[LatentSampleTensor] = field(default=None, repr=False)
    ebic: Optional[float] = None

    @property
    def n_iter(self) -> int:
        return len(self.em_trace)


def ridge_glm(X, y, kind: str, ridge: float = INIT_RIDGE, max_iter: int = 100, tol: float = 1e-10):
    """Ridge-penalised GLM without intercept; cheap starting values for B.

    Minimises the mean negative log-likelihood plus ``ridge / 2 * ||b||^2`` by
    Newton's method with step halving.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if kind == "gaussian":
        return linalg.solve(X.T @ X / n + ridge * np.eye(p), X.T @ y / n, assume_a="pos")

    def objective(b):
        eta = X @ b
        if kind == "poisson":
            with np.errstate(over="ignore"):
                val = np.mean(np.exp(eta) - y * eta)
        else:
            val = np.mean(np.logaddexp(0.0, eta) - y * eta)
        return val + 0.5 * ridge * b @ b

    b = np.zeros(p)
    f = objective(b)
    for _ in range(max_iter):
        eta = X @ b
        mu = np.exp(eta) if kind == "poisson" else expit(eta)
        wt = mu if kind == "poisson" else mu * (1.0 - mu)
        grad = X.T @ (mu - y) / n + ridge * b
        hess = (X * wt[:, None]).T @ X / n + ridge * np.eye(p)
        step = linalg.solve(hess, grad, assume_a="pos")
        t = 1.0
        for _ in range(50):
            cand = b - t * step
            f_cand = objective(cand)
            if np.isfinite(f_cand) and f_cand <= f:
                break
            t *= 0.5
        else:
            break
        converged = f - f_cand < tol * (1.0 + abs(f))
        b, f = cand, f_cand
        if converged:
            break
    return b


def initial_coefficients(data: MixedDataset, ridge: float = INIT_RIDGE) -> np.ndarray:
    cols = []
    for i, kind in enumerate(data.schema.kinds()):
        y = data.Y[:, i]
        if kind == "poisson":
            cols.append(ridge_glm(data.X, y, "poisson", ridge))
        elif kind == "binary":
            cols.append(ridge_glm(data.X, y, "binary", ridge))
        else:
            cols.append(ridge_glm(data.X, y, "gaussian", ridge))
    return np.column_stack(cols)


def q_tilde(data: MixedDataset, latents: LatentSampleTensor, B, omega) -> float:
    """Monte Carlo approximation of the expected complete-data log-likelihood.

    Average over draws of ``log p(y_j | xi) + log N(xi; B' x_j, Omega^{-1})``,
    summed over observations.
    """
    prec = omega if isinstance(omega, PrecisionMatrix) else PrecisionMatrix(omega)
    n, q = data.n, data.schema.q
    S = bcoef.residual_covariance(data.X, latents, B)
    gauss = -0.5 * n * float(np.sum(S * prec.omega)) + 0.5 * n * prec.logdet - 0.5 * n * q * LOG_2PI
    lik = float(log_lik_natural(data.Y[:, None, :], latents.samples, data.schema).mean(axis=1).sum())
    return gauss + lik


def m_step_objective(S, omega, B, lambda1, lambda2, penalize_diagonal=False) -> float:
    """``tr(S Omega) - log|Omega| + lambda1 ||B||_1 + lambda2 ||Omega||_1``."""
    prec = omega if isinstance(omega, PrecisionMatrix) else PrecisionMatrix(omega)
    om = prec.omega
    pen_om = np.abs(om).sum() if penalize_diagonal else np.abs(om).sum() - np.abs(np.diag(om)).sum()
    return float(np.sum(S * om) - prec.logdet + lambda1 * np.abs(B).sum() + lambda2 * pen_om)


def _rel_change(new, old):
    return float(np.linalg.norm(new - old) / (1.0 + np.linalg.norm(old)))


def fit(
    data: MixedDataset,
    cfg: FitConfig = FitConfig(),
    recorder: Optional[Callable[[str], None]] = None,
) -> FittedModel:
    """Run Monte Carlo EM at fixed ``(lambda1, lambda2)``."""
    if data.n < 2:
        raise ValueError("fit needs at least two observations")
    record = recorder or (lambda step: None)
    q = data.schema.q
    glasso_cfg = GlassoConfig(
        lambda2=cfg.lambda2, tol=cfg.glasso_tol, max_iter=cfg.glasso_max_iter,
        penalize_diagonal=cfg.penalize_diagonal,
    )
    B = initial_coefficients(data) if cfg.init_B is None else np.array(cfg.init_B, dtype=float)
    if B.shape != (data.p, q):
        raise ValueError(f"init_B must have shape {(data.p, q)}")
    sigma0 = np.eye(q) if cfg.init_Sigma is None else np.asarray(cfg.init_Sigma, dtype=float)
    omega = PrecisionMatrix.from_covariance(sigma0)

    trace: list[EMIteration] = []
    B_hist, Om_hist = [], []
    converged = False
    latents = None
    for t in range(cfg.em_max_iter):
        step = "e_step"
        try:
            record("e_step")
            latents = e_step(data, B, omega, cfg.mcmc, iteration=t, threads=cfg.threads)
            step = "phi"
            record("phi")
            S = bcoef.residual_covariance(data.X, latents, B)
            step = "omega"
            record("omega")
            g = glasso_fit(S, glasso_cfg)
            omega_new = g.precision
            step = "b"
            record("b")
            B_new = B
            for _ in range(cfg.b_sweeps):
                B_new = bcoef.update_B(data.X, latents, omega_new, cfg.lambda1, B_new, cfg.ridge_floor)
        except MRMRError as exc:
            raise FitError(f"EM iteration {t}, step {step}: {exc}", trace, t) from exc

        S_new = bcoef.residual_covariance(data.X, latents, B_new)
        value = m_step_objective(S_new, omega_new, B_new, cfg.lambda1, cfg.lambda2, cfg.penalize_diagonal)
        trace.append(
            EMIteration(
                iteration=t,
                surrogate=value,
                delta_B=float(np.linalg.norm(B_new - B)),
                delta_Omega=float(np.linalg.norm(omega_new.omega - omega.omega)),
                mean_acceptance=latents.mean_acceptance(),
                glasso_converged=g.converged,
            )
        )
        if not np.isfinite(value):
            raise FitError(f"EM iteration {t}: surrogate objective is not finite", trace, t)
        B, omega = B_new, omega_new
        B_hist.append(B)
        Om_hist.append(omega.omega)
        if len(B_hist) > AVERAGE_WINDOW:
            w = AVERAGE_WINDOW
            b_now = np.mean(B_hist[-w:], axis=0)
            b_prev = np.mean(B_hist[-w - 1:-1], axis=0)
            o_now = np.mean(Om_hist[-w:], axis=0)
            o_prev = np.mean(Om_hist[-w - 1:-1], axis=0)
            if _rel_change(b_now, b_prev) < cfg.em_tol and _rel_change(o_now, o_prev) < cfg.em_tol:
                converged = True
                break

    B_hat = bcoef.hard_threshold(B, cfg.ridge_floor)
    try:
        q_val = q_tilde(data, latents, B_hat, omega)
    except (FloatingPointError, ValueError) as exc:
        raise FitError(f"could not evaluate Q: {exc}", trace) from exc
    if not np.isfinite(q_val):
        raise FitError("approximate expected log-likelihood is not finite", trace)
    return FittedModel(
        B_hat=B_hat,
        omega_hat=omega,
        lambda1=cfg.lambda1,
        lambda2=cfg.lambda2,
        em_trace=trace,
        converged=converged,
        q_approx=q_val,
        schema=data.schema,
        latents=latents,
    )


def predict_natural(B, schema: ResponseSchema, X_new, intercept=None, classify: bool = False) -> np.ndarray:
    """Plug-in prediction ``pi(B' x [+ intercept])``.

    Binary columns hold probabilities, or 0/1 classes at cutoff 0.5 when
    ``classify`` is true.
    """
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    B = np.asarray(B, dtype=float)
    if X_new.shape[1] != B.shape[0]:
        raise ValueError(f"X_new has {X_new.shape[1]} columns, model expects {B.shape[0]}")
    eta = X_new @ B
    if intercept is not None:
        eta = eta + np.asarray(intercept, dtype=float)
    out = eta.copy()
    with np.errstate(over="ignore"):
        out[:, schema.poisson] = np.exp(eta[:, schema.poisson])
    out[:, schema.binary] = expit(eta[:, schema.binary])
    if classify:
        out[:, schema.binary] = (out[:, schema.binary] >= 0.5).astype(float)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("prediction overflowed")
    return out


def predict(model: FittedModel, X_new, classify: bool = False) -> np.ndarray:
    return predict_natural(model.B_hat, model.schema, X_new, classify=classify)
