"""Independent reference implementations used only by the tests.

None of these share code with the package: they use scalar ``math`` calls,
explicit loops, or a different optimisation algorithm.
"""

from __future__ import annotations

import math

import numpy as np


# ------------------------------------------------------------------- densities


def poisson_logpmf(z: int, rate: float) -> float:
    return z * math.log(rate) - rate - math.lgamma(z + 1)


def bernoulli_logpmf(w: int, prob: float) -> float:
    return math.log(prob) if w == 1 else math.log(1.0 - prob)


def row_loglik(z, rates, w, probs) -> float:
    total = 0.0
    for zi, r in zip(z, rates):
        total += poisson_logpmf(int(zi), float(r))
    for wi, g in zip(w, probs):
        total += bernoulli_logpmf(int(wi), float(g))
    return total


def mvn_logpdf(x, mean, cov) -> float:
    """Log-density via the covariance (not the precision)."""
    x = np.asarray(x, float)
    mean = np.asarray(mean, float)
    cov = np.atleast_2d(np.asarray(cov, float))
    d = x - mean
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    return float(-0.5 * d @ np.linalg.solve(cov, d) - 0.5 * logdet - 0.5 * len(x) * math.log(2 * math.pi))


# ---------------------------------------------------------------------- glasso


def glasso_objective(S, omega, lam, penalize_diagonal=False) -> float:
    sign, logdet = np.linalg.slogdet(omega)
    if sign <= 0:
        return np.inf
    pen = np.abs(omega).sum()
    if not penalize_diagonal:
        pen -= np.abs(np.diag(omega)).sum()
    return float(np.sum(S * omega) - logdet + lam * pen)


def glasso_proximal_gradient(S, lam, penalize_diagonal=False, tol=1e-12, max_iter=200_000):
    """Proximal gradient on Omega with backtracking that keeps Omega positive definite."""
    q = S.shape[0]
    omega = np.diag(1.0 / (np.diag(S) + (lam if penalize_diagonal else 0.0)))
    mask = np.ones((q, q)) if penalize_diagonal else 1.0 - np.eye(q)

    def smooth(om):
        sign, logdet = np.linalg.slogdet(om)
        return np.inf if sign <= 0 else float(np.sum(S * om) - logdet)

    f = smooth(omega)
    step = 1.0
    for _ in range(max_iter):
        grad = S - np.linalg.inv(omega)
        while True:
            z = omega - step * grad
            thr = step * lam * mask
            cand = np.sign(z) * np.maximum(np.abs(z) - thr, 0.0)
            cand = 0.5 * (cand + cand.T)
            f_c = smooth(cand)
            diff = cand - omega
            if np.isfinite(f_c) and f_c <= f + np.sum(grad * diff) + np.sum(diff * diff) / (2 * step):
                break
            step *= 0.5
        change = np.max(np.abs(cand - omega))
        omega, f = cand, f_c
        step *= 1.5
        if change < tol:
            break
    return omega


# ----------------------------------------------------------------- coefficients


def b_update_explicit(X, xi, omega, lam1, B_cur, floor=1e-6):
    """Solve the stationarity system by applying the normal operator to unit matrices.

    Rows of X are replicated h times; the operator is
    ``B -> Xrep' Xrep B Omega + n h lam1 B / max(|B_cur|, floor)``.
    """
    n, h, q = xi.shape
    p = X.shape[1]
    Xrep = np.repeat(X, h, axis=0)
    Xi = xi.reshape(n * h, q)
    G = Xrep.T @ Xrep
    W = n * h * lam1 / np.maximum(np.abs(B_cur), floor)
    A = np.zeros((p * q, p * q))
    col = 0
    for b in range(q):
        for a in range(p):
            E = np.zeros((p, q))
            E[a, b] = 1.0
            img = G @ E @ omega + W * E
            A[:, col] = np.concatenate([img[:, j] for j in range(q)])
            col += 1
    R = Xrep.T @ Xi @ omega
    rhs = np.concatenate([R[:, j] for j in range(q)])
    v = np.linalg.solve(A, rhs)
    return np.column_stack([v[j * p:(j + 1) * p] for j in range(q)])


# ---------------------------------------------------------------- 1-D posterior


def poisson_lognormal_posterior_mean(z, mu, prec, lo=-10.0, hi=10.0, nodes=100_001):
    """Posterior mean of xi under xi ~ N(mu, 1/prec), z ~ Poisson(exp(xi)), by quadrature."""
    grid = np.linspace(lo, hi, nodes)
    logp = -0.5 * prec * (grid - mu) ** 2 + z * grid - np.exp(grid)
    w = np.exp(logp - logp.max())
    return float(np.trapezoid(grid * w, grid) / np.trapezoid(w, grid)), float(
        np.trapezoid(np.exp(grid) * w, grid) / np.trapezoid(w, grid)
    )


# ------------------------------------------------------------------ lasso GLMs


def lasso_objective(X, y, kind, lam, b0, beta) -> float:
    eta = b0 + X @ beta
    if kind == "gaussian":
        nll = 0.5 * np.mean((y - eta) ** 2)
    elif kind == "poisson":
        nll = np.mean(np.exp(eta) - y * eta)
    else:
        nll = np.mean(np.logaddexp(0.0, eta) - y * eta)
    return float(nll + lam * np.abs(beta).sum())


def lasso_gradient(X, y, kind, b0, beta):
    eta = b0 + X @ beta
    if kind == "gaussian":
        mu = eta
    elif kind == "poisson":
        mu = np.exp(eta)
    else:
        mu = 1.0 / (1.0 + np.exp(-eta))
    r = mu - y
    return float(r.mean()), X.T @ r / len(y)


def lasso_fista(X, y, kind, lam, tol=1e-13, max_iter=200_000):
    """Accelerated proximal gradient with backtracking; unpenalised intercept."""
    n, p = X.shape
    theta = np.zeros(p + 1)
    yv = theta.copy()
    t = 1.0
    L = 1.0

    def f(v):
        return lasso_objective(X, y, kind, 0.0, v[0], v[1:])

    def prox(v, s):
        out = v.copy()
        out[1:] = np.sign(v[1:]) * np.maximum(np.abs(v[1:]) - s * lam, 0.0)
        return out

    F_old = np.inf
    for _ in range(max_iter):
        g0, g = lasso_gradient(X, y, kind, yv[0], yv[1:])
        grad = np.concatenate([[g0], g])
        fy = f(yv)
        while True:
            cand = prox(yv - grad / L, 1.0 / L)
            d = cand - yv
            if f(cand) <= fy + grad @ d + 0.5 * L * d @ d + 1e-15:
                break
            L *= 2.0
        t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        yv = cand + (t - 1) / t_new * (cand - theta)
        F = f(cand) + lam * np.abs(cand[1:]).sum()
        if F > F_old:  # restart momentum
            yv = cand.copy()
            t_new = 1.0
        done = np.max(np.abs(cand - theta)) < tol
        theta, t, F_old = cand, t_new, F
        if done:
            break
    return theta[0], theta[1:]


def ebic_formula(neg2q, nu_b, nu_om, n, p, q, tau):
    return neg2q + (nu_b + nu_om) * math.log(n) + 2 * tau * nu_b * math.log(p * q) + 4 * tau * nu_om * math.log(q)
