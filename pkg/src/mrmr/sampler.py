"""Random-walk Metropolis-Hastings for the latent natural parameters.

Sampling happens in natural-parameter space.  Under ``theta = pi(xi)`` the
Jacobian of the posterior over ``theta`` cancels, so the target over the free
(count and binary) block is simply

    conditional Gaussian prior given the continuous block  x  Poisson/Bernoulli
    likelihood.

Continuous coordinates are pinned at the observed responses.

All proposal noise for one E-step is drawn up front from a stream derived
from ``(seed, iteration)``; observation ``j`` always consumes row ``j`` of it,
so results do not depend on how observations are split across worker threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Sequence, Union

import numba
import numpy as np
from scipy import linalg

from .errors import NonFiniteError, NotPositiveDefiniteError
from .model import MixedDataset, PrecisionMatrix, _as_precision

ADAPT_WINDOW = 50


@dataclass(frozen=True)
class McmcConfig:
    """Chain settings.

    ``proposal_scale`` is either a positive float, a per-dimension array, or
    ``None`` for a Laplace-style default of ``2.38 / sqrt(d)`` times the
    approximate posterior standard deviation of each coordinate.
    """

    chain_length: int = 1000
    burn_in: int = 300
    proposal_scale: Optional[Union[float, Sequence[float]]] = None
    seed: int = 0
    target_acceptance: float = 0.3

    def __post_init__(self):
        if self.chain_length < 1:
            raise ValueError("chain_length must be positive")
        if not 0 <= self.burn_in < self.chain_length:
            raise ValueError("burn_in must satisfy 0 <= burn_in < chain_length")
        if not 0.0 < self.target_acceptance < 1.0:
            raise ValueError("target_acceptance must lie in (0, 1)")
        if self.proposal_scale is not None:
            scale = np.asarray(self.proposal_scale, dtype=float)
            if np.any(~(scale > 0)):
                raise ValueError("proposal_scale must be positive")

    @property
    def h(self) -> int:
        return self.chain_length - self.burn_in

    def to_dict(self) -> dict:
        scale = self.proposal_scale
        if scale is not None and not np.isscalar(scale):
            scale = [float(s) for s in scale]
        return {
            "chain_length": self.chain_length,
            "burn_in": self.burn_in,
            "proposal_scale": scale,
            "seed": self.seed,
            "target_acceptance": self.target_acceptance,
        }


@dataclass(frozen=True, eq=False)
class LatentSampleTensor:
    """Post-burn-in draws of ``xi``, shape ``(n, h, q)``, plus acceptance rates."""

    samples: np.ndarray
    acceptance_rates: np.ndarray

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def h(self) -> int:
        return self.samples.shape[1]

    @property
    def q(self) -> int:
        return self.samples.shape[2]

    @cached_property
    def moments(self):
        """``(sum over all draws of xi xi', per-observation sums of xi)``."""
        flat = self.samples.reshape(-1, self.q)
        return flat.T @ flat, self.samples.sum(axis=1)

    def mean_acceptance(self) -> Optional[float]:
        rates = self.acceptance_rates[np.isfinite(self.acceptance_rates)]
        return float(rates.mean()) if rates.size else None


def _draw_noise(rng: np.random.Generator, length: int, dim: int):
    return rng.standard_normal((length, dim)), rng.random(length)


def iteration_rng(seed: int, iteration: int) -> np.random.Generator:
    """Stream for all chains of EM iteration ``iteration``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(iteration),)))


def _adapt(scale, window_accepts, target):
    if window_accepts / ADAPT_WINDOW > target:
        return scale * 1.1
    return scale * 0.9


def mh_chain(
    target: Callable[[np.ndarray], float],
    init,
    cfg: McmcConfig,
    rng: Optional[np.random.Generator] = None,
):
    """Run one adaptive random-walk chain on an arbitrary log-density.

    The proposal scale is multiplied by 1.1 or 0.9 after every 50-step burn-in
    window, depending on whether the window acceptance exceeded
    ``cfg.target_acceptance``; it is frozen afterwards.

    Returns
    -------
    samples : ndarray, shape (h, d)
    acceptance_rate : float
        Fraction of accepted proposals after burn-in.
    """
    cur = np.array(init, dtype=float, ndmin=1)
    dim = cur.shape[0]
    lp_cur = float(target(cur))
    if not np.isfinite(lp_cur):
        raise NonFiniteError("target is not finite at the initial point")
    scale = np.broadcast_to(
        np.asarray(1.0 if cfg.proposal_scale is None else cfg.proposal_scale, dtype=float), (dim,)
    ).copy()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    noise, unif = _draw_noise(rng, cfg.chain_length, dim)
    log_u = np.log(unif)

    samples = np.empty((cfg.h, dim))
    window = 0
    accepted = 0
    for s in range(cfg.chain_length):
        prop = cur + scale * noise[s]
        lp_prop = float(target(prop))
        ok = np.isfinite(lp_prop) and log_u[s] < lp_prop - lp_cur
        if ok:
            cur = prop
            lp_cur = lp_prop
        if s < cfg.burn_in:
            window += ok
            if (s + 1) % ADAPT_WINDOW == 0:
                scale = _adapt(scale, window, cfg.target_acceptance)
                window = 0
        else:
            samples[s - cfg.burn_in] = cur
            accepted += ok
    return samples, accepted / cfg.h


@numba.njit(cache=True, nogil=True)
def _log_target(x, c, P, z, w, m):
    d = x.shape[0]
    quad = 0.0
    for a in range(d):
        ra = x[a] - c[a]
        acc = 0.0
        for b in range(d):
            acc += P[a, b] * (x[b] - c[b])
        quad += ra * acc
    out = -0.5 * quad
    for a in range(m):
        out += z[a] * x[a] - np.exp(x[a])
    for a in range(d - m):
        eta = x[m + a]
        if eta > 0:
            sp = eta + np.log1p(np.exp(-eta))
        else:
            sp = np.log1p(np.exp(eta))
        out += w[a] * eta - sp
    return out


@numba.njit(cache=True, nogil=True)
def _run_chains(init, cond_mean, P, Z, W, m, scale0, noise, log_u, burn_in, target, out, rates):
    n_obs, length, d = noise.shape
    h = length - burn_in
    prop = np.empty(d)
    for j in range(n_obs):
        cur = init[j].copy()
        scale = scale0[j].copy()
        c = cond_mean[j]
        z = Z[j]
        w = W[j]
        lp_cur = _log_target(cur, c, P, z, w, m)
        window = 0
        accepted = 0
        for s in range(length):
            for a in range(d):
                prop[a] = cur[a] + scale[a] * noise[j, s, a]
            lp_prop = _log_target(prop, c, P, z, w, m)
            ok = False
            if np.isfinite(lp_prop):
                if log_u[j, s] < lp_prop - lp_cur:
                    ok = True
            if ok:
                for a in range(d):
                    cur[a] = prop[a]
                lp_cur = lp_prop
            if s < burn_in:
                if ok:
                    window += 1
                if (s + 1) % 50 == 0:
                    if window / 50.0 > target:
                        for a in range(d):
                            scale[a] *= 1.1
                    else:
                        for a in range(d):
                            scale[a] *= 0.9
                    window = 0
            else:
                for a in range(d):
                    out[j, s - burn_in, a] = cur[a]
                if ok:
                    accepted += 1
        rates[j] = accepted / h


def initial_free_block(Y, schema) -> np.ndarray:
    """Moment-matched starting point: log(z + 0.5) and logit((w + 0.5) / 2)."""
    Y = np.asarray(Y, dtype=float)
    z = Y[..., schema.poisson]
    g = (Y[..., schema.binary] + 0.5) / 2.0
    return np.concatenate([np.log(z + 0.5), np.log(g) - np.log1p(-g)], axis=-1)


def conditional_prior(omega: np.ndarray, mean: np.ndarray, u: np.ndarray, n_gauss: int):
    """Conditional Gaussian of the free block given the continuous block.

    Returns the precision ``Omega_ff`` and the per-row conditional means.
    """
    P = omega[n_gauss:, n_gauss:]
    try:
        chol = linalg.cho_factor(P, lower=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("free block of the precision is not positive definite") from exc
    cond = mean[:, n_gauss:].copy()
    if n_gauss:
        cross = omega[n_gauss:, :n_gauss]
        resid = u - mean[:, :n_gauss]
        cond -= linalg.cho_solve(chol, cross @ resid.T).T
    return P, cond


def _default_scale(P, Y, schema):
    d = P.shape[0]
    curv = np.concatenate(
        [
            np.asarray(Y[:, schema.poisson], dtype=float) + 0.5,
            np.full((Y.shape[0], schema.k), 3.0 / 16.0),
        ],
        axis=1,
    )
    return 2.38 / np.sqrt(d) / np.sqrt(np.diag(P)[None, :] + curv)


def e_step(
    data: MixedDataset,
    B,
    omega,
    cfg: McmcConfig,
    *,
    iteration: int = 0,
    threads: int = 1,
) -> LatentSampleTensor:
    """Draw post-burn-in latent samples for every observation."""
    schema = data.schema
    prec = _as_precision(omega)
    B = np.asarray(B, dtype=float)
    if B.shape != (data.p, schema.q) or prec.q != schema.q:
        raise ValueError("B and Omega are inconsistent with the data")
    n, h, q, l = data.n, cfg.h, schema.q, schema.l
    d = schema.m + schema.k
    mean = data.X @ B
    u = data.Y[:, :l]

    samples = np.empty((n, h, q))
    samples[:, :, :l] = u[:, None, :]
    if d == 0:
        return LatentSampleTensor(samples, np.full(n, np.nan))

    P, cond = conditional_prior(prec.omega, mean, u, l)
    P = np.ascontiguousarray(P)
    Z = np.ascontiguousarray(data.Y[:, schema.poisson])
    W = np.ascontiguousarray(data.Y[:, schema.binary])
    init = np.ascontiguousarray(initial_free_block(data.Y, schema))
    if cfg.proposal_scale is None:
        scale0 = _default_scale(P, data.Y, schema)
    else:
        scale0 = np.broadcast_to(np.asarray(cfg.proposal_scale, dtype=float), (n, d)).copy()
    scale0 = np.ascontiguousarray(scale0)

    rng = iteration_rng(cfg.seed, iteration)
    noise = rng.standard_normal((n, cfg.chain_length, d))
    log_u = np.log(rng.random((n, cfg.chain_length)))

    free = np.empty((n, h, d))
    rates = np.empty(n)

    def run(rows):
        if len(rows) == 0:
            return
        lo, hi = rows[0], rows[-1] + 1
        _run_chains(
            init[lo:hi], cond[lo:hi], P, Z[lo:hi], W[lo:hi], schema.m, scale0[lo:hi],
            noise[lo:hi], log_u[lo:hi], cfg.burn_in, cfg.target_acceptance,
            free[lo:hi], rates[lo:hi],
        )

    chunks = np.array_split(np.arange(n), max(1, min(threads, n)))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, chunks))
    else:
        for chunk in chunks:
            run(chunk)

    samples[:, :, l:] = free
    return LatentSampleTensor(samples, rates)
