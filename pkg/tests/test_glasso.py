import numpy as np
import pytest

from mrmr.errors import NotPositiveDefiniteError
from mrmr.glasso import GlassoConfig, glasso_fit, stationarity_residual

import oracles


def random_spd(rng, q, n=None):
    n = n or q + 3
    Z = rng.normal(size=(n, q))
    return Z.T @ Z / n + 0.05 * np.eye(q)


def test_identity_and_closed_form():
    np.testing.assert_allclose(glasso_fit(np.eye(3)).precision.omega, np.eye(3))
    S = np.array([[1.0, 0.5], [0.5, 1.0]])
    np.testing.assert_allclose(glasso_fit(S).precision.omega, np.array([[1, -0.5], [-0.5, 1]]) / 0.75, atol=1e-12)


def test_large_penalty_gives_diagonal():
    S = np.array([[1.0, 0.5], [0.5, 1.0]])
    om = glasso_fit(S, GlassoConfig(lambda2=10)).precision.omega
    assert om[0, 1] == 0.0 and om[1, 0] == 0.0
    np.testing.assert_allclose(np.diag(om), 1 / np.diag(S))
    # brute force over the off-diagonal value confirms 0 is optimal
    grid = np.linspace(-0.99, 0.99, 20_001)
    vals = [oracles.glasso_objective(S, np.array([[1.0, g], [g, 1.0]]), 10.0) for g in grid]
    assert abs(grid[int(np.argmin(vals))]) < 1e-3


def test_two_by_two_moderate_penalty_closed_form():
    # off-diagonal of Sigma_hat is s12 - lambda, diagonal equals S's
    S = np.array([[1.0, 0.5], [0.5, 1.0]])
    om = glasso_fit(S, GlassoConfig(lambda2=0.1, tol=1e-10)).precision.omega
    sig = np.array([[1.0, 0.4], [0.4, 1.0]])
    np.testing.assert_allclose(om, np.linalg.inv(sig), atol=1e-6)


@pytest.mark.parametrize("penalize_diagonal", [False, True])
def test_matches_proximal_gradient_oracle(penalize_diagonal):
    rng = np.random.default_rng(10)
    for _ in range(6):
        q = int(rng.integers(2, 5))
        S = random_spd(rng, q)
        lam = float(rng.uniform(0.02, 0.3))
        got = glasso_fit(S, GlassoConfig(lambda2=lam, penalize_diagonal=penalize_diagonal)).precision.omega
        ref = oracles.glasso_proximal_gradient(S, lam, penalize_diagonal)
        np.testing.assert_allclose(got, ref, atol=1e-3)


def test_stationarity_and_symmetry():
    rng = np.random.default_rng(1)
    for _ in range(10):
        S = random_spd(rng, 6)
        lam = 0.1
        res = glasso_fit(S, GlassoConfig(lambda2=lam))
        om = res.precision.omega
        assert np.array_equal(om, om.T)
        assert res.converged
        assert stationarity_residual(S, om, lam) <= 10 * 1e-5


def test_errors():
    with pytest.raises(ValueError):
        glasso_fit(np.array([[1.0, 0.2], [0.0, 1.0]]))
    with pytest.raises(NotPositiveDefiniteError):
        glasso_fit(np.ones((2, 2)))
    with pytest.raises(ValueError):
        GlassoConfig(lambda2=-1)


def test_non_convergence_is_flagged():
    rng = np.random.default_rng(2)
    S = random_spd(rng, 8)
    with pytest.warns(Warning):
        res = glasso_fit(S, GlassoConfig(lambda2=0.01, max_iter=1, tol=1e-14))
    assert not res.converged
