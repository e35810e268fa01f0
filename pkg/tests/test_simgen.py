import numpy as np
import pytest

from mrmr.model import ResponseSchema
from mrmr.simgen import SimDesign, gen_coeff, gen_dataset, gen_omega, gen_truth, scale_sigma, simulate
from mrmr.errors import NonFiniteError


def test_example2_first_row_and_pd():
    np.testing.assert_allclose(gen_omega(2, 5)[0], [1, 0.8, 0.6, 0.4, 0.2])
    for q in range(5, 16):
        np.linalg.cholesky(gen_omega(2, q))


def test_example3_identity_permutation_and_seeded_permutation():
    assert np.array_equal(gen_omega(3, 7, permutation=np.arange(7)), gen_omega(2, 7))
    om = gen_omega(3, 9, seed=4)
    assert np.array_equal(om, om.T)
    assert np.array_equal(np.sort(om.ravel()), np.sort(gen_omega(2, 9).ravel()))


def test_example1_psd():
    for s in range(100):
        om = gen_omega(1, 3, seed=s)
        assert np.array_equal(om, om.T)
        assert np.linalg.eigvalsh(om)[0] >= 0


def test_scale_sigma_examples():
    np.testing.assert_allclose(scale_sigma(np.eye(3), 3.4), 3.4 * np.eye(3))
    S = np.array([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(scale_sigma(S, 2.0), S)
    np.testing.assert_allclose(scale_sigma(S, 1.0), [[1, 0.5], [0.5, 1]])
    with pytest.raises(ValueError):
        scale_sigma(-np.eye(2), 1.0)


def test_gen_coeff():
    s = ResponseSchema(3, 3, 3)
    B = gen_coeff(30, s, -0.7, 0.7, 0.5, seed=0)
    assert np.all((B == 0).sum(axis=0) == 15)
    assert np.all(B[B != 0] >= -0.7) and np.all(B[B != 0] <= 0.7)
    assert np.count_nonzero(gen_coeff(30, s, -0.7, 0.7, 0.0, seed=0)) == 270
    B = gen_coeff(10, s, 0.3, 0.3 + 1e-12, 0.2, seed=1)
    np.testing.assert_allclose(B[B != 0], 0.3, atol=1e-11)


def test_truth_scaling_consistency():
    truth = gen_truth(SimDesign(example_id=1, phi=2.6), 5)
    assert np.max(truth.sigma) == pytest.approx(2.6, abs=1e-12)
    np.testing.assert_allclose(truth.omega @ truth.sigma, np.eye(9), atol=1e-8)


def test_zero_coefficients_give_poisson1_and_fair_coins():
    d = SimDesign(p=4, n_train=1000, n_test=0)
    train, _ = gen_dataset(np.zeros((4, 9)), 1e-12 * np.eye(9), d, seed=0)
    Y = train.Y
    assert 0.9 < Y[:, 3:6].mean() < 1.1
    assert np.all((Y[:, 6:].mean(axis=0) > 0.4) & (Y[:, 6:].mean(axis=0) < 0.6))


def test_continuous_covariance_recovered():
    d = SimDesign(p=2, n_train=5000, n_test=0)
    truth = gen_truth(d, 1)
    train, _ = gen_dataset(np.zeros((2, 9)), truth.sigma, d, seed=1)
    C = np.cov(train.Y[:, :3].T)
    ref = truth.sigma[:3, :3]
    assert np.linalg.norm(C - ref) / np.linalg.norm(ref) < 0.15


def test_overflow_is_reported():
    d = SimDesign(p=2, schema=ResponseSchema(0, 1, 0), n_train=5, n_test=0)
    with pytest.raises(NonFiniteError):
        gen_dataset(np.full((2, 1), 500.0), np.eye(1), d, seed=0)


def test_determinism_and_types():
    a = simulate(SimDesign(phi=3.4), 9)
    b = simulate(SimDesign(phi=3.4), 9)
    for x, y in zip(a[1:], b[1:]):
        assert np.array_equal(x.X, y.X) and np.array_equal(x.Y, y.Y)
    assert np.array_equal(a[0].B, b[0].B)
    Y = a[1].Y
    assert np.all(Y[:, 3:6] == np.round(Y[:, 3:6])) and np.all(Y[:, 3:6] >= 0)
    assert set(np.unique(Y[:, 6:])) <= {0.0, 1.0}
    assert a[1].n == 50 and a[2].n == 30


def test_design_validation():
    with pytest.raises(ValueError):
        SimDesign(phi=0)
    with pytest.raises(ValueError):
        SimDesign(s_B=1.0)
    with pytest.raises(ValueError):
        SimDesign(a_B=1, b_B=0)
    with pytest.raises(ValueError):
        gen_omega(2, 0)
