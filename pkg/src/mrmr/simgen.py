"""Synthetic designs: three precision structures, phi-scaling, mixed-response draws."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import NonFiniteError
from .model import MixedDataset, PrecisionMatrix, ResponseSchema

EIGEN_FLOOR = 1e-3
MAX_RATE = 1e12


@dataclass(frozen=True)
class SimDesign:
    example_id: int = 2
    p: int = 30
    schema: ResponseSchema = field(default_factory=lambda: ResponseSchema(3, 3, 3))
    n_train: int = 50
    n_test: int = 30
    phi: float = 1.0
    sigma_X: float = 0.3
    a_B: float = -0.7
    b_B: float = 0.7
    s_B: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.example_id not in (1, 2, 3):
            raise ValueError("example_id must be 1, 2 or 3")
        if not self.phi > 0:
            raise ValueError("phi must be positive")
        if not 0 <= self.s_B < 1:
            raise ValueError("s_B must lie in [0, 1)")
        if not self.a_B < self.b_B:
            raise ValueError("a_B must be smaller than b_B")
        if self.p < 1 or self.n_train < 1 or self.n_test < 0:
            raise ValueError("p and n_train must be positive, n_test non-negative")
        if not self.sigma_X > 0:
            raise ValueError("sigma_X must be positive")

    def replace(self, **changes) -> "SimDesign":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["schema"] = self.schema.to_dict()
        return d


@dataclass(frozen=True, eq=False)
class SimTruth:
    B: np.ndarray
    sigma: np.ndarray
    omega: np.ndarray
    floor_applied: bool = False


def banded_omega(q: int) -> np.ndarray:
    """Unit diagonal with the i-th off-diagonal band equal to 0.2 * (5 - i), i = 1..4."""
    om = np.eye(q)
    for i in range(1, 5):
        if i < q:
            idx = np.arange(q - i)
            om[idx, idx + i] = om[idx + i, idx] = 0.2 * (5 - i)
    return om


def _gram_omega(q: int, rng: np.random.Generator):
    L = rng.uniform(-1.0, 1.0, size=(q, q))
    om = L.T @ L
    om = 0.5 * (om + om.T)
    floor = bool(np.linalg.eigvalsh(om)[0] < EIGEN_FLOOR)
    if floor:
        om = om + EIGEN_FLOOR * np.eye(q)
    return om, floor


def gen_omega(example_id: int, q: int, seed=None, permutation=None, return_flag: bool = False):
    """Precision matrix for one of the three simulation examples.

    1. ``L' L`` with ``L`` entries Uniform(-1, 1), plus ``1e-3 I`` when the
       smallest eigenvalue falls below ``1e-3``.
    2. Banded MA(0.8, 0.6, 0.4, 0.2) structure.
    3. The banded matrix with rows and columns jointly permuted.  Pass
       ``permutation`` to fix the permutation rather than drawing it.
    """
    if q < 1:
        raise ValueError("q must be at least 1")
    rng = np.random.default_rng(seed)
    floor = False
    if example_id == 1:
        om, floor = _gram_omega(q, rng)
    elif example_id == 2:
        om = banded_omega(q)
    elif example_id == 3:
        perm = rng.permutation(q) if permutation is None else np.asarray(permutation)
        if sorted(perm.tolist()) != list(range(q)):
            raise ValueError("permutation must be a permutation of range(q)")
        om = banded_omega(q)[np.ix_(perm, perm)]
    else:
        raise ValueError("example_id must be 1, 2 or 3")
    return (om, floor) if return_flag else om


def scale_sigma(sigma, phi: float) -> np.ndarray:
    """Rescale so that the largest entry of ``sigma`` equals ``phi``."""
    sigma = np.asarray(sigma, dtype=float)
    top = float(np.max(sigma))
    if not top > 0:
        raise ValueError("largest entry of sigma must be positive")
    return sigma * (phi / top)


def gen_coeff(p: int, schema: ResponseSchema, a_B: float, b_B: float, s_B: float, seed=None) -> np.ndarray:
    """Uniform(a_B, b_B) entries with exactly round(s_B * p) zeros per column."""
    rng = np.random.default_rng(seed)
    q = schema.q
    B = rng.uniform(a_B, b_B, size=(p, q))
    n_zero = int(round(s_B * p))
    for col in range(q):
        B[rng.permutation(p)[:n_zero], col] = 0.0
    return B


def gen_truth(design: SimDesign, seed=None) -> SimTruth:
    ss = np.random.SeedSequence(design.seed if seed is None else seed)
    s_omega, s_coef = ss.spawn(2)
    q = design.schema.q
    om, floor = gen_omega(design.example_id, q, s_omega, return_flag=True)
    sigma = scale_sigma(PrecisionMatrix(om).sigma, design.phi)
    omega_true = PrecisionMatrix.from_covariance(sigma).omega
    B = gen_coeff(design.p, design.schema, design.a_B, design.b_B, design.s_B, s_coef)
    return SimTruth(B=B, sigma=np.array(sigma), omega=np.array(omega_true), floor_applied=floor)


def draw_responses(X, B, sigma, schema: ResponseSchema, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    eps = rng.multivariate_normal(np.zeros(schema.q), sigma, size=n, method="cholesky")
    xi = X @ B + eps
    Y = np.empty_like(xi)
    Y[:, schema.gaussian] = xi[:, schema.gaussian]
    with np.errstate(over="ignore"):
        rate = np.exp(xi[:, schema.poisson])
    if not np.all(np.isfinite(rate)) or np.any(rate > MAX_RATE):
        raise NonFiniteError(
            "Poisson rate overflow; reduce a_B, b_B, sigma_X or phi to keep counts in a reasonable range"
        )
    Y[:, schema.poisson] = rng.poisson(rate)
    Y[:, schema.binary] = rng.random((n, schema.k)) < expit(xi[:, schema.binary])
    return Y


def gen_dataset(B, sigma, design: SimDesign, seed=None):
    """Independent train and test sets drawn from the model.

    Rows of X are N_p(0, sigma_X I), i.e. ``sigma_X`` is the predictor variance.
    """
    B = np.asarray(B, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if B.shape != (design.p, design.schema.q) or sigma.shape != (design.schema.q,) * 2:
        raise ValueError("B or sigma inconsistent with the design")
    rng = np.random.default_rng(np.random.SeedSequence(design.seed if seed is None else seed).spawn(3)[2])
    out = []
    for n in (design.n_train, design.n_test):
        X = rng.normal(0.0, np.sqrt(design.sigma_X), size=(n, design.p))
        Y = draw_responses(X, B, sigma, design.schema, rng)
        out.append(MixedDataset(X, Y, design.schema))
    return out[0], out[1]


def simulate(design: SimDesign, seed: Optional[int] = None):
    """Truth plus train/test data from one master seed."""
    truth = gen_truth(design, seed)
    train, test = gen_dataset(truth.B, truth.sigma, design, seed)
    return truth, train, test
