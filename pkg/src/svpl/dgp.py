"""Synthetic observational benchmark with two optimal-treatment regimes.

Five arms, Gaussian covariates of which only the first two matter.  Arms 1
and 2 are jointly optimal below the hyperplane ``x1 + x2 = 0.5`` and arms 3
and 4 above it; arm 5 never is.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, OracleTruth, Rng, Stream

BETA_LOW = (10.0, 10.0, 1.0, 3.0, 2.0)
BETA_HIGH = (2.0, 1.0, 10.0, 10.0, 4.0)
N_ARMS = 5
BOUNDARY = 0.5


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticConfig:
    n: int = 6000
    d: int = 4
    K: int = N_ARMS
    noise_sd: float = 0.5
    beta_low: tuple[float, ...] = BETA_LOW
    beta_high: tuple[float, ...] = BETA_HIGH
    seed: int = 0
    secondary_outcome: bool = False
    secondary_noise_sd: float = field(default=0.5)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.d < 2:
            raise DimensionMismatch("the outcome model reads x1 and x2; need d >= 2")
        if self.K != N_ARMS:
            raise ValueError("the benchmark outcome model is defined for K = 5 arms")
        for b in (self.beta_low, self.beta_high):
            if len(b) != self.K or min(b) <= 0:
                raise ValueError("beta vectors need K strictly positive entries")


def _check_dim(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] < 2:
        raise DimensionMismatch(f"need at least 2 covariates, got {X.shape[1]}")
    return X


def mean_matrix(X: np.ndarray) -> np.ndarray:
    """Conditional mean outcome for every row and arm, shape (m, 5)."""
    X = _check_dim(X)
    x1, x2 = X[:, 0], X[:, 1]
    base = 2.0 * x1 - np.exp(x2)
    upper = (x1 + x2) >= BOUNDARY
    low_arms = np.where(upper, 0.0, 5.0 * np.exp(x1))
    high_arms = np.where(upper, 5.0 * (x2 + 1.0) ** 2, 0.0)
    out = np.repeat(base[:, None], N_ARMS, axis=1)
    out[:, 0] += low_arms
    out[:, 1] += low_arms
    out[:, 2] += high_arms
    out[:, 3] += high_arms
    return out


def conditional_mean(x, a: int) -> float:
    """Mean outcome at a single covariate vector for 1-based arm ``a``."""
    if not 1 <= a <= N_ARMS:
        raise ValueError(f"arm must be in 1..{N_ARMS}")
    return float(mean_matrix(np.asarray(x, float)[None, :])[0, a - 1])


def secondary_mean(X: np.ndarray) -> np.ndarray:
    """Mean of the secondary (harm) outcome: arm index plus 0.2 * x1."""
    X = _check_dim(X)
    arms = np.arange(1, N_ARMS + 1, dtype=float)
    return arms[None, :] + 0.2 * X[:, [0]]


def region_upper(X: np.ndarray) -> np.ndarray:
    X = _check_dim(X)
    return (X[:, 0] + X[:, 1]) >= BOUNDARY


def behavioral_policy(X, beta_low=BETA_LOW, beta_high=BETA_HIGH, raw: bool = False) -> np.ndarray:
    """Treatment-assignment probabilities; a single row in, a single row out.

    The sigmoid-weighted mixture of the two preference vectors is divided by
    its sum so each row lies on the probability simplex.
    """
    Xa = np.asarray(X, dtype=float)
    single = Xa.ndim == 1
    Xa = _check_dim(Xa)
    w = 1.0 / (1.0 + np.exp(-(Xa[:, 0] + Xa[:, 1] - BOUNDARY)))
    scores = w[:, None] * np.asarray(beta_low)[None, :] + (1 - w[:, None]) * np.asarray(beta_high)[None, :]
    out = scores if raw else scores / scores.sum(axis=1, keepdims=True)
    return out[0] if single else out


def generate(cfg: SyntheticConfig, rng: Rng | None = None) -> Dataset:
    """Draw one observational sample with full oracle truth attached."""
    rng = Rng(cfg.seed) if rng is None else rng
    gX = rng.child(Stream.DATA, 0).generator()
    gA = rng.child(Stream.DATA, 1).generator()
    gE = rng.child(Stream.DATA, 2).generator()
    X = gX.standard_normal((cfg.n, cfg.d))
    probs = behavioral_policy(X, cfg.beta_low, cfg.beta_high)
    # inverse-CDF categorical draw keeps one uniform per row
    u = gA.random(cfg.n)
    A = (u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
    A = np.minimum(A, cfg.K - 1)
    mu = mean_matrix(X)
    po = mu + cfg.noise_sd * gE.standard_normal((cfg.n, cfg.K))
    Y = po[np.arange(cfg.n), A]
    kw = {}
    if cfg.secondary_outcome:
        gS = rng.child(Stream.DATA, 3).generator()
        kw["secondary_mu"] = secondary_mean
        kw["secondary_outcomes"] = secondary_mean(X) + cfg.secondary_noise_sd * gS.standard_normal((cfg.n, cfg.K))
    oracle = OracleTruth.from_mu(mean_matrix, X, potential_outcomes=po, **kw)
    return Dataset(X, A, Y, cfg.K, oracle)
