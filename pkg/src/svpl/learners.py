"""Per-arm outcome regressors with confidence bounds, and Q-learning labelers."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np
from scipy import optimize, spatial, special, stats

from .core import Dataset, Rng, SvplError


class ArmUnderflow(SvplError):
    pass


class RankDeficientWarning(UserWarning):
    pass


class PropensityUnderflowWarning(UserWarning):
    pass


RIDGE_FALLBACK = 1e-8
PROPENSITY_FLOOR = 1e-3


# --- bases -------------------------------------------------------------------

def _linear(X: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(len(X)), X])


def _dgp_aware(X: np.ndarray) -> np.ndarray:
    x1, x2 = X[:, 0], X[:, 1]
    up = ((x1 + x2) >= 0.5).astype(float)
    return np.column_stack([
        np.ones(len(X)), X, np.exp(x2),
        np.exp(x1) * (1 - up),
        up, up * x2, up * x2 ** 2,
    ])


@dataclass(frozen=True)
class BasisSpec:
    """Named feature expansion applied before per-arm least squares.

    ``linear`` is ``[1, x]``.  ``dgp-aware`` adds ``exp(x2)``, the region
    indicator and the region-specific interaction terms, which makes every
    arm's conditional mean of the synthetic benchmark exactly representable.
    """

    name: str = "linear"

    def __post_init__(self):
        if self.name not in _BASES:
            raise ValueError(f"unknown basis {self.name!r}; choose from {sorted(_BASES)}")

    def expand(self, X: np.ndarray) -> np.ndarray:
        return _BASES[self.name](np.atleast_2d(np.asarray(X, dtype=float)))


_BASES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "linear": _linear,
    "dgp-aware": _dgp_aware,
}


def _z(level: float) -> float:
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    return float(stats.norm.ppf(0.5 + level / 2))


# --- regressors --------------------------------------------------------------

class ArmRegressor:
    """Anything mapping an (m, d) covariate matrix to (m, K) predicted means."""

    K: int
    meta: dict

    def predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict_one(self, x: Sequence[float], a: int) -> float:
        return float(self.predict(np.asarray(x, float)[None, :])[0, a - 1])


class BoundedArmRegressor(ArmRegressor):
    """Adds two-sided bounds on the conditional mean.

    ``bounds(X, level)`` returns ``(lower, upper)`` such that the interval is a
    ``level`` two-sided confidence interval, i.e. each tail carries
    ``(1 - level) / 2``.
    """

    def bounds(self, X: np.ndarray, level: float) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def lower(self, X: np.ndarray, level: float) -> np.ndarray:
        return self.bounds(X, level)[0]

    def upper(self, X: np.ndarray, level: float) -> np.ndarray:
        return self.bounds(X, level)[1]


@dataclass
class FunctionRegressor(BoundedArmRegressor):
    """Wrap a known mean function; optional fixed half-width for bounds."""

    fn: Callable[[np.ndarray], np.ndarray]
    K: int
    half_width: float = 0.0
    meta: dict = field(default_factory=dict)

    def predict(self, X):
        return np.asarray(self.fn(np.atleast_2d(X)), dtype=float)

    def bounds(self, X, level):
        m = self.predict(X)
        return m - self.half_width, m + self.half_width


@dataclass
class LinearArmRegressor(BoundedArmRegressor):
    """Per-arm (weighted) least squares on a basis expansion."""

    basis: BasisSpec
    coef: np.ndarray        # (K, p)
    cov_unscaled: np.ndarray  # (K, p, p), (Phi' W Phi)^-1
    sigma2: np.ndarray      # (K,)
    meta: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.coef.shape[0]

    def predict(self, X):
        Phi = self.basis.expand(X)
        return Phi @ self.coef.T

    def standard_errors(self, X) -> np.ndarray:
        Phi = self.basis.expand(X)
        q = np.einsum("mp,kpq,mq->mk", Phi, self.cov_unscaled, Phi)
        return np.sqrt(np.maximum(q, 0.0) * self.sigma2[None, :])

    def bounds(self, X, level):
        m = self.predict(X)
        half = _z(level) * self.standard_errors(X)
        return m - half, m + half


def _rows_by_arm(ds: Dataset, fold) -> tuple[np.ndarray, list[np.ndarray]]:
    fold = np.arange(ds.n) if fold is None else np.asarray(fold, dtype=np.int64)
    return fold, [fold[ds.A[fold] == a] for a in range(ds.K)]


def fit_linear_arm_regressor(ds: Dataset, fold=None, basis: BasisSpec | str = "linear",
                             weights: Optional[np.ndarray] = None) -> LinearArmRegressor:
    """Per-arm OLS on ``fold`` rows with analytic Gaussian mean bounds.

    ``weights`` (length ``ds.n``) turns each fit into weighted least squares.
    Raises ``ArmUnderflow`` if an arm has fewer than ``p + 1`` rows.  A
    singular design gets a ``1e-8`` ridge and a ``RankDeficientWarning``.
    """
    basis = BasisSpec(basis) if isinstance(basis, str) else basis
    _, by_arm = _rows_by_arm(ds, fold)
    p = basis.expand(ds.X[:1]).shape[1]
    coefs, covs, s2 = [], [], []
    ridge_arms = []
    for a, rows in enumerate(by_arm):
        if len(rows) < p + 1:
            raise ArmUnderflow(f"arm {a + 1} has {len(rows)} rows, need {p + 1}")
        Phi = basis.expand(ds.X[rows])
        y = ds.Y[rows]
        w = np.ones(len(rows)) if weights is None else np.asarray(weights, float)[rows]
        G = Phi.T @ (Phi * w[:, None])
        if np.linalg.matrix_rank(G) < p:
            G = G + RIDGE_FALLBACK * np.eye(p)
            ridge_arms.append(a + 1)
        G_inv = np.linalg.inv(G)
        beta = G_inv @ (Phi.T @ (w * y))
        resid = y - Phi @ beta
        # weighted residual variance; with unit weights this is RSS / (n - p)
        s2.append(float((w * resid ** 2).sum() / (len(rows) - p)))
        coefs.append(beta)
        covs.append(G_inv)
    meta: dict[str, Any] = {"learner": "ols", "basis": basis.name}
    if ridge_arms:
        warnings.warn(f"singular design for arms {ridge_arms}; ridge {RIDGE_FALLBACK} applied",
                      RankDeficientWarning, stacklevel=2)
        meta["ridge_arms"] = ridge_arms
    if weights is not None:
        meta["weighted"] = True
    return LinearArmRegressor(basis, np.array(coefs), np.array(covs), np.array(s2), meta)


@dataclass
class KnnBootstrapRegressor(BoundedArmRegressor):
    """Per-arm k-nearest-neighbour means with percentile-bootstrap bounds.

    Bootstrap refits are exact: each replicate reweights the arm's rows by
    multinomial counts and takes the first ``k`` resampled points in distance
    order.  Only the ``pool`` nearest original rows are scanned, which is
    exact unless a replicate draws fewer than ``k`` points from them (then the
    available weight is renormalized).
    """

    k: int
    B: int
    trees: list
    ys: list
    counts: list            # per arm (B, n_a) bootstrap multiplicities
    meta: dict = field(default_factory=dict)
    chunk: int = 256
    _cache: Optional[tuple] = field(default=None, repr=False, compare=False)

    @property
    def K(self) -> int:
        return len(self.trees)

    def _neighbors(self, X, a, m):
        _, idx = self.trees[a].query(np.atleast_2d(X), k=m)
        return idx.reshape(len(np.atleast_2d(X)), m)

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        out = np.empty((len(X), self.K))
        for a in range(self.K):
            idx = self._neighbors(X, a, self.k)
            out[:, a] = self.ys[a][idx].mean(axis=1)
        return out

    def bootstrap_predictions(self, X) -> np.ndarray:
        """(B, m, K) array of bootstrap-refit predictions.

        The last result is cached so sweeps over levels on one test matrix
        refit only once.
        """
        X = np.atleast_2d(np.asarray(X, float))
        key = (X.shape, hash(X.tobytes()))
        if self._cache is not None and self._cache[0] == key:
            return self._cache[1]
        out = np.empty((self.B, len(X), self.K))
        for a in range(self.K):
            n_a = len(self.ys[a])
            # draws landing in the j nearest rows are ~Poisson(j); this pool
            # holds k of them except with negligible probability
            pool = min(n_a, self.k + int(np.ceil(5 * np.sqrt(self.k))) + 10)
            idx = self._neighbors(X, a, pool)
            C = self.counts[a]
            y = self.ys[a]
            for s in range(0, len(X), self.chunk):
                sl = slice(s, s + self.chunk)
                c = C[:, idx[sl]]                           # (B, mc, pool)
                before = np.cumsum(c, axis=2, dtype=np.int32) - c
                w = np.clip(self.k - before, 0, c).astype(np.float32)
                tot = w.sum(axis=2)
                out[:, sl, a] = np.einsum("bmp,mp->bm", w, y[idx[sl]].astype(np.float32)) / tot
        self._cache = (key, out)
        return out

    def bounds(self, X, level):
        if not 0 < level < 1:
            raise ValueError("level must lie in (0, 1)")
        boot = self.bootstrap_predictions(X)
        lo = np.quantile(boot, (1 - level) / 2, axis=0)
        hi = np.quantile(boot, (1 + level) / 2, axis=0)
        point = self.predict(X)
        # percentile bands can miss the point estimate; keep lower <= point <= upper
        return np.minimum(lo, point), np.maximum(hi, point)


def fit_knn_bootstrap_regressor(ds: Dataset, fold=None, k: int = 50, B: int = 200,
                                rng: Rng | None = None) -> KnnBootstrapRegressor:
    if k < 1:
        raise ValueError("k must be >= 1")
    if B < 50:
        raise ValueError("need B >= 50 bootstrap replicates")
    rng = Rng(0) if rng is None else rng
    _, by_arm = _rows_by_arm(ds, fold)
    trees, ys, counts = [], [], []
    for a, rows in enumerate(by_arm):
        if len(rows) < k:
            raise ArmUnderflow(f"arm {a + 1} has {len(rows)} rows, need k={k}")
        trees.append(spatial.cKDTree(ds.X[rows]))
        ys.append(ds.Y[rows].copy())
        g = rng.child(a).generator()
        counts.append(g.multinomial(len(rows), np.full(len(rows), 1.0 / len(rows)), size=B).astype(np.int32))
    return KnnBootstrapRegressor(k, B, trees, ys, counts, {"learner": "knn", "k": k, "B": B})


# --- label generators --------------------------------------------------------

class LabelGenerator:
    """Black-box map from covariates to one (0-based) arm per row."""

    K: int
    meta: dict

    def assign(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def label_distribution(self, X: np.ndarray) -> np.ndarray:
        """(m, K) probabilities of each label; one-hot for deterministic labelers."""
        lab = self.assign(X)
        out = np.zeros((len(lab), self.K))
        out[np.arange(len(lab)), lab] = 1.0
        return out

    def assign_one(self, x: Sequence[float]) -> int:
        return int(self.assign(np.asarray(x, float)[None, :])[0]) + 1


@dataclass
class QLearningLabelGenerator(LabelGenerator):
    regressor: ArmRegressor
    meta: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.regressor.K

    def assign(self, X):
        # np.argmax returns the first maximizer: ties go to the smallest arm
        return np.argmax(self.regressor.predict(np.atleast_2d(X)), axis=1)


@dataclass
class UniformLabelGenerator(LabelGenerator):
    """Labels drawn uniformly at random; exposes its exact label law."""

    K: int
    rng: Rng = field(default_factory=lambda: Rng(0))
    meta: dict = field(default_factory=lambda: {"labeler": "random"})

    def assign(self, X):
        return self.rng.generator().integers(0, self.K, size=len(np.atleast_2d(X)))

    def label_distribution(self, X):
        return np.full((len(np.atleast_2d(X)), self.K), 1.0 / self.K)


def fit_multinomial_logit(X: np.ndarray, A: np.ndarray, K: int, l2: float = 1e-4) -> Callable[[np.ndarray], np.ndarray]:
    """Multinomial logistic propensity model on ``[1, x]``; returns a predict fn."""
    Phi = _linear(X)
    n, p = Phi.shape
    Yoh = np.zeros((n, K))
    Yoh[np.arange(n), A] = 1.0

    def loss(theta):
        W = theta.reshape(p, K)
        Z = Phi @ W
        lse = special.logsumexp(Z, axis=1)
        P = np.exp(Z - lse[:, None])
        val = (lse - (Z * Yoh).sum(axis=1)).sum() / n + 0.5 * l2 * (W[1:] ** 2).sum()
        G = Phi.T @ (P - Yoh) / n
        G[1:] += l2 * W[1:]
        return val, G.ravel()

    res = optimize.minimize(loss, np.zeros(p * K), jac=True, method="L-BFGS-B")
    W = res.x.reshape(p, K)

    def predict(Xn):
        Z = _linear(np.atleast_2d(Xn)) @ W
        return special.softmax(Z, axis=1)

    return predict


def fit_q_learning_label_generator(ds: Dataset, fold=None, basis: BasisSpec | str = "linear",
                                   weighting: str = "none") -> QLearningLabelGenerator:
    """Regression Q-learning: label = argmax of per-arm fitted means.

    ``weighting="iw"`` reweights each row by ``1 / pi_b(A | X)`` from a
    multinomial-logit propensity fit, a simple stand-in for doubly robust
    Q-learning.  Propensities below ``1e-3`` are floored and flagged.
    """
    basis = BasisSpec(basis) if isinstance(basis, str) else basis
    fold = np.arange(ds.n) if fold is None else np.asarray(fold, dtype=np.int64)
    meta: dict[str, Any] = {"labeler": "qlearn", "basis": basis.name, "weighting": weighting}
    weights = None
    if weighting == "iw":
        prop = fit_multinomial_logit(ds.X[fold], ds.A[fold], ds.K)
        p_obs = prop(ds.X[fold])[np.arange(len(fold)), ds.A[fold]]
        if (p_obs < PROPENSITY_FLOOR).any():
            warnings.warn("estimated propensity below 1e-3; weights clipped at 1e3",
                          PropensityUnderflowWarning, stacklevel=2)
            meta["propensity_clipped"] = int((p_obs < PROPENSITY_FLOOR).sum())
        weights = np.zeros(ds.n)
        weights[fold] = 1.0 / np.maximum(p_obs, PROPENSITY_FLOOR)
        meta["approximation"] = "inverse-propensity weighted Q-learning"
    elif weighting != "none":
        raise ValueError(f"unknown weighting {weighting!r}")
    reg = fit_linear_arm_regressor(ds, fold, basis, weights=weights)
    return QLearningLabelGenerator(reg, meta)


def fit_arm_regressor(ds: Dataset, fold, learner: str = "ols", basis: str = "dgp-aware",
                      k: int = 50, B: int = 200, rng: Rng | None = None) -> BoundedArmRegressor:
    """Dispatch on a learner preset name (``ols`` or ``knn``)."""
    if learner == "ols":
        return fit_linear_arm_regressor(ds, fold, basis)
    if learner == "knn":
        return fit_knn_bootstrap_regressor(ds, fold, k=k, B=B, rng=rng)
    raise ValueError(f"unknown learner {learner!r}")
