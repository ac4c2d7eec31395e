"""Split-conformal set-valued policies calibrated on (possibly noisy) labels.

Scores are margins: for arm ``a`` the best competing mean minus the mean of
``a``.  Calibration labels come from a black-box labeler, optionally mixed
with uniform random arms at rate ``r``; the test-time set keeps every arm whose
score is strictly below the calibrated quantile.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (Dataset, OracleRequired, Rng, SetValuedPolicy, Stream, SvplError,
                   TreatmentSet)
from .learners import ArmRegressor, LabelGenerator

LABEL_SOURCES = ("oracle", "blackbox", "random", "mixture")


class EmptyScores(SvplError, ValueError):
    pass


class DegenerateDenominator(SvplError):
    pass


def margin_scores(mu: np.ndarray) -> np.ndarray:
    """Row-wise margin scores ``max_{a' != a} mu[a'] - mu[a]`` for an (m, K) matrix."""
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    K = mu.shape[1]
    if K < 2:
        raise ValueError("margin scores need K >= 2")
    others = np.where(np.eye(K, dtype=bool)[None], -np.inf, mu[:, None, :])
    return others.max(axis=2) - mu


def margin_score(mu_fn: Callable[[np.ndarray], np.ndarray], x: Sequence[float], a: int) -> float:
    """Margin score of 1-based arm ``a`` at a single point."""
    return float(margin_scores(mu_fn(np.asarray(x, float)[None, :]))[0, a - 1])


@dataclass(frozen=True)
class ScoreFunction:
    mu_fn: Callable[[np.ndarray], np.ndarray]
    kind: str = "empirical"

    @classmethod
    def from_regressor(cls, reg: ArmRegressor) -> "ScoreFunction":
        return cls(reg.predict, "empirical")

    @classmethod
    def oracle(cls, mu: Callable[[np.ndarray], np.ndarray]) -> "ScoreFunction":
        return cls(mu, "oracular")

    def scores(self, X: np.ndarray) -> np.ndarray:
        return margin_scores(self.mu_fn(np.atleast_2d(X)))

    def score(self, x: Sequence[float], a: int) -> float:
        return margin_score(self.mu_fn, x, a)


def conformal_quantile(scores: Sequence[float], alpha: float) -> float:
    """The ``ceil((1 - alpha)(n + 1))``-th smallest score.

    Returns ``+inf`` when that rank exceeds ``n`` and ``-inf`` when it is
    below 1.
    """
    s = np.asarray(scores, dtype=float).ravel()
    if s.size == 0:
        raise EmptyScores("no calibration scores")
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    n = s.size
    # round away float noise such as (1 - 0.1) * 11 = 9.900000000000002
    k = math.ceil(round((1 - alpha) * (n + 1), 9))
    if k > n:
        return math.inf
    if k <= 0:
        return -math.inf
    return float(np.partition(s, k - 1)[k - 1])


def inject_randomness(labels: np.ndarray, r: float, K: int, rng: Rng) -> np.ndarray:
    """Replace each label by a uniform arm with probability ``r``.

    The Bernoulli mask and the replacement arms use separate streams, so the
    replacement draws do not depend on ``r``.
    """
    if not 0 <= r <= 1:
        raise ValueError("r must lie in [0, 1]")
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    R = rng.child(Stream.INJECT_MASK).generator().random(n) < r
    A_rd = rng.child(Stream.INJECT_ARMS).generator().integers(0, K, size=n)
    return np.where(R, A_rd, labels)


def draw_oracle_labels(optimal_sets: np.ndarray, rng: Rng) -> np.ndarray:
    """One arm per row drawn uniformly from that row's optimal set."""
    opt = np.asarray(optimal_sets, dtype=bool)
    counts = opt.sum(axis=1)
    u = rng.generator().random(len(opt))
    pick = np.floor(u * counts).astype(np.int64)
    csum = np.cumsum(opt, axis=1)
    return (csum <= pick[:, None]).sum(axis=1)


@dataclass
class CalibrationResult:
    scores: np.ndarray
    q_hat: float
    alpha: float
    r: float
    label_source: str
    labels: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def n_cal(self) -> int:
        return self.scores.size

    def quantile(self, alpha: float) -> float:
        """Re-threshold the same scores at another level."""
        return conformal_quantile(self.scores, alpha)


def calibration_labels(ds: Dataset, fold_cal, gen: Optional[LabelGenerator], r: float,
                       rng: Rng, label_source: str = "blackbox") -> np.ndarray:
    """Labels for calibration rows, before scoring."""
    fold_cal = np.asarray(fold_cal, dtype=np.int64)
    if label_source == "oracle":
        base = draw_oracle_labels(ds.require_oracle().optimal_sets[fold_cal],
                                  rng.child(Stream.ORACLE_LABELS))
    elif label_source in ("blackbox", "mixture"):
        if gen is None:
            raise ValueError("black-box labels need a label generator")
        base = gen.assign(ds.X[fold_cal])
    elif label_source == "random":
        base = rng.child(Stream.ORACLE_LABELS, 1).generator().integers(0, ds.K, size=fold_cal.size)
    else:
        raise ValueError(f"unknown label source {label_source!r}")
    return inject_randomness(base, r, ds.K, rng)


def calibrate(ds: Dataset, fold_cal, gen: Optional[LabelGenerator], score: ScoreFunction,
              alpha: float, r: float = 0.0, rng: Rng | None = None,
              label_source: str = "blackbox") -> CalibrationResult:
    """Score (possibly perturbed) calibration labels and take the conformal quantile."""
    rng = Rng(0) if rng is None else rng
    fold_cal = np.asarray(fold_cal, dtype=np.int64)
    labels = calibration_labels(ds, fold_cal, gen, r, rng, label_source)
    S = score.scores(ds.X[fold_cal])[np.arange(fold_cal.size), labels]
    meta = {"score_kind": score.kind}
    if label_source == "oracle":
        meta["oracle_draw"] = "uniform over optimal set"
    if gen is not None:
        meta.update({f"gen_{k}": v for k, v in gen.meta.items()})
    return CalibrationResult(S, conformal_quantile(S, alpha), alpha, r, label_source, labels, meta)


def conformal_mask(score_matrix: np.ndarray, q_hat: float) -> np.ndarray:
    return np.asarray(score_matrix) < q_hat


def conformal_set(x: Sequence[float], score: ScoreFunction, q_hat: float) -> TreatmentSet:
    return TreatmentSet.from_mask(conformal_mask(score.scores(np.asarray(x, float)[None, :])[0], q_hat))


def conformal_policy(score: ScoreFunction, cal: CalibrationResult, K: int) -> SetValuedPolicy:
    q = cal.q_hat
    return SetValuedPolicy(
        lambda X: conformal_mask(score.scores(X), q), K,
        {"method": "conformal", "alpha": cal.alpha, "r": cal.r,
         "q_hat": q, "label_source": cal.label_source})


# --- score CDF diagnostics ---------------------------------------------------

@dataclass(frozen=True)
class ScoreCdf:
    """Right-continuous (weighted) empirical CDF."""

    values: np.ndarray
    cum_weights: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        pos = np.searchsorted(self.values, t, side="right")
        cw = np.concatenate([[0.0], self.cum_weights])
        out = cw[pos]
        return float(out) if out.ndim == 0 else out

    evaluate = __call__


def empirical_cdf(scores, weights=None) -> ScoreCdf:
    s = np.asarray(scores, dtype=float).ravel()
    if s.size == 0:
        raise EmptyScores("no scores")
    w = np.ones_like(s) if weights is None else np.asarray(weights, dtype=float).ravel()
    keep = w > 0
    s, w = s[keep], w[keep]
    order = np.argsort(s, kind="stable")
    cw = np.cumsum(w[order])
    cw /= cw[-1]
    return ScoreCdf(s[order], np.minimum(cw, 1.0))


def label_law_cdf(score_matrix: np.ndarray, label_probs: np.ndarray) -> ScoreCdf:
    """Exact score CDF when row i's label has law ``label_probs[i]``."""
    return empirical_cdf(score_matrix, label_probs)


def coverage_factor(F: ScoreCdf, F_hat_r: ScoreCdf, t: float) -> float:
    """``F(t) - F_hat_r(t)``; zero at infinite thresholds."""
    if math.isinf(t):
        return 0.0
    return F(t) - F_hat_r(t)


@dataclass(frozen=True)
class LabelCdfs:
    """Score CDFs under true, black-box, uniform-random and perturbed labels."""

    F: ScoreCdf
    F_hat: ScoreCdf
    F_rd: ScoreCdf

    def F_hat_r(self, t, r: float):
        return r * self.F_rd(t) + (1 - r) * self.F_hat(t)

    def delta(self, t: float, r: float) -> float:
        if math.isinf(t):
            return 0.0
        return self.F(t) - self.F_hat_r(t, r)


def label_cdfs(ds: Dataset, rows, gen: LabelGenerator, score: ScoreFunction) -> LabelCdfs:
    """Exact (over label randomness) score CDFs on ``rows``; needs oracle truth."""
    if ds.oracle is None:
        raise OracleRequired("the true-label score CDF needs oracle optimal sets")
    rows = np.asarray(rows, dtype=np.int64)
    S = score.scores(ds.X[rows])
    opt = ds.oracle.optimal_sets[rows].astype(float)
    return LabelCdfs(
        F=label_law_cdf(S, opt / opt.sum(axis=1, keepdims=True)),
        F_hat=label_law_cdf(S, gen.label_distribution(ds.X[rows])),
        F_rd=label_law_cdf(S, np.full(S.shape, 1.0 / ds.K)),
    )


@dataclass(frozen=True)
class DominanceResult:
    holds: bool
    max_violation: float


def check_fosd(G: ScoreCdf, H: ScoreCdf, grid) -> DominanceResult:
    """First-order dominance of G over H: ``G(t) <= H(t)`` on the grid."""
    grid = np.asarray(grid, dtype=float)
    viol = np.maximum(G(grid) - H(grid), 0.0)
    worst = float(viol.max()) if viol.size else 0.0
    return DominanceResult(worst <= 0.0, worst)


def check_sosd(G: ScoreCdf, H: ScoreCdf, grid) -> DominanceResult:
    """Second-order dominance of G over H: running integral of ``H - G`` stays >= 0.

    The integral is computed exactly for the step functions between grid
    points, starting at the first grid point (taken below both supports).
    """
    grid = np.sort(np.asarray(grid, dtype=float))
    diff = H(grid) - G(grid)
    # left-endpoint rule is exact for right-continuous steps once the grid
    # contains every jump point
    integral = np.concatenate([[0.0], np.cumsum(diff[:-1] * np.diff(grid))])
    worst = float(np.maximum(-integral, 0.0).max()) if integral.size else 0.0
    return DominanceResult(worst <= 1e-12, worst)


def dominance_grid(*cdfs: ScoreCdf, pad: float = 1.0) -> np.ndarray:
    """Grid containing every jump point of the given CDFs plus padding."""
    pts = np.unique(np.concatenate([c.values for c in cdfs]))
    return np.concatenate([[pts[0] - pad], pts, [pts[-1] + pad]])


def estimate_rbar(ds: Dataset, fold_cal, gen: LabelGenerator, score: ScoreFunction,
                  alpha: float, reps: int = 50, rng: Rng | None = None,
                  max_iter: int = 20, tol: float = 1e-3) -> float:
    """Monte-Carlo estimate of the minimal injected randomness level.

    Each replicate bootstraps the calibration rows, draws perturbed labels
    at the current ``r`` and records ``F_hat(q) - F(q)`` and
    ``F_hat(q) - F_rd(q)`` at the resulting quantile ``q``; the CDFs are the
    exact label-law CDFs on the full calibration fold.  Because the quantile
    itself moves with ``r``, ``r`` is raised to the ratio of averages until it
    stops increasing.  Result is clamped to [0, 1].
    """
    rng = Rng(0) if rng is None else rng
    fold_cal = np.asarray(fold_cal, dtype=np.int64)
    cdfs = label_cdfs(ds, fold_cal, gen, score)
    S = score.scores(ds.X[fold_cal])
    probs = gen.label_distribution(ds.X[fold_cal])
    cum = np.cumsum(probs, axis=1)
    n = fold_cal.size

    def ratio(r: float) -> float:
        num = den = 0.0
        finite = 0
        for b in range(reps):
            rb = rng.child(Stream.RBAR, b)
            g = rb.generator()
            rows = g.integers(0, n, size=n)
            u = g.random(n)
            base = np.minimum((u[:, None] > cum[rows]).sum(axis=1), ds.K - 1)
            lab = inject_randomness(base, r, ds.K, rb)
            q = conformal_quantile(S[rows, lab], alpha)
            if math.isinf(q):
                continue
            finite += 1
            Fh = cdfs.F_hat(q)
            num += Fh - cdfs.F(q)
            den += Fh - cdfs.F_rd(q)
        if finite == 0:
            # every threshold infinite: sets are already the full arm set
            return 0.0
        num /= reps
        den /= reps
        if abs(den) < 1e-12:
            raise DegenerateDenominator("black-box and random-label score laws coincide at q_hat")
        if num <= 0:
            return 0.0
        return float(min(max(num / den, 0.0), 1.0))

    r = 0.0
    for _ in range(max_iter):
        new = ratio(r)
        if new <= r + tol:
            break
        r = new
    return r
