"""Greatest-lower-bound set-valued policy.

Keep every arm whose upper confidence bound reaches the lower bound of the
arm with the greatest lower bound.  Bounds are two-sided intervals at level
``1 - alpha / 2``, so each tail carries ``alpha / 4``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Dataset, FoldSplit, Rng, SetValuedPolicy, TreatmentSet
from .learners import BoundedArmRegressor, fit_arm_regressor


def bound_level(alpha: float) -> float:
    return 1.0 - alpha / 2.0


def glb_mask_from_bounds(lower: np.ndarray, upper: np.ndarray,
                         benchmark_arm: Optional[np.ndarray] = None) -> np.ndarray:
    """Set mask from (m, K) bound matrices.

    ``benchmark_arm`` (0-based, per row) defaults to the argmax of ``lower``.
    """
    lower = np.atleast_2d(lower)
    upper = np.atleast_2d(upper)
    if benchmark_arm is None:
        benchmark_arm = np.argmax(lower, axis=1)
    bench = lower[np.arange(len(lower)), benchmark_arm]
    return upper >= bench[:, None]


@dataclass
class GlbPolicy:
    bounded: BoundedArmRegressor
    alpha: float
    maxmin: Optional[BoundedArmRegressor] = None

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    @property
    def K(self) -> int:
        return self.bounded.K

    def maxmin_arms(self, X: np.ndarray) -> np.ndarray:
        src = self.maxmin if self.maxmin is not None else self.bounded
        return np.argmax(src.lower(np.atleast_2d(X), bound_level(self.alpha)), axis=1)

    def predict_mask(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        lo, hi = self.bounded.bounds(X, bound_level(self.alpha))
        bench = None if self.maxmin is None else self.maxmin_arms(X)
        return glb_mask_from_bounds(lo, hi, bench)

    def as_policy(self) -> SetValuedPolicy:
        return SetValuedPolicy(self.predict_mask, self.K, {
            "method": "glb", "alpha": self.alpha,
            "split_maxmin": self.maxmin is not None,
            "learner": self.bounded.meta.get("learner")})


def glb_maxmin(x: Sequence[float], bounded: BoundedArmRegressor, alpha: float) -> int:
    """1-based arm with the greatest lower bound; ties go to the smallest index."""
    lo = bounded.lower(np.asarray(x, float)[None, :], bound_level(alpha))
    return int(np.argmax(lo[0])) + 1


def glb_set(x: Sequence[float], policy: GlbPolicy) -> TreatmentSet:
    return TreatmentSet.from_mask(policy.predict_mask(np.asarray(x, float)[None, :])[0])


def fit_glb(ds: Dataset, split: FoldSplit, alpha: float, learner: str = "ols",
            basis: str = "dgp-aware", split_maxmin: bool = True, rng: Rng | None = None,
            **learner_kw) -> GlbPolicy:
    """Bounds on the train fold; the benchmark arm on the b fold when ``split_maxmin``."""
    rng = Rng(0) if rng is None else rng
    bounded = fit_arm_regressor(ds, split.idx_train, learner, basis, rng=rng.child(0), **learner_kw)
    maxmin = None
    if split_maxmin:
        maxmin = fit_arm_regressor(ds, split.idx_b, learner, basis, rng=rng.child(1), **learner_kw)
    return GlbPolicy(bounded, alpha, maxmin)
