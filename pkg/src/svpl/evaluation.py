"""Coverage, cardinality and set-policy values for set-valued policies."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import Dataset, OracleRequired, Rng, SetValuedPolicy, SvplError, TreatmentSet


class LengthMismatch(SvplError, ValueError):
    pass


class EmptyTruth(SvplError, ValueError):
    pass


class EmptySet(SvplError, ValueError):
    pass


@dataclass(frozen=True)
class Coverage:
    coverage_prop: float
    coverage_hit: float


def _masks(sets, K: Optional[int] = None) -> np.ndarray:
    if isinstance(sets, np.ndarray) and sets.dtype == bool and sets.ndim == 2:
        return sets
    sets = list(sets)
    if sets and isinstance(sets[0], TreatmentSet):
        K = K or max((s.members[-1] for s in sets if len(s)), default=1)
        return np.array([s.mask(K) for s in sets], dtype=bool)
    return np.asarray(sets, dtype=bool)


def coverage(sets, truth) -> Coverage:
    """Proportion-of-truth coverage and hit-rate coverage.

    ``coverage_prop`` averages ``|T ∩ C| / |T|``; ``coverage_hit`` averages
    ``1{T ∩ C nonempty}``.  Accepts (n, K) boolean masks or lists of
    ``TreatmentSet``.
    """
    K = None
    for obj in (sets, truth):
        if isinstance(obj, np.ndarray) and obj.ndim == 2:
            K = obj.shape[1]
    if K is None:
        members = [s.members[-1] for s in list(sets) + list(truth) if isinstance(s, TreatmentSet) and len(s)]
        K = max(members, default=1)
    truth_m = _masks(truth, K)
    sets_m = _masks(sets, K)
    if sets_m.shape != truth_m.shape:
        raise LengthMismatch(f"sets {sets_m.shape} vs truth {truth_m.shape}")
    sizes = truth_m.sum(axis=1)
    if (sizes == 0).any():
        raise EmptyTruth("every truth set must be nonempty")
    inter = (sets_m & truth_m).sum(axis=1)
    return Coverage(float(np.mean(inter / sizes)), float(np.mean(inter > 0)))


# --- choice functions --------------------------------------------------------

@dataclass(frozen=True)
class ChoiceFunction:
    """Picks one arm from a set.

    ``choose_many(mask, X, gen)`` maps an (m, K) nonempty-set mask to
    0-based arms.  ``probs`` optionally gives the exact (m, K) choice law,
    which enables closed-form set-policy values.
    """

    name: str
    choose_many: Callable[[np.ndarray, np.ndarray, np.random.Generator], np.ndarray]
    probs: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    deterministic: bool = False

    def choose(self, s: TreatmentSet, x=None, rng: Rng | None = None) -> int:
        if len(s) == 0:
            raise EmptySet("choice functions are undefined on the empty set")
        K = s.members[-1]
        g = (rng or Rng(0)).generator()
        X = np.zeros((1, 0)) if x is None else np.asarray(x, float)[None, :]
        return int(self.choose_many(s.mask(K)[None, :], X, g)[0]) + 1


def _uniform_choose(mask, X, g):
    u = g.random(len(mask))
    counts = mask.sum(axis=1)
    pick = np.floor(u * counts).astype(np.int64)
    return (np.cumsum(mask, axis=1) <= pick[:, None]).sum(axis=1)


def _uniform_probs(mask, X):
    return mask / mask.sum(axis=1, keepdims=True)


def _lower_choose(mask, X, g=None):
    return np.argmax(mask, axis=1)


def _lower_probs(mask, X):
    out = np.zeros(mask.shape)
    out[np.arange(len(mask)), np.argmax(mask, axis=1)] = 1.0
    return out


UNIFORM = ChoiceFunction("uniform", _uniform_choose, _uniform_probs)
LOWER = ChoiceFunction("lower", _lower_choose, _lower_probs, deterministic=True)


def choose_uniform(s: TreatmentSet, x=None, rng: Rng | None = None) -> int:
    return UNIFORM.choose(s, x, rng)


def choose_lower(s: TreatmentSet, x=None) -> int:
    return LOWER.choose(s, x)


def oracle_best_choice(mu: Callable[[np.ndarray], np.ndarray]) -> ChoiceFunction:
    """Within-set argmax of the true mean (first arm on ties)."""

    def probs(mask, X):
        v = np.where(mask, mu(X), -np.inf)
        out = np.zeros(mask.shape)
        out[np.arange(len(mask)), np.argmax(v, axis=1)] = 1.0
        return out

    def choose(mask, X, g=None):
        return np.argmax(np.where(mask, mu(X), -np.inf), axis=1)

    return ChoiceFunction("oracle_best", choose, probs, deterministic=True)


# --- set-policy value --------------------------------------------------------

def _mean_matrix(ds: Dataset, mu: Optional[Callable], outcome: str) -> np.ndarray:
    if mu is not None:
        return np.asarray(mu(ds.X), dtype=float)
    if ds.oracle is None:
        raise OracleRequired("set-policy value needs oracle means or a plug-in mu")
    if outcome == "secondary":
        if ds.oracle.secondary_mu is None:
            raise OracleRequired("no secondary outcome attached")
        return ds.oracle.secondary_mu(ds.X)
    if ds.oracle.mu_values is not None:
        return ds.oracle.mu_values
    return ds.oracle.mu(ds.X)


def set_policy_value(policy, choice: ChoiceFunction, eval_ds: Dataset, rng: Rng | None = None,
                     mc_draws: int = 1, mu: Optional[Callable] = None,
                     outcome: str = "primary", closed_form: bool = True) -> float:
    """Mean outcome when a decision maker applies ``choice`` to each set.

    ``policy`` is a ``SetValuedPolicy`` or a precomputed (n, K) mask.  Empty
    sets fall back to a uniform draw over all arms.  With ``closed_form`` and
    a choice law available the expectation is exact; otherwise it is
    averaged over ``mc_draws`` Monte-Carlo repetitions.
    """
    mask = policy.predict_mask(eval_ds.X) if isinstance(policy, SetValuedPolicy) else np.asarray(policy, bool)
    M = _mean_matrix(eval_ds, mu, outcome)
    empty = ~mask.any(axis=1)
    filled = np.where(empty[:, None], True, mask)
    if closed_form and choice.probs is not None:
        P = choice.probs(filled, eval_ds.X)
        P[empty] = 1.0 / mask.shape[1]
        return float(np.mean((P * M).sum(axis=1)))
    g = (rng or Rng(0)).generator()
    rows = np.arange(len(mask))
    total = 0.0
    for _ in range(mc_draws):
        arms = np.asarray(choice.choose_many(filled, eval_ds.X, g))
        if empty.any():
            arms = arms.copy()
            arms[empty] = g.integers(0, mask.shape[1], size=int(empty.sum()))
        total += M[rows, arms].mean()
    return float(total / mc_draws)


def policy_value(assign: np.ndarray, eval_ds: Dataset, mu: Optional[Callable] = None) -> float:
    """Value of a single-arm policy given its 0-based assignments."""
    M = _mean_matrix(eval_ds, mu, "primary")
    return float(M[np.arange(len(assign)), np.asarray(assign)].mean())


# --- reports -----------------------------------------------------------------

REPORT_COLUMNS = (
    "method", "alpha", "r", "coverage_hit", "coverage_prop", "cov_region_12",
    "cov_region_34", "mean_card", "empty_frac", "spv_uniform", "spv_lower", "delta_at_qhat",
)


@dataclass
class EvaluationReport:
    coverage: float
    coverage_prop: float
    mean_cardinality: float
    empty_fraction: float
    spv_uniform: float
    spv_by_choice: dict[str, float] = field(default_factory=dict)
    delta_at_qhat: Optional[float] = None
    per_region: dict[str, float] = field(default_factory=dict)
    region_mass: dict[str, float] = field(default_factory=dict)
    spv_secondary: dict[str, float] = field(default_factory=dict)

    @property
    def coverage_hit(self) -> float:
        return self.coverage

    def row(self, method: str, alpha: float, r: float) -> dict:
        return {
            "method": method, "alpha": alpha, "r": r,
            "coverage_hit": self.coverage, "coverage_prop": self.coverage_prop,
            "cov_region_12": self.per_region.get("1,2", math.nan),
            "cov_region_34": self.per_region.get("3,4", math.nan),
            "mean_card": self.mean_cardinality, "empty_frac": self.empty_fraction,
            "spv_uniform": self.spv_uniform,
            "spv_lower": self.spv_by_choice.get("lower", math.nan),
            "delta_at_qhat": math.nan if self.delta_at_qhat is None else self.delta_at_qhat,
        }


def region_keys(optimal_sets: np.ndarray) -> np.ndarray:
    """Label each row by its optimal set, e.g. ``"1,2"``."""
    return np.array([",".join(str(i + 1) for i in np.flatnonzero(r)) for r in optimal_sets])


def evaluate_cell(sets, eval_ds: Dataset, choices=(LOWER,), delta_at_qhat: Optional[float] = None,
                  mu: Optional[Callable] = None, secondary: bool = False) -> EvaluationReport:
    """Aggregate every metric of one (method, alpha, r) cell on an oracle dataset.

    Region coverages are hit rates within rows sharing the same optimal set.
    """
    oracle = eval_ds.require_oracle()
    mask = sets.predict_mask(eval_ds.X) if isinstance(sets, SetValuedPolicy) else _masks(sets, eval_ds.K)
    cov = coverage(mask, oracle.optimal_sets)
    hit = (mask & oracle.optimal_sets).any(axis=1)
    keys = region_keys(oracle.optimal_sets)
    per_region, mass = {}, {}
    for key in np.unique(keys):
        sel = keys == key
        per_region[str(key)] = float(hit[sel].mean())
        mass[str(key)] = float(sel.mean())
    spv = {c.name: set_policy_value(mask, c, eval_ds, mu=mu) for c in choices}
    spv_sec = {}
    if secondary and oracle.secondary_mu is not None:
        for c in (UNIFORM,) + tuple(choices):
            spv_sec[c.name] = set_policy_value(mask, c, eval_ds, outcome="secondary")
    return EvaluationReport(
        coverage=cov.coverage_hit,
        coverage_prop=cov.coverage_prop,
        mean_cardinality=float(mask.sum(axis=1).mean()),
        empty_fraction=float((~mask.any(axis=1)).mean()),
        spv_uniform=set_policy_value(mask, UNIFORM, eval_ds, mu=mu),
        spv_by_choice=spv,
        delta_at_qhat=delta_at_qhat,
        per_region=per_region,
        region_mass=mass,
        spv_secondary=spv_sec,
    )
