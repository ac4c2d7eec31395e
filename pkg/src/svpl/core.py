"""Shared types: datasets, treatment sets, fold splits and seeded random streams.

Arm indices are 0-based in every array (``Dataset.A``, label vectors, set
masks).  ``TreatmentSet`` and the scalar arm ids returned by single-point
helpers are 1-based, and CSV files store 1-based arms.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Sequence

import numpy as np

DEFAULT_TIE_TOL = 1e-9


class SvplError(Exception):
    """Base class for library errors."""


class EmptyFold(SvplError):
    pass


class InvalidDataset(SvplError, ValueError):
    pass


class OracleRequired(SvplError):
    """Raised when a diagnostic needs ground-truth quantities that are absent."""


class Stream(IntEnum):
    """Purpose ids for independent random streams within one replication."""

    DATA = 0
    SPLIT = 1
    ORACLE_LABELS = 2
    INJECT_MASK = 3
    INJECT_ARMS = 4
    BOOTSTRAP = 5
    CHOICE = 6
    TEST_DATA = 7
    RBAR = 8


@dataclass(frozen=True)
class Rng:
    """Seed plus stream path; the same pair always yields the same draws.

    Generators are Philox (counter based) keyed through ``SeedSequence`` so
    child streams are statistically independent and platform stable.
    """

    seed: int
    stream: tuple[int, ...] = ()

    def child(self, *ids: int) -> "Rng":
        return Rng(self.seed, self.stream + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=self.stream)
        return np.random.Generator(np.random.Philox(ss))


def as_rng(rng: "Rng | int | None", default_seed: int = 0) -> Rng:
    if rng is None:
        return Rng(default_seed)
    if isinstance(rng, Rng):
        return rng
    return Rng(int(rng))


@dataclass(frozen=True, order=True)
class TreatmentSet:
    """Sorted, duplicate-free set of 1-based arm ids."""

    members: tuple[int, ...] = ()

    def __init__(self, members: Iterable[int] = ()):
        m = tuple(sorted({int(a) for a in members}))
        if m and m[0] < 1:
            raise ValueError(f"arm ids are 1-based, got {m}")
        object.__setattr__(self, "members", m)

    @classmethod
    def from_mask(cls, mask: Sequence[bool]) -> "TreatmentSet":
        return cls(int(i) + 1 for i in np.flatnonzero(np.asarray(mask, dtype=bool)))

    def mask(self, K: int) -> np.ndarray:
        if self.members and self.members[-1] > K:
            raise ValueError(f"set {self.members} exceeds K={K}")
        out = np.zeros(K, dtype=bool)
        out[[a - 1 for a in self.members]] = True
        return out

    def __contains__(self, a: object) -> bool:
        return a in self.members

    def __iter__(self):
        return iter(self.members)

    def __len__(self) -> int:
        return len(self.members)

    def __repr__(self) -> str:
        return "{" + ",".join(map(str, self.members)) + "}"


def argmax_set(values: Sequence[float], tol: float = DEFAULT_TIE_TOL) -> TreatmentSet:
    """All arms within ``tol`` of the maximum value."""
    v = np.asarray(values, dtype=float)
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return TreatmentSet.from_mask(v >= v.max() - tol)


def argmax_mask(values: np.ndarray, tol: float = DEFAULT_TIE_TOL) -> np.ndarray:
    """Row-wise ``argmax_set`` as a boolean (m, K) mask."""
    v = np.atleast_2d(np.asarray(values, dtype=float))
    return v >= v.max(axis=1, keepdims=True) - tol


@dataclass(frozen=True)
class OracleTruth:
    """Ground truth available only for simulated data.

    ``mu`` maps an (m, d) covariate matrix to the (m, K) matrix of conditional
    means.  ``optimal_sets`` is the (n, K) mask of optimal arms per row.
    """

    mu: Callable[[np.ndarray], np.ndarray]
    optimal_sets: np.ndarray
    potential_outcomes: Optional[np.ndarray] = None
    mu_values: Optional[np.ndarray] = None
    secondary_mu: Optional[Callable[[np.ndarray], np.ndarray]] = None
    secondary_outcomes: Optional[np.ndarray] = None

    def __post_init__(self):
        opt = np.asarray(self.optimal_sets, dtype=bool)
        if opt.ndim != 2 or not opt.any(axis=1).all():
            raise InvalidDataset("every row needs a nonempty optimal set")
        object.__setattr__(self, "optimal_sets", opt)

    @classmethod
    def from_mu(cls, mu: Callable[[np.ndarray], np.ndarray], X: np.ndarray,
                tol: float = DEFAULT_TIE_TOL, **kw) -> "OracleTruth":
        values = mu(X)
        return cls(mu=mu, optimal_sets=argmax_mask(values, tol), mu_values=values, **kw)

    def optimal_set(self, i: int) -> TreatmentSet:
        return TreatmentSet.from_mask(self.optimal_sets[i])

    def subset(self, idx: np.ndarray) -> "OracleTruth":
        pick = lambda a: None if a is None else a[idx]
        return OracleTruth(
            mu=self.mu,
            optimal_sets=self.optimal_sets[idx],
            potential_outcomes=pick(self.potential_outcomes),
            mu_values=pick(self.mu_values),
            secondary_mu=self.secondary_mu,
            secondary_outcomes=pick(self.secondary_outcomes),
        )


@dataclass(frozen=True)
class Dataset:
    """Observational sample (X, A, Y) with 0-based arm labels."""

    X: np.ndarray
    A: np.ndarray
    Y: np.ndarray
    K: int
    oracle: Optional[OracleTruth] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        A = np.asarray(self.A)
        Y = np.asarray(self.Y, dtype=float)
        if X.ndim != 2:
            raise InvalidDataset("X must be a 2-d matrix")
        n = X.shape[0]
        if A.shape != (n,) or Y.shape != (n,):
            raise InvalidDataset("X, A and Y must have the same number of rows")
        if self.K < 2:
            raise InvalidDataset("need K > 1 arms")
        if not (np.isfinite(X).all() and np.isfinite(Y).all()):
            raise InvalidDataset("non-finite covariate or outcome")
        if A.size and (not np.issubdtype(A.dtype, np.integer)):
            if not np.all(np.equal(np.mod(A, 1), 0)):
                raise InvalidDataset("arm labels must be integers")
        A = A.astype(np.int64)
        if A.size and (A.min() < 0 or A.max() >= self.K):
            raise InvalidDataset(f"arm labels outside 0..{self.K - 1}")
        if self.oracle is not None and self.oracle.optimal_sets.shape != (n, self.K):
            raise InvalidDataset("oracle optimal_sets shape mismatch")
        for name, arr in (("X", X), ("A", A), ("Y", Y)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx: Sequence[int]) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        oracle = None if self.oracle is None else self.oracle.subset(idx)
        return Dataset(self.X[idx], self.A[idx], self.Y[idx], self.K, oracle)

    def require_oracle(self) -> OracleTruth:
        if self.oracle is None:
            raise OracleRequired("this operation needs simulated data with oracle truth")
        return self.oracle


@dataclass(frozen=True)
class FoldSplit:
    idx_b: np.ndarray
    idx_train: np.ndarray
    idx_cal: np.ndarray

    def __post_init__(self):
        folds = [self.idx_b, self.idx_train, self.idx_cal]
        joined = np.concatenate(folds)
        if len(np.unique(joined)) != len(joined):
            raise ValueError("folds overlap")


def split_three_way(ds: "Dataset | int", fractions: Sequence[float], rng: Rng) -> FoldSplit:
    """Random disjoint (b, train, cal) folds with sizes floor(f * n).

    Rounding leftovers go to the calibration fold.  Raises ``EmptyFold`` when
    any fold would be empty.
    """
    n = ds if isinstance(ds, int) else ds.n
    f = [float(x) for x in fractions]
    if len(f) != 3 or min(f) < 0 or sum(f) > 1 + 1e-12:
        raise ValueError(f"fractions must be 3 nonnegative numbers summing to <= 1, got {f}")
    eps = 1e-9
    n_b = math.floor(f[0] * n + eps)
    n_tr = math.floor(f[1] * n + eps)
    n_used = min(n, math.floor(sum(f) * n + eps))
    n_cal = n_used - n_b - n_tr
    if min(n_b, n_tr, n_cal) <= 0:
        raise EmptyFold(f"fold sizes {(n_b, n_tr, n_cal)} for n={n}, fractions={f}")
    perm = rng.generator().permutation(n)
    return FoldSplit(
        idx_b=np.sort(perm[:n_b]),
        idx_train=np.sort(perm[n_b:n_b + n_tr]),
        idx_cal=np.sort(perm[n_b + n_tr:n_used]),
    )


@dataclass(frozen=True)
class SetValuedPolicy:
    """Covariates to subsets of arms, backed by a vectorized mask function."""

    mask_fn: Callable[[np.ndarray], np.ndarray]
    K: int
    meta: dict[str, Any] = field(default_factory=dict)

    def predict_mask(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.mask_fn(np.atleast_2d(X)), dtype=bool)

    def evaluate(self, x: Sequence[float]) -> TreatmentSet:
        return TreatmentSet.from_mask(self.predict_mask(np.asarray(x, float)[None, :])[0])

    __call__ = evaluate


# --- CSV serialization (1-based arms on disk) --------------------------------

def write_dataset_csv(ds: Dataset, path: "str | Path", potential_outcomes: bool = False) -> None:
    header = [f"x{j + 1}" for j in range(ds.d)] + ["a", "y"]
    po = None
    if potential_outcomes and ds.oracle is not None and ds.oracle.potential_outcomes is not None:
        po = ds.oracle.potential_outcomes
        header += [f"y{k + 1}" for k in range(ds.K)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.X[i]] + [int(ds.A[i]) + 1, repr(float(ds.Y[i]))]
            if po is not None:
                row += [repr(float(v)) for v in po[i]]
            w.writerow(row)


def read_dataset_csv(path: "str | Path", K: Optional[int] = None,
                     oracle_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> Dataset:
    """Load the ``x1..xd,a,y[,y1..yK]`` schema.

    ``oracle_fn`` (an (m, d) -> (m, K) mean function) attaches oracle truth.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    ycols = [i for i, h in enumerate(header) if h.startswith("y") and h != "y"]
    ia, iy = header.index("a"), header.index("y")
    data = np.array(body, dtype=float) if body else np.zeros((0, len(header)))
    A = data[:, ia].astype(np.int64) - 1
    if K is None:
        K = len(ycols) if ycols else int(A.max()) + 1
    X = data[:, xcols]
    oracle = None
    if oracle_fn is not None:
        oracle = OracleTruth.from_mu(
            oracle_fn, X, potential_outcomes=data[:, ycols] if ycols else None)
    return Dataset(X, A, data[:, iy], K, oracle)


def write_sets_csv(mask: np.ndarray, path: "str | Path", row_ids: Optional[Sequence[int]] = None) -> None:
    mask = np.asarray(mask, dtype=bool)
    K = mask.shape[1]
    ids = range(mask.shape[0]) if row_ids is None else row_ids
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row"] + [f"in_{k + 1}" for k in range(K)] + ["cardinality"])
        for rid, m in zip(ids, mask):
            w.writerow([int(rid)] + [int(b) for b in m] + [int(m.sum())])


def read_sets_csv(path: "str | Path") -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = [i for i, h in enumerate(header) if h.startswith("in_")]
    arr = np.array(body, dtype=np.int64).reshape(len(body), len(header))
    return arr[:, 0], arr[:, cols].astype(bool)
