"""Replication harness: Table-1 grid, alpha-by-r sweeps, tradeoff and r-bar runs.

One replication draws a training sample and a fresh test sample, splits the
training sample into label / train / calibration folds, fits the nuisance
learners once and then evaluates every requested (method, alpha, r) cell.
Conformal cells at different ``alpha`` share one calibration draw per ``r``,
and cells at different ``r`` share the injection uniforms, so set sizes are
coupled across the grid.
"""
from __future__ import annotations

import csv
import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np

from . import dgp
from .conformal import ScoreFunction, calibrate, conformal_mask, estimate_rbar, label_cdfs
from .core import Dataset, Rng, Stream, split_three_way
from .evaluation import LOWER, REPORT_COLUMNS, UNIFORM, evaluate_cell, set_policy_value
from .glb import GlbPolicy, fit_glb
from .learners import fit_arm_regressor, fit_q_learning_label_generator

METHODS = ("ocp", "conformal", "glb")


def _grid(start: float, stop: float, step: float) -> tuple[float, ...]:
    m = int(round((stop - start) / step))
    return tuple(round(start + i * step, 10) for i in range(m + 1))


@dataclass(frozen=True)
class LearnerConfig:
    """Nuisance-learner presets.

    The score learner supplies the conditional means behind the margin
    scores; the labeler is the black-box optimal-arm generator fitted on the
    label fold; the GLB learner supplies confidence bounds.
    """

    score_learner: str = "knn"
    score_basis: str = "linear"
    labeler: str = "qlearn"
    labeler_basis: str = "linear"
    glb_learner: str = "knn"
    glb_basis: str = "dgp-aware"
    k: int = 50
    B: int = 200
    split_maxmin: bool = True
    fractions: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)

    def __post_init__(self):
        if self.score_learner not in ("ols", "knn") or self.glb_learner not in ("ols", "knn"):
            raise ValueError("learners must be 'ols' or 'knn'")
        if self.labeler not in ("qlearn", "qlearn-iw"):
            raise ValueError("labeler must be 'qlearn' or 'qlearn-iw'")


@dataclass(frozen=True)
class ExperimentConfig:
    n_list: tuple[int, ...] = (6000, 12000, 18000)
    alpha_grid: tuple[float, ...] = _grid(0.0, 1.0, 0.05)
    r_grid: tuple[float, ...] = _grid(0.0, 1.0, 0.1)
    reps: int = 50
    methods: tuple[str, ...] = METHODS
    learners: LearnerConfig = field(default_factory=LearnerConfig)
    seed: int = 0
    out_dir: str = "results"
    test_size: int = 2000
    threads: int = 1
    # Table 1 cell
    table1_n: int = 6000
    table1_alpha: float = 0.1
    table1_r: tuple[float, ...] = (0.0, 0.2, 0.5)
    # tradeoff demo
    tradeoff_alpha: tuple[float, ...] = _grid(0.05, 0.5, 0.05)
    tradeoff_r: float = 0.2
    # r-bar run
    rbar_reps: int = 50
    rbar_margin: float = 0.05

    def __post_init__(self):
        for name in ("alpha_grid", "r_grid", "table1_r", "tradeoff_alpha"):
            vals = getattr(self, name)
            if not vals or any(not 0 <= v <= 1 for v in vals):
                raise ValueError(f"{name} must be a nonempty grid inside [0, 1]")
        if not 0 < self.table1_alpha < 1 or not 0 <= self.tradeoff_r <= 1:
            raise ValueError("table1_alpha must lie in (0, 1) and tradeoff_r in [0, 1]")
        if self.reps < 1 or self.rbar_reps < 1:
            raise ValueError("reps must be >= 1")
        if any(n < 3 for n in self.n_list) or self.table1_n < 3 or self.test_size < 1:
            raise ValueError("sample sizes too small")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


def config_from_dict(d: dict[str, Any], base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Build a config from nested plain data; unknown keys are errors."""
    base = base or ExperimentConfig()
    d = dict(d)
    lkw = d.pop("learners", None) or {}
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(d) - known
    lknown = {f.name for f in dataclasses.fields(LearnerConfig)}
    unknown |= {f"learners.{k}" for k in set(lkw) - lknown}
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    tupled = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    lkw = {k: tuple(v) if isinstance(v, list) else v for k, v in lkw.items()}
    learners = dataclasses.replace(base.learners, **lkw)
    return dataclasses.replace(base, learners=learners, **tupled)


def load_config(path: "str | Path") -> ExperimentConfig:
    import yaml

    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError("config file must hold a mapping")
    return config_from_dict(data)


# --- one replication ---------------------------------------------------------

@dataclass
class FittedReplication:
    """Everything fitted in one replication, ready to evaluate cells."""

    ds: Dataset
    test: Dataset
    split: Any
    score: ScoreFunction
    gen: Any
    glb: Optional[GlbPolicy]
    rng: Rng
    test_scores: np.ndarray

    def conformal_masks(self, alphas: Iterable[float], r: float, label_source: str):
        """(alpha, mask, q_hat, delta) per alpha for one calibration draw."""
        cal = calibrate(self.ds, self.split.idx_cal, self.gen, self.score, 0.5, r,
                        self.rng.child(Stream.ORACLE_LABELS), label_source)
        cdfs = None
        if label_source == "blackbox":
            cdfs = label_cdfs(self.test, np.arange(self.test.n), self.gen, self.score)
        out = []
        for a in alphas:
            q = cal.quantile(a)
            delta = math.nan if cdfs is None else cdfs.delta(q, r)
            out.append((a, conformal_mask(self.test_scores, q), q, delta))
        return out

    def glb_mask(self, alpha: float) -> np.ndarray:
        if self.glb is None:
            raise ValueError("GLB was not fitted in this replication")
        return dataclasses.replace(self.glb, alpha=alpha).predict_mask(self.test.X)


def fit_replication(cfg: ExperimentConfig, n: int, rep: int, with_glb: bool = True,
                    secondary: bool = False) -> FittedReplication:
    L = cfg.learners
    rng = Rng(cfg.seed).child(n, rep)
    scfg = dgp.SyntheticConfig(n=n, secondary_outcome=secondary)
    ds = dgp.generate(scfg, rng.child(Stream.DATA))
    test = dgp.generate(dataclasses.replace(scfg, n=cfg.test_size), rng.child(Stream.TEST_DATA))
    split = split_three_way(ds, L.fractions, rng.child(Stream.SPLIT))
    reg = fit_arm_regressor(ds, split.idx_train, L.score_learner, L.score_basis,
                            k=L.k, B=L.B, rng=rng.child(Stream.BOOTSTRAP, 0))
    score = ScoreFunction.from_regressor(reg)
    gen = fit_q_learning_label_generator(
        ds, split.idx_b, L.labeler_basis, "iw" if L.labeler == "qlearn-iw" else "none")
    glb = None
    if with_glb:
        glb = fit_glb(ds, split, 0.5, L.glb_learner, L.glb_basis, L.split_maxmin,
                      rng.child(Stream.BOOTSTRAP, 1), k=L.k, B=L.B)
    return FittedReplication(ds, test, split, score, gen, glb, rng, score.scores(test.X))


def _row(report, method: str, alpha: float, r: float, n: int, rep: int, q_hat=math.nan) -> dict:
    row = report.row(method, alpha, r)
    row.update(n=n, rep=rep, q_hat=q_hat)
    return row


def replication_rows(cfg: ExperimentConfig, n: int, rep: int, alphas, rs) -> list[dict]:
    """Evaluate every requested cell of one replication."""
    fit = fit_replication(cfg, n, rep, with_glb="glb" in cfg.methods)
    rows = []
    if "ocp" in cfg.methods:
        for a, mask, q, _ in fit.conformal_masks(alphas, 0.0, "oracle"):
            rep_ = evaluate_cell(mask, fit.test, choices=(LOWER,), delta_at_qhat=0.0)
            rows.append(_row(rep_, "ocp", a, 0.0, n, rep, q))
    if "conformal" in cfg.methods:
        for r in rs:
            for a, mask, q, delta in fit.conformal_masks(alphas, r, "blackbox"):
                rep_ = evaluate_cell(mask, fit.test, choices=(LOWER,), delta_at_qhat=delta)
                rows.append(_row(rep_, "conformal", a, r, n, rep, q))
    if "glb" in cfg.methods:
        for a in alphas:
            # the bound level 1 - alpha/2 is undefined at alpha = 0
            if not 0 < a < 1:
                continue
            rep_ = evaluate_cell(fit.glb_mask(a), fit.test, choices=(LOWER,))
            rows.append(_row(rep_, "glb", a, math.nan, n, rep))
    return rows


SWEEP_COLUMNS = ("n", "rep") + REPORT_COLUMNS + ("q_hat",)


def _map(fn, tasks: list[tuple], threads: int) -> list:
    if threads <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futs = [pool.submit(fn, *t) for t in tasks]
        return [f.result() for f in futs]


def write_rows(rows: list[dict], path: "str | Path", columns: Iterable[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def run_sweep(cfg: ExperimentConfig, path: "str | Path | None" = None) -> list[dict]:
    """Long-format rows, one per method x alpha x r x n x rep."""
    tasks = [(cfg, n, rep, cfg.alpha_grid, cfg.r_grid) for n in cfg.n_list for rep in range(cfg.reps)]
    rows = [r for chunk in _map(replication_rows, tasks, cfg.threads) for r in chunk]
    if path is not None:
        write_rows(rows, path, SWEEP_COLUMNS)
    return rows


METRICS = ("coverage_hit", "coverage_prop", "cov_region_12", "cov_region_34", "mean_card",
           "empty_frac", "spv_uniform", "spv_lower", "delta_at_qhat")
TABLE1_COLUMNS = ("method", "alpha", "r", "reps") + tuple(
    c for m in METRICS for c in (m, m + "_se"))


def summarize(rows: list[dict], keys=("method", "alpha", "r")) -> list[dict]:
    """Mean and standard error per cell, in first-appearance order."""
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        k = tuple("nan" if isinstance(row[c], float) and math.isnan(row[c]) else row[c] for c in keys)
        groups.setdefault(k, []).append(row)
    out = []
    for k, grp in groups.items():
        agg = {c: grp[0][c] for c in keys}
        agg["reps"] = len(grp)
        for m in METRICS:
            v = np.array([g[m] for g in grp], dtype=float)
            if np.isnan(v).all():
                agg[m] = agg[m + "_se"] = math.nan
                continue
            v = v[~np.isnan(v)]
            agg[m] = float(v.mean())
            agg[m + "_se"] = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
        out.append(agg)
    return out


def run_table1(cfg: ExperimentConfig, path: "str | Path | None" = None,
               raw_path: "str | Path | None" = None) -> list[dict]:
    """The Table-1 grid at one (n, alpha): OCP, conformal at each r, GLB."""
    tasks = [(cfg, cfg.table1_n, rep, (cfg.table1_alpha,), cfg.table1_r) for rep in range(cfg.reps)]
    rows = [r for chunk in _map(replication_rows, tasks, cfg.threads) for r in chunk]
    if raw_path is not None:
        write_rows(rows, raw_path, SWEEP_COLUMNS)
    table = summarize(rows)
    if path is not None:
        write_rows(table, path, TABLE1_COLUMNS)
    return table


# --- tradeoff ----------------------------------------------------------------

TRADEOFF_COLUMNS = ("rep", "method", "alpha", "r", "choice", "spv_y", "spv_xi", "mean_card",
                    "arm_gap")


def tradeoff_rows(cfg: ExperimentConfig, rep: int) -> list[dict]:
    n = cfg.table1_n
    fit = fit_replication(cfg, n, rep, with_glb="glb" in cfg.methods, secondary=True)
    mu = fit.test.oracle.mu_values
    gap = float((mu.max(axis=1) - mu.min(axis=1)).mean())
    cells = []
    for a, mask, _, _ in fit.conformal_masks(cfg.tradeoff_alpha, cfg.tradeoff_r, "blackbox"):
        cells.append(("conformal", a, cfg.tradeoff_r, mask))
    if "glb" in cfg.methods:
        cells += [("glb", a, math.nan, fit.glb_mask(a)) for a in cfg.tradeoff_alpha if 0 < a < 1]
    rows = []
    for method, a, r, mask in cells:
        for choice in (UNIFORM, LOWER):
            rows.append({
                "rep": rep, "method": method, "alpha": a, "r": r, "choice": choice.name,
                "spv_y": set_policy_value(mask, choice, fit.test),
                "spv_xi": set_policy_value(mask, choice, fit.test, outcome="secondary"),
                "mean_card": float(mask.sum(axis=1).mean()), "arm_gap": gap,
            })
    return rows


def run_tradeoff(cfg: ExperimentConfig, path: "str | Path | None" = None) -> list[dict]:
    """Primary and secondary set-policy values under uniform and lowest-arm choice."""
    tasks = [(cfg, rep) for rep in range(cfg.reps)]
    rows = [r for chunk in _map(tradeoff_rows, tasks, cfg.threads) for r in chunk]
    if path is not None:
        write_rows(rows, path, TRADEOFF_COLUMNS)
    return rows


# --- r-bar -------------------------------------------------------------------

RBAR_COLUMNS = ("rep", "alpha", "rbar", "r_used", "coverage_hit", "coverage_prop", "mean_card",
                "coverage_hit_r0", "mean_card_r0")


def rbar_row(cfg: ExperimentConfig, rep: int) -> dict:
    a = cfg.table1_alpha
    fit = fit_replication(cfg, cfg.table1_n, rep, with_glb=False)
    rbar = estimate_rbar(fit.ds, fit.split.idx_cal, fit.gen, fit.score, a,
                         reps=50, rng=fit.rng.child(Stream.RBAR))
    r_used = min(1.0, rbar + cfg.rbar_margin)
    (_, m0, _, _), = fit.conformal_masks((a,), 0.0, "blackbox")
    (_, m1, _, _), = fit.conformal_masks((a,), r_used, "blackbox")
    e0 = evaluate_cell(m0, fit.test, choices=())
    e1 = evaluate_cell(m1, fit.test, choices=())
    return {"rep": rep, "alpha": a, "rbar": rbar, "r_used": r_used,
            "coverage_hit": e1.coverage_hit, "coverage_prop": e1.coverage_prop,
            "mean_card": e1.mean_cardinality,
            "coverage_hit_r0": e0.coverage_hit, "mean_card_r0": e0.mean_cardinality}


def run_rbar(cfg: ExperimentConfig, path: "str | Path | None" = None) -> list[dict]:
    """Estimate r-bar per replication, then rerun calibration with a small margin on top."""
    tasks = [(cfg, rep) for rep in range(cfg.rbar_reps)]
    rows = _map(rbar_row, tasks, cfg.threads)
    if path is not None:
        write_rows(rows, path, RBAR_COLUMNS)
    return rows
