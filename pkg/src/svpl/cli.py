"""Command-line entry point ``svpl``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import dgp
from .conformal import (DegenerateDenominator, EmptyScores, ScoreFunction, calibrate, check_fosd,
                        conformal_mask, dominance_grid, estimate_rbar, label_cdfs)
from .core import (EmptyFold, OracleRequired, Rng, Stream, SvplError, read_dataset_csv,
                   read_sets_csv, split_three_way, write_dataset_csv, write_sets_csv)
from .evaluation import LOWER, REPORT_COLUMNS, evaluate_cell
from .experiments import (ExperimentConfig, config_from_dict, load_config,
                          run_rbar, run_sweep, run_table1, run_tradeoff, write_rows)
from .glb import fit_glb
from .learners import ArmUnderflow, fit_arm_regressor, fit_q_learning_label_generator

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(Exception):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="svpl", description="Set-valued treatment policies with coverage guarantees.")
    p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    p.add_argument("--threads", type=int, default=None, help="worker processes for replications")
    p.add_argument("--out-dir", default=None, help="directory for experiment outputs")
    p.add_argument("--config", default=None, help="YAML experiment config; flags override it")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw one synthetic dataset")
    s.add_argument("--n", type=int, default=6000)
    s.add_argument("--out", required=True)
    s.add_argument("--secondary", action="store_true", help="attach the secondary outcome")

    def data_args(q):
        q.add_argument("--data", required=True)
        q.add_argument("--out", required=True)
        q.add_argument("--alpha", type=float, default=0.1)
        q.add_argument("--fractions", type=_floats, default=None, help="label,train,cal fractions")
        q.add_argument("--k", type=int, default=None)
        q.add_argument("--B", type=int, default=None)

    g = sub.add_parser("run-glb", help="fit a GLB policy on a dataset and write its sets")
    data_args(g)
    g.add_argument("--learner", choices=("ols", "knn"), default=None)
    g.add_argument("--basis", choices=("linear", "dgp-aware"), default=None)
    g.add_argument("--no-split-maxmin", action="store_true")
    g.add_argument("--predict", default=None, help="CSV of rows to build sets for (default: --data)")

    c = sub.add_parser("run-conformal", help="calibrate a conformal set policy and write its sets")
    data_args(c)
    c.add_argument("--r", type=float, default=0.0)
    c.add_argument("--labeler", choices=("qlearn", "qlearn-iw"), default=None)
    c.add_argument("--score-learner", choices=("ols", "knn"), default=None)
    c.add_argument("--score-basis", choices=("linear", "dgp-aware"), default=None)
    c.add_argument("--predict", default=None, help="CSV of rows to build sets for (default: --data)")
    c.add_argument("--diagnostics", default=None, help="diagnostics CSV (default: <out>.diag.csv)")
    c.add_argument("--rbar-reps", type=int, default=50)

    e = sub.add_parser("evaluate", help="score a sets CSV against oracle truth")
    e.add_argument("--sets", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--method", default="custom")
    e.add_argument("--alpha", type=float, default=math.nan)
    e.add_argument("--r", type=float, default=math.nan)

    for name, helptext in (("table1", "Table-1 grid with means and standard errors"),
                           ("sweep", "long-format alpha x r x n sweep"),
                           ("tradeoff", "secondary-outcome tradeoff of choice functions"),
                           ("rbar", "estimate r-bar and rerun with it")):
        q = sub.add_parser(name, help=helptext)
        q.add_argument("--reps", type=int, default=None)
        q.add_argument("--n", type=_ints, default=None, help="sample size(s), comma separated")
        q.add_argument("--alpha", type=_floats, default=None, help="alpha value(s)")
        q.add_argument("--r", type=_floats, default=None, help="r value(s)")
        q.add_argument("--methods", default=None, help="comma list from ocp,conformal,glb")
        q.add_argument("--k", type=int, default=None)
        q.add_argument("--B", type=int, default=None)
        q.add_argument("--score-learner", choices=("ols", "knn"), default=None)
        q.add_argument("--glb-learner", choices=("ols", "knn"), default=None)
        q.add_argument("--labeler", choices=("qlearn", "qlearn-iw"), default=None)
        q.add_argument("--test-size", type=int, default=None)
        q.add_argument("--plot", action="store_true", help="also write a PNG figure")
    return p


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    top = {k: v for k, v in (("seed", args.seed), ("threads", args.threads), ("out_dir", args.out_dir))
           if v is not None}
    learners = {}
    for flag, key in (("k", "k"), ("B", "B"), ("score_learner", "score_learner"),
                      ("glb_learner", "glb_learner"), ("labeler", "labeler"),
                      ("learner", "glb_learner"), ("basis", "glb_basis"),
                      ("score_basis", "score_basis")):
        v = getattr(args, flag, None)
        if v is not None:
            learners[key] = v
    if getattr(args, "fractions", None) is not None:
        learners["fractions"] = tuple(args.fractions)
    if getattr(args, "no_split_maxmin", False):
        learners["split_maxmin"] = False
    cmd = args.command
    if getattr(args, "reps", None) is not None:
        top["rbar_reps" if cmd == "rbar" else "reps"] = args.reps
    if getattr(args, "test_size", None) is not None:
        top["test_size"] = args.test_size
    if getattr(args, "methods", None):
        top["methods"] = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    if cmd in ("table1", "sweep", "tradeoff", "rbar"):
        if args.n is not None:
            if cmd == "sweep":
                top["n_list"] = args.n
            else:
                top["table1_n"] = args.n[0]
        if args.alpha is not None:
            key = {"sweep": "alpha_grid", "tradeoff": "tradeoff_alpha"}.get(cmd)
            if key:
                top[key] = args.alpha
            else:
                top["table1_alpha"] = args.alpha[0]
        if args.r is not None:
            key = {"sweep": "r_grid", "table1": "table1_r"}.get(cmd)
            if key:
                top[key] = args.r
            elif cmd == "tradeoff":
                top["tradeoff_r"] = args.r[0]
    return config_from_dict({**top, "learners": learners}, cfg)


def _oracle_path(path: Path) -> Path:
    return path.with_name(path.stem + ".oracle.csv")


def _write_oracle_csv(ds, path: Path) -> None:
    o = ds.require_oracle()
    K = ds.K
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row"] + [f"pi_{a + 1}" for a in range(K)] + [f"y{a + 1}" for a in range(K)])
        for i in range(ds.n):
            w.writerow([i] + [int(v) for v in o.optimal_sets[i]]
                       + [repr(float(v)) for v in o.potential_outcomes[i]])


def _load(path: str):
    """Dataset with oracle truth recomputed from the benchmark mean function."""
    ds = read_dataset_csv(path, K=dgp.N_ARMS, oracle_fn=dgp.mean_matrix)
    return ds


def cmd_simulate(args) -> int:
    seed = 0 if args.seed is None else args.seed
    cfg = dgp.SyntheticConfig(n=args.n, seed=seed, secondary_outcome=args.secondary)
    ds = dgp.generate(cfg, Rng(seed))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset_csv(ds, out)
    _write_oracle_csv(ds, _oracle_path(out))
    print(f"wrote {out} and {_oracle_path(out)} ({ds.n} rows)")
    return 0


def _fit_common(args, cfg: ExperimentConfig):
    ds = _load(args.data)
    rng = Rng(cfg.seed)
    split = split_three_way(ds, cfg.learners.fractions, rng.child(Stream.SPLIT))
    target = _load(args.predict) if args.predict else ds
    return ds, target, split, rng


def cmd_run_glb(args, cfg: ExperimentConfig) -> int:
    if not 0 < args.alpha < 1:
        raise ConfigError("alpha must lie in (0, 1) for GLB")
    ds, target, split, rng = _fit_common(args, cfg)
    L = cfg.learners
    pol = fit_glb(ds, split, args.alpha, L.glb_learner, L.glb_basis, L.split_maxmin,
                  rng.child(Stream.BOOTSTRAP, 1), k=L.k, B=L.B)
    mask = pol.predict_mask(target.X)
    write_sets_csv(mask, args.out)
    print(f"wrote {args.out}: mean cardinality {mask.sum(axis=1).mean():.3f}")
    return 0


DIAG_COLUMNS = ("alpha", "r", "q_hat", "delta_at_qhat", "fosd_holds", "rbar_estimate")


def cmd_run_conformal(args, cfg: ExperimentConfig) -> int:
    if not 0 <= args.alpha <= 1 or not 0 <= args.r <= 1:
        raise ConfigError("alpha and r must lie in [0, 1]")
    ds, target, split, rng = _fit_common(args, cfg)
    L = cfg.learners
    reg = fit_arm_regressor(ds, split.idx_train, L.score_learner, L.score_basis,
                            k=L.k, B=L.B, rng=rng.child(Stream.BOOTSTRAP, 0))
    score = ScoreFunction.from_regressor(reg)
    gen = fit_q_learning_label_generator(ds, split.idx_b, L.labeler_basis,
                                         "iw" if L.labeler == "qlearn-iw" else "none")
    cal = calibrate(ds, split.idx_cal, gen, score, args.alpha, args.r, rng.child(Stream.ORACLE_LABELS))
    mask = conformal_mask(score.scores(target.X), cal.q_hat)
    write_sets_csv(mask, args.out)
    cdfs = label_cdfs(ds, split.idx_cal, gen, score)
    fosd = check_fosd(cdfs.F_rd, cdfs.F_hat, dominance_grid(cdfs.F_rd, cdfs.F_hat))
    try:
        rbar = estimate_rbar(ds, split.idx_cal, gen, score, args.alpha, reps=args.rbar_reps,
                             rng=rng.child(Stream.RBAR))
    except DegenerateDenominator:
        rbar = math.nan
    diag = {"alpha": args.alpha, "r": args.r, "q_hat": cal.q_hat,
            "delta_at_qhat": cdfs.delta(cal.q_hat, args.r), "fosd_holds": int(fosd.holds),
            "rbar_estimate": rbar}
    diag_path = args.diagnostics or str(Path(args.out).with_suffix("")) + ".diag.csv"
    write_rows([diag], diag_path, DIAG_COLUMNS)
    print(f"wrote {args.out} and {diag_path}: q_hat={cal.q_hat:.4g}, "
          f"mean cardinality {mask.sum(axis=1).mean():.3f}")
    return 0


def cmd_evaluate(args) -> int:
    ds = _load(args.data)
    rows, mask = read_sets_csv(args.sets)
    if mask.shape[1] != ds.K:
        raise ConfigError(f"sets file has {mask.shape[1]} arms, data has {ds.K}")
    sub = ds.subset(rows)
    rep = evaluate_cell(mask, sub, choices=(LOWER,))
    write_rows([rep.row(args.method, args.alpha, args.r)], args.report, REPORT_COLUMNS)
    print(f"coverage_hit={rep.coverage_hit:.4f} coverage_prop={rep.coverage_prop:.4f} "
          f"mean_card={rep.mean_cardinality:.3f}")
    return 0


def _plot(kind: str, rows: list[dict], path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    if kind == "sweep":
        conf = [r for r in rows if r["method"] == "conformal"]
        for rv in sorted({r["r"] for r in conf}):
            pts = sorted({r["alpha"] for r in conf})
            ys = [np.mean([r["mean_card"] for r in conf if r["r"] == rv and r["alpha"] == a]) for a in pts]
            ax.plot(pts, ys, label=f"r={rv:g}")
        ax.set_xlabel("alpha")
        ax.set_ylabel("mean cardinality")
        ax.legend(fontsize=7)
    elif kind == "table1":
        names = [f"{r['method']}" + ("" if r["method"] != "conformal" else f" r={r['r']:g}") for r in rows]
        ax.bar(names, [r["coverage_hit"] for r in rows])
        ax.set_ylabel("coverage (hit)")
        ax.set_ylim(0, 1)
    elif kind == "tradeoff":
        for choice in ("uniform", "lower"):
            sel = [r for r in rows if r["method"] == "conformal" and r["choice"] == choice]
            pts = sorted({r["alpha"] for r in sel})
            ax.plot(pts, [np.mean([r["spv_xi"] for r in sel if r["alpha"] == a]) for a in pts], label=choice)
        ax.set_xlabel("alpha")
        ax.set_ylabel("secondary outcome value")
        ax.legend()
    else:
        ax.hist([r["rbar"] for r in rows], bins=20)
        ax.set_xlabel("r-bar estimate")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_experiment(args, cfg: ExperimentConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.command == "table1":
        rows = run_table1(cfg, out / "table1.csv", out / "table1_raw.csv")
        target = out / "table1.csv"
    elif args.command == "sweep":
        rows = run_sweep(cfg, out / "sweep.csv")
        target = out / "sweep.csv"
    elif args.command == "tradeoff":
        rows = run_tradeoff(cfg, out / "tradeoff.csv")
        target = out / "tradeoff.csv"
    else:
        rows = run_rbar(cfg, out / "rbar.csv")
        target = out / "rbar.csv"
    if args.plot:
        _plot(args.command, rows, target.with_suffix(".png"))
    print(f"wrote {target} ({len(rows)} rows)")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config(args)
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "evaluate":
            return cmd_evaluate(args)
        if args.command == "run-glb":
            return cmd_run_glb(args, cfg)
        if args.command == "run-conformal":
            return cmd_run_conformal(args, cfg)
        return cmd_experiment(args, cfg)
    except (ConfigError, ValueError, EmptyFold, FileNotFoundError, OracleRequired, ArmUnderflow) as exc:
        print(f"svpl: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegenerateDenominator, EmptyScores, np.linalg.LinAlgError, FloatingPointError, SvplError) as exc:
        print(f"svpl: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
