"""Shared argument handling for the experiment scripts."""

import argparse
import dataclasses
import time
from pathlib import Path

from svpl.experiments import ExperimentConfig, load_config


def parse(description: str) -> tuple[ExperimentConfig, Path]:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", default=None, help="YAML experiment config")
    p.add_argument("--reps", type=int, default=None, help="override the replication count")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    a = p.parse_args()
    cfg = load_config(a.config) if a.config else ExperimentConfig()
    over = {k: v for k, v in (("threads", a.threads), ("out_dir", a.out_dir)) if v is not None}
    if a.reps is not None:
        over.update(reps=a.reps, rbar_reps=a.reps)
    cfg = dataclasses.replace(cfg, **over)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


class timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, *exc):
        if exc_type is None:
            print(f"done in {time.perf_counter() - self.t0:.1f}s")
