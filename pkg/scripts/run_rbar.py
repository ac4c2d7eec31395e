"""Data-driven injection rate r-bar and the coverage it buys at alpha=0.1."""

from _common import parse, timer

import numpy as np
from svpl.experiments import run_rbar

cfg, out = parse(__doc__)
with timer():
    rows = run_rbar(cfg, out / "rbar.csv")
rbar = np.array([r["rbar"] for r in rows])
hit = np.array([r["coverage_hit"] for r in rows])
hit0 = np.array([r["coverage_hit_r0"] for r in rows])
print(f"rbar mean={rbar.mean():.3f} sd={rbar.std(ddof=1) if len(rbar) > 1 else 0:.3f}")
print(f"coverage_hit: r=0 {hit0.mean():.3f}  r=rbar {hit.mean():.3f}")
