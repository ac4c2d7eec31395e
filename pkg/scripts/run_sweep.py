"""Full (n, alpha, r) sweep; one CSV row per replication and cell."""

from _common import parse, timer

from svpl.experiments import run_sweep

cfg, out = parse(__doc__)
with timer():
    rows = run_sweep(cfg, out / "sweep.csv")
print(f"{len(rows)} rows -> {out / 'sweep.csv'}")
