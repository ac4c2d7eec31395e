"""Primary-outcome loss versus secondary-outcome gain over alpha."""

from collections import defaultdict

from _common import parse, timer

import numpy as np
from svpl.experiments import run_tradeoff

cfg, out = parse(__doc__)
with timer():
    rows = run_tradeoff(cfg, out / "tradeoff.csv")
cells = defaultdict(list)
for row in rows:
    cells[(row["method"], row["alpha"], row["choice"])].append((row["spv_y"], row["spv_xi"]))
for (method, alpha, choice), v in sorted(cells.items()):
    y, xi = np.mean(v, axis=0)
    print(f"{method:<10} alpha={alpha:.2f} {choice:<8} Y={y:.3f} xi={xi:.3f}")
