"""Coverage, cardinality and SPV at n=6000, alpha=0.1 for OCP, conformal and GLB."""

from _common import parse, timer

from svpl.experiments import run_table1

cfg, out = parse(__doc__)
with timer():
    table = run_table1(cfg, out / "table1.csv", out / "table1_raw.csv")
print(f"{'method':<10}{'r':>5}{'hit':>8}{'prop':>8}{'card':>8}{'spv':>8}")
for row in table:
    print(f"{row['method']:<10}{row['r']:>5.2f}{row['coverage_hit']:>8.3f}"
          f"{row['coverage_prop']:>8.3f}{row['mean_card']:>8.2f}{row['spv_uniform']:>8.2f}")
