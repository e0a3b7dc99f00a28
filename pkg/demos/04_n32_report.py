"""
Reading the N=32 comparison report
==================================

``nestpolar compare`` writes one row per K with the EsN0 each code needs
for a block error rate of 1e-2.  This script tabulates the recorded run
in ``results/n32_scl_pm`` and counts the K where the learned sequence is
within 0.1 dB of DE/GA or better.
"""

import json
from pathlib import Path

from nestpolar.cli import read_report

here = Path(__file__).resolve().parents[1] / "results" / "n32_scl_pm"
rows = read_report(here / "comparison.csv")
summary = json.loads((here / "summary.json").read_text())

# %%
print(f"{'K':>3} {'learned':>8} {'DE/GA':>8} {'gain':>7}")
for r in rows:
    print(f"{r['K']:3d} {r['esn0_learned_db']:8.2f} {r['esn0_baseline_db']:8.2f} "
          f"{r['delta_db']:+7.2f}")

# %%
ok = sum(r["delta_db"] >= -0.1 for r in rows if 4 <= r["K"] <= 28)
print(f"\n{ok} of {sum(4 <= r['K'] <= 28 for r in rows)} K values within 0.1 dB or better")
print(f"training: {summary['episodes']} episodes, {summary['simulations']} simulations, "
      f"{summary['wall_time_s'] / 3600:.2f} h")
