"""Cost of each contract family against n on the two-action example; writes a CSV and an SVG.

Usage: python scripts/figure1.py [OUT_DIR]
"""
import csv
import sys
from pathlib import Path

from contract_rates.cli import run_experiment
from contract_rates.config import preset

out = Path(sys.argv[1] if len(sys.argv) > 1 else "results/figure1")
res = run_experiment(preset("figure1", plot=True), out)
with open(out / "figure1.csv") as fh:
    rows = list(csv.DictReader(fh))
print(f"{'n':>4} {'lenient':>12} {'strict':>12} {'util-linear':>12} {'second best':>12}")
for r in rows[::5]:
    print(f"{r['n']:>4} " + " ".join(f"{r[k]:>12.12}" for k in
                                     ("cost_lenient", "cost_strict", "cost_utility_linear", "cost_second_best")))
print(f"first best {rows[0]['cost_first_best']}; verdicts {res.verdicts}")
sys.exit(0 if res.ok else 1)
