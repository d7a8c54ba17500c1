"""Fitted decay exponents of the binary-contract gap in both payoff regimes.

Usage: python scripts/rates.py
"""
import math

from contract_rates.monitoring import MonitoringTechnology
from contract_rates.preferences import CostFunction, UtilitySpec
from contract_rates.rates import verify_theorem

mt = MonitoringTechnology.from_table({0: (0.7, 0.3), 1: (0.3, 0.7)}, 1, ("low", "high"))
costs = CostFunction({0: 0.0, 1: 2.0}, 1)
grid = range(40, 401, 40)
runs = {
    "baseline, lenient thresholds": verify_theorem(mt, UtilitySpec("log", 0.1), costs, "baseline",
                                                   "binary_lenient", grid),
    "limited liability, threshold 0": verify_theorem(mt, UtilitySpec("log", 1.0), costs, "limited_liability",
                                                     "binary_fixed", grid, thresholds={0: 0.0}),
}
for name, rep in runs.items():
    print(f"{name}: fitted {rep.fitted_rate:.4f}, tail slope {rep.tail_slope:.4f}, "
          f"theory {rep.theoretical_rate:.4f}, verdict {'pass' if rep.verdict else 'fail'}")
    for n, g in zip(rep.ns, rep.gaps):
        print(f"  n={int(n):>3}  gap={g:.4e}  -ln(gap)/n={-math.log(g) / n:.4f}")
