"""Empirical decay rates of cost gaps and their comparison with theory."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np

from . import solvers
from .contracts import (InfeasibleContract, build_binary_test, gap_to_first_best,
                        lenient_thresholds)
from .monitoring import MonitoringTechnology, theoretical_rate
from .preferences import CostFunction, ModelError, Regime, UtilitySpec, first_best_cost, require_valid
from .score_dist import enumerate_types

Action = Hashable

DEFAULT_TOLERANCE = 0.15
# Relative floor to use when gaps come from differencing two costs; gaps computed
# from exact offsets carry no such floor.
NOISE_FLOOR_REL = 1e-14


@dataclass
class RateReport:
    mode: str                       # "exponential" or "one_over_n"
    fitted_rate: float              # slope of -ln(gap) in n, or K in gap ~ K / n
    theoretical_rate: float | None
    fit_window: tuple
    residual: float                 # R^2 of the regression
    verdict: bool | None
    tolerance: float
    ns: np.ndarray
    gaps: np.ndarray
    local_slopes: np.ndarray        # exponential: d(-ln gap)/dn; one_over_n: ratios of n * gap
    dropped: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def tail_slope(self) -> float:
        return float(self.local_slopes[-1])

    def tail_within(self, target: float, rel_tol: float, last: int = 1) -> bool:
        tail = self.local_slopes[-last:]
        return bool(np.all(np.abs(tail - target) <= rel_tol * abs(target)))

    def inversions_toward(self, target: float, last: int = 10) -> int:
        """Count steps where the distance of the local slope to ``target`` grows."""
        dist = np.abs(self.local_slopes[-last:] - target)
        return int(np.sum(np.diff(dist) > 1e-12 * max(1.0, abs(target))))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["n", "gap", "log_gap", "local_slope", "fitted_rate", "theoretical_rate", "verdict"])
            slopes = [""] + [repr(float(s)) for s in self.local_slopes]
            for i, (n, g) in enumerate(zip(self.ns, self.gaps)):
                wr.writerow([int(n), repr(float(g)), repr(math.log(g)), slopes[i],
                             repr(self.fitted_rate),
                             "" if self.theoretical_rate is None else repr(self.theoretical_rate),
                             "" if self.verdict is None else ("pass" if self.verdict else "fail")])


def _clean(ns, gaps, window, floor):
    ns = np.asarray(ns, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    if ns.shape != gaps.shape:
        raise ValueError("n and gap sequences differ in length")
    order = np.argsort(ns)
    ns, gaps = ns[order], gaps[order]
    if window is not None:
        keep = (ns >= window[0]) & (ns <= window[1])
        ns, gaps = ns[keep], gaps[keep]
    bad = ~np.isfinite(gaps) | (gaps <= floor)
    dropped = [int(n) for n in ns[bad]]
    ns, gaps = ns[~bad], gaps[~bad]
    if len(ns) < 4:
        raise ValueError(f"need at least 4 positive gaps in the window, have {len(ns)}")
    return ns, gaps, dropped


def _r2(y, yhat):
    ss = float(np.sum((y - y.mean()) ** 2))
    return 1.0 if ss == 0 else 1.0 - float(np.sum((y - yhat) ** 2)) / ss


def fit_exponential_rate(ns: Sequence[float], gaps: Sequence[float], window: tuple | None = None,
                         theoretical: float | None = None, tolerance: float = DEFAULT_TOLERANCE,
                         floor: float = 0.0) -> RateReport:
    """Least-squares slope of -ln(gap) against n plus finite-difference local slopes.

    The verdict compares the last local slope with ``theoretical``.
    """
    ns, gaps, dropped = _clean(ns, gaps, window, floor)
    y = -np.log(gaps)
    slope, icpt = np.polyfit(ns, y, 1)
    local = np.diff(y) / np.diff(ns)
    verdict = None
    if theoretical is not None:
        verdict = bool(abs(local[-1] - theoretical) <= tolerance * theoretical)
    return RateReport("exponential", float(slope), theoretical, (int(ns[0]), int(ns[-1])),
                      _r2(y, slope * ns + icpt), verdict, tolerance, ns, gaps, local, dropped)


def fit_inverse_n(ns: Sequence[float], gaps: Sequence[float], window: tuple | None = None,
                  tolerance: float = 0.1, floor: float = 0.0, stable_points: int = 5) -> RateReport:
    """K in gap ~ K / n by least squares through the origin; local values are ratios of n * gap."""
    ns, gaps, dropped = _clean(ns, gaps, window, floor)
    x = 1.0 / ns
    K = float(np.dot(x, gaps) / np.dot(x, x))
    ngap = ns * gaps
    ratios = ngap[1:] / ngap[:-1]
    tail = ratios[-stable_points:]
    verdict = bool(np.all((tail >= 1 - tolerance) & (tail <= 1 + tolerance)))
    return RateReport("one_over_n", K, None, (int(ns[0]), int(ns[-1])), _r2(gaps, K * x), verdict,
                      tolerance, ns, gaps, ratios, dropped)


# ---------------------------------------------------------------------------

FAMILIES = ("binary_lenient", "binary_fixed", "best_binary", "second_best", "utility_linear")


def gap_sequence(mt: MonitoringTechnology, prefs: UtilitySpec, costs: CostFunction,
                 regime: Regime | str, family: str, n_grid: Sequence[int], eps: float = 0.05,
                 thresholds: Mapping | Callable[[int], Mapping] | None = None) -> tuple[list, list, list]:
    """Cost gaps of a contract family over ``n_grid``; infeasible n are returned separately."""
    regime = Regime(regime)
    ns, gaps, skipped = [], [], []
    for n in n_grid:
        sd = enumerate_types(mt, n)
        try:
            if family == "binary_lenient":
                bt = build_binary_test(mt, prefs, costs, n, lenient_thresholds(mt, costs, eps, n), regime, sd=sd)
                g = gap_to_first_best(bt.to_contract(sd), sd, costs, regime)
            elif family == "binary_fixed":
                thr = thresholds(n) if callable(thresholds) else thresholds
                bt = build_binary_test(mt, prefs, costs, n, thr, regime, sd=sd)
                g = gap_to_first_best(bt.to_contract(sd), sd, costs, regime)
            elif family == "best_binary":
                g = solvers.best_binary(mt, prefs, costs, n, regime, sd=sd).gap
            elif family == "second_best":
                g = solvers.solve_second_best(mt, prefs, costs, n, regime, sd=sd).gap
            elif family == "utility_linear":
                g = solvers.solve_linear(mt, prefs, costs, n, "utility_linear", regime, sd=sd).gap
            else:
                raise ValueError(f"unknown contract family {family!r}; choose from {FAMILIES}")
        except (InfeasibleContract, ModelError) as exc:
            skipped.append((n, str(exc)))
            continue
        ns.append(n)
        gaps.append(g)
    return ns, gaps, skipped


def verify_theorem(mt: MonitoringTechnology, prefs: UtilitySpec, costs: CostFunction,
                   regime: Regime | str, family: str, n_grid: Sequence[int],
                   tolerance: float = DEFAULT_TOLERANCE, eps: float = 0.05,
                   thresholds: Mapping | Callable[[int], Mapping] | None = None,
                   window: tuple | None = None) -> RateReport:
    """Gap sequence of a contract family, fitted and compared with the theoretical exponent."""
    regime = Regime(regime)
    require_valid(prefs, costs, regime)
    ns, gaps, skipped = gap_sequence(mt, prefs, costs, regime, family, n_grid, eps, thresholds)
    if family == "utility_linear":
        rep = fit_inverse_n(ns, gaps, window)
    else:
        rep = fit_exponential_rate(ns, gaps, window, theoretical_rate(mt, costs, regime), tolerance)
    rep.skipped = skipped
    return rep


def noise_floor(prefs: UtilitySpec, costs: CostFunction, regime: Regime | str = Regime.BASELINE) -> float:
    """Floor for gaps obtained by subtracting the first-best cost from a computed cost."""
    return NOISE_FLOOR_REL * first_best_cost(prefs, costs, regime)
