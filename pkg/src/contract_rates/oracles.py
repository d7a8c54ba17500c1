"""Independent reference computations for the derived reference values.

Each oracle recomputes a quantity by a route that does not go through the
package code (direct sums, dense grids, brute-force enumeration) and compares
it with both a frozen number and the package result.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import adjustable, contracts, monitoring, score_dist, solvers
from .preferences import CostFunction, Regime, UtilitySpec

FIG1_MU = {0: (0.7, 0.3), 1: (0.3, 0.7)}
KL_FIG1 = 0.4 * math.log(7 / 3)          # 0.338919144...
CHERNOFF_FIG1 = 0.0872                   # -ln(2 sqrt(0.21)), frozen to 4 digits
COST_N1 = 0.7 * math.exp(3.5) + 0.3 * math.exp(-1.5)


@dataclass
class OracleResult:
    name: str
    expected: float
    actual: float
    tol: float
    passed: bool


def _check(name, expected, actual, tol) -> OracleResult:
    ok = bool(np.isfinite(actual) and abs(actual - expected) <= tol)
    return OracleResult(name, float(expected), float(actual), tol, ok)


def fig1():
    mt = monitoring.MonitoringTechnology.from_table(FIG1_MU, 1, ("low", "high"))
    return mt, UtilitySpec("log", 0.1), CostFunction({0: 0.0, 1: 2.0}, 1)


def _kl_direct(p, q):
    return sum(pi * math.log(pi / qi) for pi, qi in zip(p, q))


def chernoff_lambda_grid(p, q, points: int = 100_001) -> float:
    lam = np.linspace(0, 1, points)[:, None]
    return float(-np.min(np.log(np.sum(np.asarray(p) ** lam * np.asarray(q) ** (1 - lam), axis=1))))


def chernoff_nu_grid(p, q, points: int = 200_001) -> float:
    """min over binary nu of max(KL(nu, p), KL(nu, q)) on a dense grid."""
    x = np.linspace(1e-9, 1 - 1e-9, points)
    nu = np.column_stack([x, 1 - x])
    kp = np.sum(nu * np.log(nu / np.asarray(p)), axis=1)
    kq = np.sum(nu * np.log(nu / np.asarray(q)), axis=1)
    return float(np.min(np.maximum(kp, kq)))


def second_best_n1_grid(points: int = 400_001) -> float:
    """n = 1 second best by scanning v(low); v(high) is the least value meeting IR and IC.

    The point where IR and IC bind together (the 2x2 linear system) is added to the grid.
    """
    kink = np.linalg.solve([[0.3, 0.7], [-0.4, 0.4]], [2.0, 2.0])[0]
    v0 = np.append(np.linspace(math.log(0.1), 2.0, points), kink)
    v1 = np.maximum((2 - 0.3 * v0) / 0.7, v0 + 2 / 0.4)
    return float(np.min(0.3 * np.exp(v0) + 0.7 * np.exp(v1)))


def block_product_payoff(T: int = 2, n: int = 8, gamma: float = 0.0) -> tuple[float, float]:
    """Agent payoff and all-pass probability by enumerating every signal sequence of all blocks."""
    mt, prefs, costs = fig1()
    ap = adjustable.AdjustableProblem(mt, prefs, costs, T, {0: 0.0, 1: 3.0}, n, allow_weak_first_best=True)
    sb = adjustable.build_sequential_binary(ap, {0: gamma})
    m = n // T
    lr = math.log(0.7 / 0.3)
    p_all, pay = 0.0, 0.0
    # on path every block is played with the target, since failures only matter through v_minus
    # and the recommended switch to the cheapest action after a failure
    for seq in itertools.product((0, 1), repeat=n):
        prob, on_path, passed_all, cost = 1.0, True, True, 0.0
        for b in range(T):
            blk = seq[b * m:(b + 1) * m]
            act = 1 if on_path else 0
            mu = FIG1_MU[act]
            prob *= math.prod(mu[x] for x in blk)
            cost += costs(act)
            k = sum(blk)
            score = (k * lr - (m - k) * lr) / m
            ok = score >= gamma - 1e-12
            passed_all &= ok
            on_path &= ok
        p_all += prob * passed_all
        pay += prob * ((sb.v_plus if passed_all else sb.v_minus) - cost / T)
    return pay, p_all


def run_all() -> list[OracleResult]:
    mt, prefs, costs = fig1()
    out = []
    p, q = FIG1_MU[1], FIG1_MU[0]
    out.append(_check("kl two-action direct sum", _kl_direct(q, p), monitoring.kl(q, p), 1e-12))
    out.append(_check("kl two-action frozen", 0.338919, monitoring.kl(q, p), 5e-7))
    out.append(_check("chernoff lambda grid", chernoff_lambda_grid(q, p), monitoring.chernoff(q, p), 1e-8))
    out.append(_check("chernoff nu grid", chernoff_nu_grid(q, p), monitoring.chernoff(q, p), 1e-6))
    out.append(_check("chernoff frozen", CHERNOFF_FIG1, monitoring.chernoff(q, p), 5e-5))
    a, b = (0.8, 0.2), (0.01, 0.99)
    ch = monitoring.chernoff(a, b)
    out.append(_check("chernoff skewed pair nu grid", chernoff_nu_grid(a, b), ch, 1e-5))
    out.append(_check("chernoff skewed pair below both KL", 1.0,
                      float(0 < ch < min(monitoring.kl(a, b), monitoring.kl(b, a))), 0))
    out.append(_check("theoretical rate baseline", KL_FIG1, monitoring.theoretical_rate(mt, costs), 1e-12))
    ll = CostFunction({0: 0.0, 1: 2.0}, 1)
    out.append(_check("theoretical rate limited liability", chernoff_lambda_grid(q, p),
                      monitoring.theoretical_rate(mt, ll, Regime.LIMITED_LIABILITY), 1e-8))
    out.append(_check("gaussian rate at x=0", 0.5, monitoring.gaussian_rate(1.0, 0.0, 1.0, -0.5), 1e-15))
    sd2 = score_dist.enumerate_types(mt, 2)
    out.append(_check("tail n=2 L>=0 under target", math.log(0.91),
                      score_dist.tail_prob(sd2, 1, score_dist.ThresholdRule({0: 0.0})), 1e-12))
    bt = contracts.build_binary_test(mt, prefs, costs, 1, {0: 0.0})
    out.append(_check("binary n=1 v_plus", 3.5, bt.v_plus, 1e-12))
    out.append(_check("binary n=1 v_minus", -1.5, bt.v_minus, 1e-12))
    sd1 = score_dist.enumerate_types(mt, 1)
    c1 = bt.to_contract(sd1)
    out.append(_check("binary n=1 IR slack", 0.0, contracts.check_ic_ir(c1, mt, costs, sd1).ir, 1e-12))
    out.append(_check("binary n=1 cost", COST_N1, contracts.implementation_cost(c1, sd1), 1e-10))
    out.append(_check("binary n=1 variance", 5.25, contracts.variance_and_jensen_gap(c1, sd1, 1)[0], 1e-12))
    ll_prefs = UtilitySpec("log", 1.0)
    btl = contracts.build_binary_test(mt, ll_prefs, costs, 1, {0: 0.0}, Regime.LIMITED_LIABILITY)
    out.append(_check("limited liability n=1 v_plus", 5.0, btl.v_plus, 1e-12))
    out.append(_check("limited liability n=1 v_minus", 0.0, btl.v_minus, 1e-15))
    out.append(_check("fraction 0.3 maps to -kl", -KL_FIG1, contracts.fraction_to_score_threshold(mt, 0.3), 1e-12))
    out.append(_check("fraction 0.7 maps to +kl", KL_FIG1, contracts.fraction_to_score_threshold(mt, 0.7), 1e-12))
    sb1 = second_best_n1_grid()
    out.append(_check("second best n=1 grid", sb1, solvers.solve_second_best(mt, prefs, costs, 1).cost, 1e-9))
    out.append(_check("utility linear n=1", sb1, solvers.solve_linear(mt, prefs, costs, 1).cost, 1e-9))
    out.append(_check("best binary n=1", sb1, solvers.best_binary(mt, prefs, costs, 1).cost, 1e-9))
    pay, p_all = block_product_payoff()
    ap = adjustable.AdjustableProblem(mt, prefs, costs, 2, {0: 0.0, 1: 3.0}, 8, allow_weak_first_best=True)
    sbq = adjustable.build_sequential_binary(ap, {0: 0.0})
    out.append(_check("adjustable T=2 n=8 agent payoff", 0.0, pay, 1e-9))
    out.append(_check("adjustable block product", p_all, math.exp(2 * sbq.log_p), 1e-12))
    return out


ORACLES: dict[str, Callable[[], list[OracleResult]]] = {"all": run_all}
