"""Repeated action choice: T blocks of n/T signals, one action per block.

The sequential binary contract pays ``v_plus`` iff every block passes its test.
The recommended strategy plays the target while all past blocks passed and the
cheapest action afterwards. Everything here is exact given per-block pass
probabilities because blocks are independent conditional on the actions.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Mapping, Sequence

from .contracts import ThresholdOutsideBand, UtilityOutOfRange, lenient_thresholds
from .monitoring import MonitoringTechnology, kl_index
from .preferences import CostFunction, ModelError, UtilitySpec
from .rates import RateReport, fit_exponential_rate
from .score_dist import ThresholdRule, enumerate_types, log_prob_of_mask

Action = Hashable
log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AdjustableProblem:
    mt: MonitoringTechnology
    prefs: UtilitySpec
    costs: CostFunction
    T: int
    g: Mapping[Action, float]
    n: int
    allow_weak_first_best: bool = False

    def __post_init__(self):
        if self.T < 1:
            raise ModelError("T must be at least 1")
        if self.n % self.T:
            raise ModelError(f"n={self.n} is not divisible by T={self.T}")
        if set(self.g) != set(self.mt.actions):
            raise ModelError("principal payoff must be given for every action")
        object.__setattr__(self, "g", dict(self.g))
        ok, witness = self.first_best_check()
        if not ok and not self.allow_weak_first_best:
            raise ModelError(f"constant target profile is not strictly first-best optimal: {witness}")

    @property
    def block(self) -> int:
        return self.n // self.T

    @property
    def target(self):
        return self.mt.target

    @property
    def cheapest(self):
        # ties resolve toward the first-listed cheapest action
        cands = self.costs.cheapest
        if len(cands) > 1:
            log.info("cheapest action tie %s resolved to %r", cands, cands[0])
        return cands[0]

    def first_best_value(self) -> float:
        return self.g[self.target] - float(self.prefs.h(self.costs.target_cost))

    def first_best_check(self) -> tuple[bool, str]:
        """Target profile beats every profile that swaps one period to another action."""
        T, star = self.T, self.target
        base = self.first_best_value()
        for a in self.mt.actions:
            if a == star:
                continue
            cost = ((T - 1) * self.costs.target_cost + self.costs(a)) / T
            if not self.prefs.u_floor <= cost < self.prefs.sup_u:
                continue
            val = ((T - 1) * self.g[star] + self.g[a]) / T - float(self.prefs.h(cost))
            if not base > val:
                return False, f"swapping one period to {a!r} gives {val:.6g} >= {base:.6g}"
        return True, ""


@dataclass(frozen=True, eq=False)
class SequentialBinary:
    thresholds: Mapping[Action, float]
    v_plus: float
    v_minus: float
    d_plus: float                    # offsets from c(a*), exact
    d_minus: float
    mean_offset: float               # E[v] - c(a*) on path, equals beta* - c(a*)
    log_pass: Mapping[Action, float]  # per-block log pass probability
    log_fail_target: float
    beta_star: float
    beta: float
    beta_action: Action
    p_bar_action: Action
    cheapest: Action
    target: Action

    @property
    def log_p(self) -> float:
        """log of the target's per-block pass probability, accurate when it is near 1."""
        return math.log1p(-math.exp(self.log_fail_target)) if self.log_fail_target < -0.5 \
            else self.log_pass[self.target]

    def q(self, k: int | float) -> float:
        """1 - p^k without cancellation."""
        return -math.expm1(k * self.log_p)


def build_sequential_binary(ap: AdjustableProblem, thresholds: Mapping[Action, float]) -> SequentialBinary:
    mt, costs, T = ap.mt, ap.costs, ap.T
    cheaper = costs.cheaper
    if set(thresholds) != set(cheaper):
        raise ValueError(f"need one threshold per cheaper action {cheaper}")
    sd = enumerate_types(mt, ap.block)
    mask = ThresholdRule(dict(thresholds)).mask(sd)
    lp = {a: log_prob_of_mask(sd, a, mask) for a in mt.actions}
    lf = log_prob_of_mask(sd, mt.target, ~mask)
    star, abar = mt.target, ap.cheapest
    c_star, c_bar = costs.target_cost, costs(abar)
    D = c_star - c_bar
    log_p = math.log1p(-math.exp(lf)) if lf < -0.5 else lp[star]

    def q(k):
        return -math.expm1(k * log_p)

    p = math.exp(log_p)
    p_bar_action = max(cheaper, key=lambda a: (lp[a], -costs(a)))
    p_bar = math.exp(lp[p_bar_action])
    if not p > p_bar:
        raise ThresholdOutsideBand(f"block length {ap.block}: pass probability {p:.6g} does not exceed "
                                   f"{p_bar:.6g} of {p_bar_action!r}")
    # beta* - c*, beta(a) - c*, kept as offsets
    e_star = -(D / T) * math.fsum(q(t - 1) for t in range(1, T + 1))

    def e_dev(a):
        pa = math.exp(lp[a])
        rest = math.fsum(-math.expm1(lp[a] + (k - 2) * log_p) if pa < 1 else 0.0 for k in range(2, T + 1))
        return ((costs(a) - c_star) - D * rest) / T

    e_by = {a: e_dev(a) for a in cheaper}
    beta_action = min(cheaper, key=lambda a: (e_by[a], costs(a)))
    e_min = e_by[beta_action]
    tied = [a for a in cheaper if abs(e_by[a] - e_min) <= 1e-15 * max(1.0, abs(e_min))]
    if len(tied) > 1:
        log.info("deviation tie %s in the incentive bound resolved to lowest cost %r", tied, beta_action)
    spread = (e_star - e_min) / (math.exp((T - 1) * log_p) * (p - p_bar))
    d_minus = e_star - math.exp(T * log_p) * spread
    d_plus = e_star + q(T) * spread
    v_plus, v_minus = c_star + d_plus, c_star + d_minus
    prefs = ap.prefs
    if not (v_minus >= prefs.u_floor and v_plus < prefs.sup_u):
        raise UtilityOutOfRange(f"n={ap.n} too small for this threshold: payments ({v_minus:.6g}, {v_plus:.6g})")
    sb = SequentialBinary(dict(thresholds), v_plus, v_minus, d_plus, d_minus, e_star, lp, lf,
                          c_star + e_star, c_star + e_min, beta_action, p_bar_action, abar, star)
    return sb


def _continuation(sb: SequentialBinary, ap: AdjustableProblem, t: int, first: Action | None) -> float:
    """Agent's payoff from period t on, given all earlier blocks passed.

    ``first`` is the action played at t (None = follow the recommendation);
    the recommendation is followed afterwards. Sunk costs of earlier periods are excluded.
    """
    T, costs = ap.T, ap.costs
    star, abar = ap.target, sb.cheapest
    c_star, c_bar = costs.target_cost, costs(abar)
    log_p = sb.log_p
    a0 = star if first is None else first
    l0 = sb.log_pass[a0] if a0 != star else log_p
    cost = costs(a0)
    for k in range(1, T - t + 1):
        # still on path at t + k iff block t and the k - 1 following blocks passed
        on = math.exp(l0 + (k - 1) * log_p)
        cost += on * c_star + (1 - on) * c_bar
    p_all = math.exp(l0 + (T - t) * log_p)
    return p_all * sb.v_plus + (1 - p_all) * sb.v_minus - cost / T


@dataclass
class DeviationGain:
    t: int
    history: str          # "on_path" or "after_failure"
    action: Action
    gain: float


def one_shot_deviation_gains(sb: SequentialBinary, ap: AdjustableProblem) -> list[DeviationGain]:
    """Gain of every one-shot deviation at every period, on path and after a failure."""
    out = []
    for t in range(1, ap.T + 1):
        on = _continuation(sb, ap, t, None)
        for a in ap.mt.actions:
            if a == ap.target:
                continue
            out.append(DeviationGain(t, "on_path", a, _continuation(sb, ap, t, a) - on))
        # after a failure the payment is v_minus whatever happens, so only costs differ
        for a in ap.mt.actions:
            if a == sb.cheapest:
                continue
            out.append(DeviationGain(t, "after_failure", a, -(ap.costs(a) - ap.costs(sb.cheapest)) / ap.T))
    return out


def agent_payoff(sb: SequentialBinary, ap: AdjustableProblem) -> float:
    """On-path expected utility minus expected average cost, in offsets (0 when IR binds)."""
    T = ap.T
    q_T = sb.q(T)
    ev = (1 - q_T) * sb.d_plus + q_T * sb.d_minus
    return ev - (sb.beta_star - ap.costs.target_cost)


def principal_gap(sb: SequentialBinary, ap: AdjustableProblem) -> float:
    """First-best payoff minus the principal's on-path payoff, exact for tiny gaps."""
    T, prefs = ap.T, ap.prefs
    star, abar = ap.target, sb.cheapest
    c_star = ap.costs.target_cost
    lost = (ap.g[star] - ap.g[abar]) / T * math.fsum(sb.q(t - 1) for t in range(1, T + 1))
    q_T = sb.q(T)
    jensen = (1 - q_T) * float(prefs.bregman_offset(c_star, sb.d_plus)) + q_T * float(
        prefs.bregman_offset(c_star, sb.d_minus))
    return lost + jensen + float(prefs.h_prime(c_star)) * sb.mean_offset


def principal_payoff(sb: SequentialBinary, ap: AdjustableProblem) -> float:
    return ap.first_best_value() - principal_gap(sb, ap)


def dump_gains_csv(gains: Sequence[DeviationGain], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "history", "action", "deviation_gain"])
        for g in gains:
            wr.writerow([g.t, g.history, g.action, repr(g.gain)])


@dataclass
class AdjustableRun:
    report: RateReport
    max_gain: float
    max_ir_error: float
    payoff_bounded: bool
    skipped: list = field(default_factory=list)


def verify_theorem4(mt: MonitoringTechnology, prefs: UtilitySpec, costs: CostFunction, T: int,
                    g: Mapping[Action, float], n_grid: Sequence[int],
                    thresholds: Callable[[int], Mapping] | None = None, eps: float = 0.05,
                    tolerance: float = 0.15) -> AdjustableRun:
    """Gap of the sequential binary contract across n, fitted against (1/T) min KL.

    ``thresholds(block_length)`` defaults to the lenient sequence at the block length.
    """
    if thresholds is None:
        def thresholds(m):
            return lenient_thresholds(mt, costs, eps, m)
    ns, gaps, skipped = [], [], []
    max_gain, max_ir, bounded = -math.inf, 0.0, True
    for n in n_grid:
        if n % T:
            raise ModelError(f"grid point {n} not divisible by T={T}")
        ap = AdjustableProblem(mt, prefs, costs, T, g, n)
        try:
            sb = build_sequential_binary(ap, thresholds(ap.block))
        except (ThresholdOutsideBand, UtilityOutOfRange) as exc:
            skipped.append((n, str(exc)))
            continue
        gains = one_shot_deviation_gains(sb, ap)
        max_gain = max(max_gain, max(x.gain for x in gains))
        max_ir = max(max_ir, abs(agent_payoff(sb, ap)))
        gap = principal_gap(sb, ap)
        bounded &= gap >= -1e-12
        ns.append(n)
        gaps.append(gap)
    theo = kl_index(mt, costs.cheaper) / T
    rep = fit_exponential_rate(ns, gaps, None, theo, tolerance)
    rep.skipped = skipped
    return AdjustableRun(rep, max_gain, max_ir, bool(bounded), skipped)
