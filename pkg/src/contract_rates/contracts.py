"""Contracts as utility payments per type class, and the binary test construction.

Payments are stored together with an exact offset from a reference utility
(normally the first-best utility) so that exponentially small cost gaps can be
evaluated without cancellation.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Hashable, Mapping

import numpy as np

from .monitoring import MonitoringTechnology, score_mean, score_terms
from .preferences import (CostFunction, ModelError, Regime, UtilitySpec,
                          first_best_utility)
from .score_dist import (ScoreDistribution, ThresholdRule, enumerate_types,
                         log_prob_of_mask)

Action = Hashable

IC_TOL = 1e-9


class InfeasibleContract(ValueError):
    """The requested contract does not exist or violates IC/IR/box constraints."""


class ThresholdOutsideBand(InfeasibleContract):
    """Pass probabilities do not separate the target from the cheaper actions."""


class UtilityOutOfRange(InfeasibleContract):
    """Constructed utilities leave u([w_floor, inf)); n too small for this threshold."""


@dataclass(frozen=True, eq=False)
class Contract:
    """Utility payment per type class of a ScoreDistribution.

    ``offsets`` equals ``utilities - ref`` but is carried separately because the
    payments can differ from ``ref`` by far less than one ulp of ``ref``.
    """

    n: int
    utilities: np.ndarray
    prefs: UtilitySpec
    ref: float = 0.0
    offsets: np.ndarray | None = None
    label: str = ""

    def __post_init__(self):
        v = np.asarray(self.utilities, dtype=float)
        object.__setattr__(self, "utilities", v)
        if self.offsets is None:
            object.__setattr__(self, "offsets", v - self.ref)
        lo, hi = self.prefs.u_floor, self.prefs.sup_u
        tol = 1e-12 * max(1.0, abs(lo))
        if np.any(v < lo - tol) or np.any(v >= hi):
            raise UtilityOutOfRange(f"payments must lie in [{lo:g}, {hi:g})")

    def wages(self) -> np.ndarray:
        return self.prefs.h(self.utilities)

    def mean_offset(self, sd: ScoreDistribution, a: Action) -> float:
        return math.fsum(sd.prob(a) * self.offsets)


@dataclass(frozen=True, eq=False)
class BinaryTest:
    """Two-payment contract: ``v_plus`` iff the pass rule holds, else ``v_minus``."""

    n: int
    thresholds: Mapping[Action, float] | None
    v_plus: float
    v_minus: float
    prefs: UtilitySpec
    regime: Regime
    target: Action
    cheaper: tuple
    log_pass: Mapping[Action, float]
    log_fail_target: float
    ref: float
    d_plus: float
    d_minus: float
    target_mean_offset: float
    pass_mask: np.ndarray | None = field(default=None, repr=False)

    def mask(self, sd: ScoreDistribution) -> np.ndarray:
        if self.pass_mask is not None:
            return self.pass_mask
        return ThresholdRule(self.thresholds).mask(sd)

    def to_contract(self, sd: ScoreDistribution) -> "BinaryContract":
        m = self.mask(sd)
        v = np.where(m, self.v_plus, self.v_minus)
        d = np.where(m, self.d_plus, self.d_minus)
        return BinaryContract(self.n, v, self.prefs, self.ref, d, "binary", test=self)

    @property
    def pass_prob_target(self) -> float:
        return math.exp(self.log_pass_target)

    @property
    def log_pass_target(self) -> float:
        return self.log_pass[self.target]


@dataclass(frozen=True, eq=False)
class BinaryContract(Contract):
    test: BinaryTest | None = None

    def mean_offset(self, sd: ScoreDistribution, a: Action) -> float:
        bt = self.test
        if bt is not None and a == bt.target and self.ref == bt.ref:
            return bt.target_mean_offset
        return super().mean_offset(sd, a)


def _pass_probs(sd: ScoreDistribution, mask: np.ndarray) -> tuple[dict, dict]:
    lp, lf = {}, {}
    for a in sd.mt.actions:
        lp[a] = log_prob_of_mask(sd, a, mask)
        lf[a] = log_prob_of_mask(sd, a, ~mask)
    return lp, lf


def build_binary_test(mt: MonitoringTechnology, prefs: UtilitySpec, costs: CostFunction, n: int,
                      thresholds: Mapping[Action, float] | None,
                      regime: Regime | str = Regime.BASELINE,
                      sd: ScoreDistribution | None = None,
                      pass_mask: np.ndarray | None = None) -> BinaryTest:
    """Binary test contract with IR and worst-case IC binding (baseline) or
    floor payment and IC binding against the cheapest action (limited liability).

    ``pass_mask`` replaces the threshold rule by an arbitrary pass set of type classes.
    """
    regime = Regime(regime)
    sd = sd if sd is not None else enumerate_types(mt, n)
    if sd.n != n:
        raise ValueError("score distribution built for a different n")
    target = mt.target
    cheaper = costs.cheaper
    if not cheaper:
        raise ModelError("no action cheaper than the target")
    if pass_mask is None:
        if thresholds is None or set(thresholds) != set(cheaper):
            raise ValueError(f"need one threshold per cheaper action {cheaper}")
        mask = ThresholdRule(dict(thresholds)).mask(sd)
    else:
        mask = np.asarray(pass_mask, dtype=bool)
    lp, lf = _pass_probs(sd, mask)
    p_star = math.exp(lp[target])
    q_star = math.exp(lf[target])
    c_star = costs.target_cost

    if regime is Regime.BASELINE:
        p_bar = max(math.exp(lp[a]) for a in cheaper)
        sep = p_star - p_bar
        if not sep > 0:
            raise ThresholdOutsideBand(
                f"n={n}: pass probability under target {p_star:.6g} does not exceed "
                f"max over cheaper actions {p_bar:.6g}")
        drop = c_star - min(costs(a) for a in cheaper)
        ref = c_star
        d_plus = q_star * drop / sep
        d_minus = -p_star * drop / sep
        mean_off = 0.0
    else:
        if len(costs.cheapest) != 1:
            raise ModelError(f"limited liability needs a unique cheapest action, got {costs.cheapest}")
        a_hat = costs.cheapest[0]
        p_hat = math.exp(lp[a_hat])
        p_bar = max(math.exp(lp[a]) for a in cheaper)
        sep = p_star - p_hat
        if not p_star - p_bar > 0:
            raise ThresholdOutsideBand(
                f"n={n}: pass probability under target {p_star:.6g} does not exceed "
                f"max over cheaper actions {p_bar:.6g}")
        drop = c_star - costs(a_hat)
        ref = first_best_utility(prefs, costs, regime)
        d_plus = drop * (q_star + p_hat) / sep
        d_minus = -drop
        mean_off = drop * p_hat / sep

    v_plus, v_minus = ref + d_plus, ref + d_minus
    if regime is Regime.LIMITED_LIABILITY:
        v_minus = prefs.u_floor
    lo, hi = prefs.u_floor, prefs.sup_u
    if v_minus < lo - 1e-12 * max(1.0, abs(lo)) or not v_plus < hi:
        raise UtilityOutOfRange(
            f"n={n} too small for this threshold: payments ({v_minus:.6g}, {v_plus:.6g}) "
            f"outside [{lo:.6g}, {hi:.6g})")

    bt = BinaryTest(n, None if thresholds is None else dict(thresholds), v_plus, v_minus, prefs,
                    regime, target, cheaper, lp, lf[target], ref, d_plus, d_minus, mean_off,
                    None if pass_mask is None else mask)

    spread = d_plus - d_minus
    for a in mt.actions:
        if a == target:
            continue
        slack = (p_star - math.exp(lp[a])) * spread - (c_star - costs(a))
        if slack < -IC_TOL:
            raise InfeasibleContract(f"n={n}: contract infeasible at this n, IC against {a!r} "
                                     f"violated by {-slack:.3g}")
    return bt


def fraction_to_score_threshold(mt: MonitoringTechnology, frac: float,
                                high: Hashable | None = None,
                                deviation: Action | None = None) -> float:
    """Score threshold equivalent to 'fraction of the high signal >= frac' (binary alphabets)."""
    if mt.n_signals != 2:
        raise ModelError("fraction thresholds need a binary signal alphabet")
    if deviation is None:
        if len(mt.deviations) != 1:
            raise ValueError("name the deviation when there are several")
        deviation = mt.deviations[0]
    terms = score_terms(mt, deviation)
    hi_idx = int(np.argmax(terms)) if high is None else mt.alphabet.index(high)
    return float(frac * terms[hi_idx] + (1 - frac) * terms[1 - hi_idx])


def lenient_threshold_sequence(mt: MonitoringTechnology, deviation: Action, eps: float, n: int) -> float:
    """Threshold approaching E_dev[L(dev)] from inside the band at rate n^(-1/3)."""
    if not 0 < eps < 1:
        raise ValueError("leniency must lie in (0, 1)")
    lo = score_mean(mt, deviation, deviation)
    hi = score_mean(mt, mt.target, deviation)
    return lo + eps * n ** (-1.0 / 3.0) * (hi - lo)


def lenient_thresholds(mt: MonitoringTechnology, costs: CostFunction, eps: float, n: int) -> dict:
    return {a: lenient_threshold_sequence(mt, a, eps, n) for a in costs.cheaper}


@dataclass
class ICIRSlack:
    ir: float
    ic: dict

    @property
    def min_ic(self) -> float:
        return min(self.ic.values())


def check_ic_ir(contract: Contract, mt: MonitoringTechnology, costs: CostFunction,
                sd: ScoreDistribution) -> ICIRSlack:
    """IR slack E*[v] - c(a*) and IC slack per action, in utility units."""
    if sd.n != contract.n:
        raise ValueError("contract and score distribution disagree on n")
    target = mt.target
    off_star = contract.mean_offset(sd, target)
    ir = (contract.ref - costs.target_cost) + off_star
    ic = {}
    for a in mt.actions:
        if a == target:
            continue
        diff = math.fsum((sd.prob(target) - sd.prob(a)) * contract.offsets)
        ic[a] = diff - (costs.target_cost - costs(a))
    return ICIRSlack(float(ir), ic)


def implementation_cost(contract: Contract, sd: ScoreDistribution) -> float:
    """Expected wage under the target action."""
    if np.any(contract.utilities >= contract.prefs.sup_u):
        raise UtilityOutOfRange("payment at or above sup u has no finite wage")
    w = contract.wages()
    if not np.all(np.isfinite(w)):
        raise UtilityOutOfRange("wage overflow")
    return math.fsum(sd.prob(sd.mt.target) * w)


def gap_to_first_best(contract: Contract, sd: ScoreDistribution, costs: CostFunction,
                      regime: Regime | str = Regime.BASELINE) -> float:
    """Implementation cost minus first-best cost, accurate far below machine epsilon of either."""
    prefs = contract.prefs
    v_fb = first_best_utility(prefs, costs, regime)
    target = sd.mt.target
    p = sd.prob(target)
    if contract.ref == v_fb:
        offsets = contract.offsets
        mean_off = contract.mean_offset(sd, target)
    else:
        offsets = contract.utilities - v_fb
        mean_off = math.fsum(p * offsets)
    breg = prefs.bregman_offset(v_fb, offsets)
    return math.fsum(p * breg) + float(prefs.h_prime(v_fb)) * mean_off


def variance_and_jensen_gap(contract: Contract, sd: ScoreDistribution, a: Action) -> tuple[float, float]:
    """(Var_a[v], E_a[h(v)] - h(E_a[v])), both exact over type classes."""
    p = sd.prob(a)
    m_off = math.fsum(p * contract.offsets)
    centred = contract.offsets - m_off
    var = math.fsum(p * centred**2)
    mean_v = contract.ref + m_off
    gap = math.fsum(p * contract.prefs.bregman_offset(mean_v, centred))
    return max(var, 0.0), max(gap, 0.0)


def jensen_lower_bound_factor(contract: Contract) -> float:
    """inf of h''/2 over the payment range; the Jensen gap is at least this times the variance."""
    lo, hi = contract.utilities.min(), contract.utilities.max()
    grid = np.linspace(lo, hi, 201)
    return float(contract.prefs.h_second(grid).min() / 2)


@dataclass
class FalseRates:
    false_negative: float
    false_positive: dict


def false_rates(test: BinaryTest | Mapping[Action, float], sd: ScoreDistribution) -> FalseRates:
    """Log-probabilities of failing under the target and passing under each cheaper action.

    ``test`` is a built BinaryTest or a bare threshold map (which need not separate the actions).
    """
    if isinstance(test, BinaryTest):
        mask, cheaper = test.mask(sd), test.cheaper
    else:
        mask, cheaper = ThresholdRule(dict(test)).mask(sd), tuple(test)
    target = sd.mt.target
    return FalseRates(log_prob_of_mask(sd, target, ~mask),
                      {a: log_prob_of_mask(sd, a, mask) for a in cheaper})


@dataclass(frozen=True, eq=False)
class LinearSchedule:
    """Wage-linear contract: wage = sum_x freq(x) b(x)."""

    b: np.ndarray

    def wages(self, sd: ScoreDistribution) -> np.ndarray:
        return sd.freqs() @ np.asarray(self.b, dtype=float)


@dataclass(frozen=True, eq=False)
class UtilityLinearSchedule:
    """Utility-linear contract: v = sum_x freq(x) beta(x)."""

    beta: np.ndarray

    def to_contract(self, sd: ScoreDistribution, prefs: UtilitySpec, ref: float = 0.0) -> Contract:
        beta = np.asarray(self.beta, dtype=float)
        v = sd.freqs() @ beta
        offsets = sd.freqs() @ (beta - ref)
        return Contract(sd.n, v, prefs, ref, offsets, "utility_linear")


@dataclass
class LinearEvaluation:
    cost: float
    ir_slack: float
    ic_slack: dict
    floor_ok: bool

    @property
    def feasible(self) -> bool:
        return self.floor_ok and self.ir_slack >= -IC_TOL and all(s >= -IC_TOL for s in self.ic_slack.values())


def linear_cost(ls: LinearSchedule, mt: MonitoringTechnology, prefs: UtilitySpec,
                costs: CostFunction, sd: ScoreDistribution) -> LinearEvaluation:
    b = np.asarray(ls.b, dtype=float)
    cost = float(np.dot(mt.mu(mt.target), b))
    w = ls.wages(sd)
    v = prefs.u(w)
    payoff = {a: sd.expect(a, v) - costs(a) for a in mt.actions}
    ir = payoff[mt.target]
    ic = {a: payoff[mt.target] - payoff[a] for a in mt.actions if a != mt.target}
    floor_ok = bool(np.all(b >= prefs.wage_floor - 1e-12))
    return LinearEvaluation(cost, ir, ic, floor_ok)


def dump_contract_csv(contract: Contract, sd: ScoreDistribution, path) -> None:
    mt = sd.mt
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([f"count_{x}" for x in mt.alphabet] + [f"score_{d}" for d in mt.deviations]
                    + ["utility", "wage", "prob_target_log"])
        wages = contract.wages()
        lp = sd.log_prob(mt.target)
        for i in range(sd.n_types):
            wr.writerow([int(c) for c in sd.counts[i]] + [repr(float(s)) for s in sd.scores[i]]
                        + [repr(float(contract.utilities[i])), repr(float(wages[i])), repr(float(lp[i]))])
