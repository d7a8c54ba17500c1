import csv
import math

import numpy as np
import pytest

from contract_rates.contracts import (Contract, InfeasibleContract, LinearSchedule, ThresholdOutsideBand,
                                      UtilityLinearSchedule, UtilityOutOfRange, build_binary_test,
                                      check_ic_ir, dump_contract_csv, false_rates,
                                      fraction_to_score_threshold, gap_to_first_best, implementation_cost,
                                      jensen_lower_bound_factor, lenient_threshold_sequence,
                                      lenient_thresholds, linear_cost, variance_and_jensen_gap)
from contract_rates.monitoring import MonitoringTechnology, kl, score_mean
from contract_rates.preferences import CostFunction, ModelError, UtilitySpec, first_best_cost
from contract_rates.score_dist import enumerate_types

KL_FIG1 = 0.4 * math.log(7 / 3)
E2 = math.exp(2)


def binary(fig, n, gamma, regime="baseline"):
    mt, prefs, costs = fig
    sd = enumerate_types(mt, n)
    bt = build_binary_test(mt, prefs, costs, n, {0: gamma}, regime, sd=sd)
    return bt, bt.to_contract(sd), sd


def test_binary_n1(fig1):
    bt, c, sd = binary(fig1, 1, 0.0)
    assert (bt.v_plus, bt.v_minus) == (pytest.approx(3.5, abs=1e-14), pytest.approx(-1.5, abs=1e-14))
    sl = check_ic_ir(c, fig1[0], fig1[2], sd)
    assert sl.ir == pytest.approx(0.0, abs=1e-12) and sl.min_ic == pytest.approx(0.0, abs=1e-12)
    assert implementation_cost(c, sd) == pytest.approx(0.7 * math.exp(3.5) + 0.3 * math.exp(-1.5), rel=1e-14)
    assert implementation_cost(c, sd) == pytest.approx(23.24, abs=0.01)


def test_binary_limited_liability_n1(fig1_ll):
    bt, c, sd = binary(fig1_ll, 1, 0.0, "limited_liability")
    assert bt.v_minus == 0.0 and bt.v_plus == pytest.approx(5.0, abs=1e-14)
    sl = check_ic_ir(c, fig1_ll[0], fig1_ll[2], sd)
    assert sl.ic[0] == pytest.approx(0.0, abs=1e-9)
    assert sl.ir >= -1e-12
    assert sd.expect(0, c.utilities) - 0.0 >= 0.0


def test_binary_converges_to_costs(fig1):
    bt, _, _ = binary(fig1, 400, 0.0)
    assert bt.v_plus == pytest.approx(2.0, abs=1e-6) and bt.v_minus == pytest.approx(0.0, abs=1e-6)


def test_binary_limited_liability_ir_slack(fig1_ll):
    mt, prefs, costs = fig1_ll
    bt, c, sd = binary(fig1_ll, 60, 0.0, "limited_liability")
    sl = check_ic_ir(c, mt, costs, sd)
    assert sl.ic[0] == pytest.approx(0.0, abs=1e-9)
    assert sl.ir >= prefs.u_floor - costs(0) - 1e-12


def test_binary_errors(fig1):
    mt, prefs, costs = fig1
    with pytest.raises(ThresholdOutsideBand, match="does not exceed"):
        build_binary_test(mt, prefs, costs, 3, {0: 5.0})
    with pytest.raises(UtilityOutOfRange, match="too small for this threshold"):
        build_binary_test(mt, UtilitySpec("log", 0.5), costs, 1, {0: 0.0})
    with pytest.raises(ValueError):
        build_binary_test(mt, prefs, costs, 3, {})


def test_binary_rechecks_costlier_actions():
    mt = MonitoringTechnology.from_table({0: (0.8, 0.2), 1: (0.4, 0.6), 2: (0.1, 0.9)}, 1)
    costs = CostFunction({0: 0.0, 1: 1.0, 2: 1.5}, 1)
    with pytest.raises(InfeasibleContract, match="contract infeasible at this n"):
        build_binary_test(mt, UtilitySpec("log", 0.01), costs, 1, {0: 0.0})


def test_three_action_binary_binds_worst_deviation(three_actions):
    mt, prefs, costs = three_actions
    n = 30
    sd = enumerate_types(mt, n)
    bt = build_binary_test(mt, prefs, costs, n, lenient_thresholds(mt, costs, 0.2, n), sd=sd)
    sl = check_ic_ir(bt.to_contract(sd), mt, costs, sd)
    assert sl.ir == pytest.approx(0.0, abs=1e-12)
    assert sl.ic[0] == pytest.approx(0.0, abs=1e-9)
    assert sl.ic[2] >= 0


def test_constant_contract(fig1):
    mt, prefs, costs = fig1
    sd = enumerate_types(mt, 7)
    c = Contract(7, np.full(sd.n_types, 2.0), prefs)
    sl = check_ic_ir(c, mt, costs, sd)
    assert sl.ir == pytest.approx(0.0, abs=1e-12) and sl.ic[0] == pytest.approx(-2.0, abs=1e-12)
    assert implementation_cost(c, sd) == pytest.approx(E2, rel=1e-14)
    var, gap = variance_and_jensen_gap(c, sd, 1)
    assert var == pytest.approx(0.0, abs=1e-24) and gap == pytest.approx(0.0, abs=1e-24)


def test_contract_range_checked(fig1):
    _, prefs, _ = fig1
    with pytest.raises(UtilityOutOfRange):
        Contract(1, np.array([-5.0, 1.0]), prefs)


def test_variance_and_jensen(fig1):
    _, c, sd = binary(fig1, 1, 0.0)
    var, gap = variance_and_jensen_gap(c, sd, 1)
    assert var == pytest.approx(5.25, rel=1e-14)
    assert gap == pytest.approx(implementation_cost(c, sd) - E2, rel=1e-12)
    assert gap >= jensen_lower_bound_factor(c) * var


def test_jensen_taylor_near_constant(fig1):
    mt, prefs, _ = fig1
    sd = enumerate_types(mt, 5)
    v = 2.0 + 1e-3 * np.linspace(-1, 1, sd.n_types)
    var, gap = variance_and_jensen_gap(Contract(5, v, prefs, 2.0, v - 2.0), sd, 1)
    mean = sd.expect(1, v)
    assert gap / var == pytest.approx(float(prefs.h_second(mean)) / 2, rel=0.1)


def test_cost_at_least_first_best(fig1):
    mt, prefs, costs = fig1
    for n in (1, 5, 20, 80):
        _, c, sd = binary(fig1, n, 0.0)
        assert implementation_cost(c, sd) >= first_best_cost(prefs, costs)
        assert gap_to_first_best(c, sd, costs) > 0


def test_gap_matches_cost_difference(fig1):
    mt, prefs, costs = fig1
    for n in (3, 10, 30):
        _, c, sd = binary(fig1, n, 0.0)
        assert gap_to_first_best(c, sd, costs) == pytest.approx(implementation_cost(c, sd) - E2, rel=1e-9,
                                                                abs=1e-12)


def test_fraction_thresholds(fig1):
    mt, _, _ = fig1
    assert fraction_to_score_threshold(mt, 0.5) == pytest.approx(0.0, abs=1e-15)
    assert fraction_to_score_threshold(mt, 0.3) == pytest.approx(-KL_FIG1, abs=1e-12)
    assert fraction_to_score_threshold(mt, 0.7) == pytest.approx(KL_FIG1, abs=1e-12)
    tern = MonitoringTechnology.from_table({0: (0.2, 0.3, 0.5), 1: (0.5, 0.3, 0.2)}, 1)
    with pytest.raises(ModelError):
        fraction_to_score_threshold(tern, 0.5)


def test_lenient_sequence(fig1):
    mt, _, _ = fig1
    e0, e1 = score_mean(mt, 0, 0), score_mean(mt, 1, 0)
    assert lenient_threshold_sequence(mt, 0, 0.5, 8) == pytest.approx(e0 + 0.25 * (e1 - e0), abs=1e-14)
    assert lenient_threshold_sequence(mt, 0, 0.999999, 1) < e1
    assert lenient_threshold_sequence(mt, 0, 0.5, 10**12) == pytest.approx(e0, abs=1e-4)
    seq = [lenient_threshold_sequence(mt, 0, 0.3, n) for n in range(1, 200)]
    assert all(e0 < g < e1 for g in seq) and np.all(np.diff(seq) < 0)
    for eps in (0.0, 1.0):
        with pytest.raises(ValueError):
            lenient_threshold_sequence(mt, 0, eps, 5)


def test_lenient_gap_positive_and_decreasing(fig1):
    mt, prefs, costs = fig1
    gaps = []
    for n in range(10, 201, 10):
        sd = enumerate_types(mt, n)
        bt = build_binary_test(mt, prefs, costs, n, lenient_thresholds(mt, costs, 0.05, n), sd=sd)
        gaps.append(gap_to_first_best(bt.to_contract(sd), sd, costs))
    assert all(g > 0 for g in gaps)
    assert np.all(np.diff(gaps[5:]) < 0)


def test_premium_and_false_negative_share_rate(fig1):
    mt, prefs, costs = fig1
    ratios = []
    for n in (50, 100, 200, 400):
        bt, _, _ = binary(fig1, n, lenient_threshold_sequence(mt, 0, 0.05, n))
        ratios.append(math.log(bt.d_plus) / bt.log_fail_target)
    assert abs(ratios[-1] - 1) < 0.05
    assert np.all(np.diff(np.abs(np.array(ratios) - 1)) < 0)


def test_false_rates(fig1):
    mt, _, _ = fig1
    bt, _, sd = binary(fig1, 1, 0.0)
    fr = false_rates(bt, sd)
    assert fr.false_negative == pytest.approx(math.log(0.3)) and fr.false_positive[0] == pytest.approx(math.log(0.3))
    fr = false_rates({0: -10.0}, sd)
    assert fr.false_negative == -math.inf and fr.false_positive[0] == 0.0


def test_false_negative_slope_toward_kl(fig1):
    mt, _, _ = fig1
    target = kl(mt.mu(0), mt.mu(1))
    fn = []
    ns = (100, 200, 300, 400)
    for n in ns:
        sd = enumerate_types(mt, n)
        fn.append(false_rates({0: lenient_threshold_sequence(mt, 0, 0.05, n)}, sd).false_negative)
    slopes = -np.diff(fn) / np.diff(ns)
    assert abs(slopes[-1] - target) < 0.15 * target


def test_pass_probability_monotone_in_threshold(fig1):
    mt, _, _ = fig1
    sd = enumerate_types(mt, 40)
    prev = None
    for g in np.linspace(-0.8, 0.8, 33):
        fr = false_rates({0: float(g)}, sd)
        cur = (math.exp(fr.false_negative), fr.false_positive[0])
        if prev is not None:
            assert cur[0] >= prev[0] - 1e-15 and cur[1] <= prev[1] + 1e-15
        prev = cur


def test_linear_constant_schedule(fig1):
    mt, prefs, costs = fig1
    ev = [linear_cost(LinearSchedule(np.full(2, E2)), mt, prefs, costs, enumerate_types(mt, n)) for n in (1, 9)]
    for e in ev:
        assert e.cost == pytest.approx(E2, rel=1e-15)
        assert e.ic_slack[0] < 0 and not e.feasible
    b = np.array([0.5, 12.0])
    costs_n = [linear_cost(LinearSchedule(b), mt, prefs, costs, enumerate_types(mt, n)).cost for n in (1, 4, 25)]
    assert np.ptp(costs_n) == 0.0


def test_utility_linear_n1_matches_binary(fig1):
    mt, prefs, costs = fig1
    # bind IC (beta_1 - beta_0 = 5) and IR (0.3 beta_0 + 0.7 beta_1 = 2)
    beta = np.linalg.solve([[-1.0, 1.0], [0.3, 0.7]], [5.0, 2.0])
    sd = enumerate_types(mt, 1)
    c = UtilityLinearSchedule(beta).to_contract(sd, prefs)
    assert implementation_cost(c, sd) == pytest.approx(0.7 * math.exp(3.5) + 0.3 * math.exp(-1.5), rel=1e-14)


def test_dump_contract_csv(fig1, tmp_path):
    _, c, sd = binary(fig1, 3, 0.0)
    path = tmp_path / "c.csv"
    dump_contract_csv(c, sd, path)
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == 4
    assert set(rows[0]) == {"count_low", "count_high", "score_0", "utility", "wage", "prob_target_log"}
    assert sum(math.exp(float(r["prob_target_log"])) for r in rows) == pytest.approx(1.0)
