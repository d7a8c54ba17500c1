import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import gammaln, logsumexp

from contract_rates.monitoring import MonitoringTechnology, kl, score_mean, score_terms
from contract_rates.score_dist import (EnumerationCapExceeded, ThresholdRule, compositions, enumerate_types,
                                       mc_tail_prob, n_types, tail_prob)

KL_FIG1 = 0.4 * math.log(7 / 3)


def test_binary_support(fig1):
    mt, _, _ = fig1
    sd = enumerate_types(mt, 3)
    assert sd.n_types == 4
    assert {tuple(c) for c in sd.counts} == {(0, 3), (1, 2), (2, 1), (3, 0)}


def test_type_log_prob(fig1):
    mt, _, _ = fig1
    sd = enumerate_types(mt, 2)
    i = [tuple(c) for c in sd.counts].index((0, 2))
    assert sd.log_prob(1)[i] == pytest.approx(math.log(0.49), abs=1e-14)


def test_ternary_count():
    mt = MonitoringTechnology.from_table({0: (0.2, 0.3, 0.5), 1: (0.5, 0.3, 0.2)}, 1)
    assert enumerate_types(mt, 2).n_types == 6


@given(n=st.integers(1, 12), k=st.integers(2, 4))
def test_compositions_complete(n, k):
    c = compositions(n, k)
    assert len(c) == n_types(n, k)
    assert np.all(c.sum(axis=1) == n) and np.all(c >= 0)
    assert len({tuple(r) for r in c}) == len(c)


@pytest.mark.parametrize("n", [1, 5, 40, 400])
def test_invariants(three_actions, n):
    mt, _, _ = three_actions
    sd = enumerate_types(mt, n)
    mult = gammaln(n + 1) - gammaln(sd.counts + 1).sum(axis=1)
    assert np.allclose(sd.log_mult, mult, atol=1e-9)
    for d in mt.deviations:
        assert np.allclose(sd.score(d), sd.counts @ score_terms(mt, d) / n, atol=1e-12)
    for a in mt.actions:
        assert abs(logsumexp(sd.log_prob(a))) < 1e-9


def test_cap():
    mt = MonitoringTechnology.from_table({0: (0.2, 0.3, 0.5), 1: (0.5, 0.3, 0.2)}, 1)
    with pytest.raises(EnumerationCapExceeded, match="mc_tail_prob"):
        enumerate_types(mt, 100, cap=1000)


def test_tail_examples(fig1):
    mt, _, _ = fig1
    rule = ThresholdRule({0: 0.0})
    assert tail_prob(enumerate_types(mt, 1), 1, rule) == pytest.approx(math.log(0.7), abs=1e-14)
    assert tail_prob(enumerate_types(mt, 1), 0, rule) == pytest.approx(math.log(0.3), abs=1e-14)
    assert tail_prob(enumerate_types(mt, 2), 1, rule) == pytest.approx(math.log(0.91), abs=1e-12)
    assert tail_prob(enumerate_types(mt, 2), 1, rule.complement()) == pytest.approx(math.log(0.09), abs=1e-12)


def test_empty_event(fig1):
    mt, _, _ = fig1
    assert tail_prob(enumerate_types(mt, 3), 1, ThresholdRule({0: 10.0})) == -math.inf


@given(n=st.integers(1, 60), g=st.lists(st.floats(-1.0, 1.0), min_size=2, max_size=2))
def test_tail_monotone_in_threshold(fig1, n, g):
    mt, _, _ = fig1
    sd = enumerate_types(mt, n)
    lo, hi = sorted(g)
    for a in mt.actions:
        assert tail_prob(sd, a, ThresholdRule({0: hi})) <= tail_prob(sd, a, ThresholdRule({0: lo})) + 1e-15


def test_mc_trivial(fig1):
    mt, _, _ = fig1
    est = mc_tail_prob(mt, 5, 1, ThresholdRule({0: -100.0}), 1000, seed=1)
    assert est.estimate == 1.0 and est.stderr == 0.0


def test_mc_n1(fig1):
    mt, _, _ = fig1
    est = mc_tail_prob(mt, 1, 1, ThresholdRule({0: 0.0}), 1_000_000, seed=7)
    assert abs(est.estimate - 0.7) <= 4 * est.stderr


def test_mc_deterministic(fig1):
    mt, _, _ = fig1
    a = mc_tail_prob(mt, 9, 1, ThresholdRule({0: 0.1}), 5000, seed=3)
    b = mc_tail_prob(mt, 9, 1, ThresholdRule({0: 0.1}), 5000, seed=3)
    assert a == b


@pytest.mark.parametrize("seed", range(20))
def test_mc_agrees_with_enumeration(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 4))
    rows = {i: 0.9 * rng.dirichlet(np.ones(k)) + 0.1 / k for i in range(int(rng.integers(2, 4)))}
    mt = MonitoringTechnology.from_table({a: r / r.sum() for a, r in rows.items()}, 0)
    n = int(rng.integers(1, 15))
    sd = enumerate_types(mt, n)
    thr = {d: float(rng.uniform(sd.score(d).min(), sd.score(d).max())) for d in mt.deviations}
    rule = ThresholdRule(thr, negate=bool(rng.integers(0, 2)))
    a = mt.actions[int(rng.integers(0, len(mt.actions)))]
    exact = math.exp(tail_prob(sd, a, rule))
    est = mc_tail_prob(mt, n, a, rule, 20000, seed=seed)
    se = max(est.stderr, math.sqrt(exact * (1 - exact) / est.samples))
    assert abs(est.estimate - exact) <= 4 * se + 1e-12


def test_sanov_false_negative_exponent(fig1):
    """-(1/n) log P_1[L < gamma] with gamma just above E_0[L] approaches KL(mu_0, mu_1)."""
    mt, _, _ = fig1
    e0, e1 = score_mean(mt, 0, 0), score_mean(mt, 1, 0)
    target = kl(mt.mu(0), mt.mu(1))
    expo = []
    for n in (50, 100, 200, 400):
        gamma = e0 + 0.05 * n ** (-1 / 3) * (e1 - e0)
        expo.append(-tail_prob(enumerate_types(mt, n), 1, ThresholdRule({0: gamma}, negate=True)) / n)
    assert abs(expo[-1] - target) <= 0.15 * target
    dist = np.abs(np.array(expo) - target)
    assert np.all(np.diff(dist) < 0)
