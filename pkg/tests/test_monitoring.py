import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from conftest import prob_pairs
from contract_rates.monitoring import (MonitoringTechnology, chernoff, chernoff_lambda, cramer_rate,
                                       gaussian_rate, kl, rank_monitoring, score_mean, score_terms,
                                       theoretical_rate)
from contract_rates.preferences import CostFunction, ModelError

KL_FIG1 = 0.4 * math.log(7 / 3)


def ex1():
    a = MonitoringTechnology.from_table({0: (0.8, 0.2), 1: (0.01, 0.99)}, 1)
    b = MonitoringTechnology.from_table({0: (0.99, 0.01), 1: (0.2, 0.8)}, 1)
    return a, b


# -- technology ---------------------------------------------------------------

@pytest.mark.parametrize("table", [
    {0: (0.5, 0.5), 1: (0.5, 0.5)},          # not identified
    {0: (1.0, 0.0), 1: (0.3, 0.7)},          # zero entry
    {0: (0.6, 0.5), 1: (0.3, 0.7)},          # does not sum to one
    {0: (1.0,), 1: (1.0,)},                  # single signal
])
def test_technology_rejects(table):
    with pytest.raises(ModelError):
        MonitoringTechnology.from_table(table, 1)


# -- kl -----------------------------------------------------------------------

def test_kl_examples():
    assert kl((0.8, 0.2), (0.01, 0.99)) == pytest.approx(3.19, abs=0.005)
    assert kl((0.3, 0.7), (0.3, 0.7)) == 0.0
    assert kl((0.7, 0.3), (0.3, 0.7)) == pytest.approx(KL_FIG1, rel=1e-14)


def test_kl_zero_convention_and_support():
    assert kl((0.0, 1.0), (0.5, 0.5)) == pytest.approx(math.log(2))
    with pytest.raises(ModelError):
        kl((0.5, 0.5), (1.0, 0.0))
    with pytest.raises(ValueError):
        kl((0.5, 0.5), (0.2, 0.3, 0.5))


@given(prob_pairs())
def test_kl_nonnegative_zero_iff_equal(pq):
    p, q = pq
    assert kl(p, q) >= 0
    assert kl(p, p) == 0
    if np.max(np.abs(p - q)) > 1e-6:
        assert kl(p, q) > 0


def test_kl_asymmetry_witnessed():
    assert abs(kl((0.8, 0.2), (0.01, 0.99)) - kl((0.01, 0.99), (0.8, 0.2))) > 0.1


# -- chernoff -----------------------------------------------------------------

def test_chernoff_examples():
    assert chernoff((0.3, 0.7), (0.3, 0.7)) == 0.0
    val, lam = chernoff_lambda((0.7, 0.3), (0.3, 0.7))
    assert val == pytest.approx(-math.log(2 * math.sqrt(0.21)), abs=1e-12)
    assert lam == pytest.approx(0.5, abs=1e-8)
    ch = chernoff((0.8, 0.2), (0.01, 0.99))
    assert 0 < ch < min(kl((0.8, 0.2), (0.01, 0.99)), kl((0.01, 0.99), (0.8, 0.2)))


@given(prob_pairs())
def test_chernoff_symmetric_and_below_kl(pq):
    p, q = pq
    assert chernoff(p, q) == pytest.approx(chernoff(q, p), abs=1e-9)
    assert chernoff(p, q) <= min(kl(p, q), kl(q, p)) + 1e-12


@given(prob_pairs())
def test_chernoff_equals_kl_midpoint_form(pq):
    """min over nu of max(KL(nu,p), KL(nu,q)) is attained on the geometric path."""
    p, q = pq
    assume(np.max(np.abs(p - q)) > 1e-3)
    ch, lam = chernoff_lambda(p, q)
    nu = p**lam * q ** (1 - lam)
    nu /= nu.sum()
    assert kl(nu, p) == pytest.approx(ch, abs=1e-7)
    assert kl(nu, q) == pytest.approx(ch, abs=1e-7)


# -- scores -------------------------------------------------------------------

def test_score_terms_figure1(fig1):
    mt, _, _ = fig1
    assert np.allclose(score_terms(mt, 0), [math.log(3 / 7), math.log(7 / 3)], rtol=1e-15)
    with pytest.raises(ModelError):
        score_terms(mt, 1)


def test_score_mean_identities():
    mt, _ = ex1()
    assert score_mean(mt, 0, 0) == pytest.approx(-kl(mt.mu(0), mt.mu(1)), abs=1e-12)
    assert score_mean(mt, 0, 0) == pytest.approx(-3.19, abs=0.005)
    assert score_mean(mt, 1, 0) == pytest.approx(kl(mt.mu(1), mt.mu(0)), abs=1e-12)


# -- Cramér rate ---------------------------------------------------------------

def test_cramer_figure1(fig1):
    mt, _, _ = fig1
    rf = cramer_rate(mt, 1, 0)
    assert rf(rf.mean) == pytest.approx(0.0, abs=1e-12)
    assert rf(score_mean(mt, 0, 0)) == pytest.approx(KL_FIG1, abs=1e-9)
    assert rf(0.0) == pytest.approx(chernoff(mt.mu(0), mt.mu(1)), abs=1e-9)
    assert rf(rf.hi + 1.0) == math.inf and rf(rf.lo - 1.0) == math.inf
    assert rf(rf.hi) == pytest.approx(-math.log(0.7), abs=1e-12)


def _random_tech(rng, k, n_actions=2):
    probs = [0.98 * rng.dirichlet(np.ones(k)) + 0.02 / k for _ in range(n_actions)]
    return MonitoringTechnology.from_table({i: p / p.sum() for i, p in enumerate(probs)}, n_actions - 1)


@pytest.mark.parametrize("seed", range(25))
def test_cramer_properties_random(seed):
    rng = np.random.default_rng(seed)
    mt = _random_tech(rng, int(rng.integers(2, 5)))
    a, star = 0, mt.target
    for chosen in (a, star):
        rf = cramer_rate(mt, chosen, a)
        grid = np.linspace(rf.lo, rf.hi, 50)
        vals = rf(grid)
        assert np.all(vals >= 0)
        assert rf(rf.mean) == pytest.approx(0.0, abs=1e-9)
        mid = rf(0.5 * (grid[:-2] + grid[2:]))
        assert np.all(mid <= 0.5 * (vals[:-2] + vals[2:]) + 1e-9)
    rf = cramer_rate(mt, star, a)
    assert rf(score_mean(mt, a, a)) == pytest.approx(kl(mt.mu(a), mt.mu(star)), abs=1e-6)
    if rf.lo < 0 < rf.hi:
        assert rf(0.0) == pytest.approx(chernoff(mt.mu(a), mt.mu(star)), abs=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_tilt_identity_binary(seed):
    """On a binary alphabet I_{a*,a}(l) - I_{a,a}(l) = -l."""
    rng = np.random.default_rng(100 + seed)
    mt = _random_tech(rng, 2)
    i_star, i_dev = cramer_rate(mt, 1, 0), cramer_rate(mt, 0, 0)
    grid = np.linspace(i_star.lo, i_star.hi, 41)[1:-1]
    assert np.allclose(i_star(grid) - i_dev(grid), -grid, atol=1e-6)


# -- theoretical rates and ranking -----------------------------------------------

def test_theoretical_rates(fig1):
    mt, _, costs = fig1
    assert theoretical_rate(mt, costs) == pytest.approx(KL_FIG1, rel=1e-14)
    assert theoretical_rate(mt, costs, "limited_liability") == pytest.approx(0.0871767, abs=1e-6)


def test_theoretical_rate_min_over_cheaper():
    mt = MonitoringTechnology.from_table({0: (0.6, 0.4), 1: (0.3, 0.7), 2: (0.45, 0.55)}, 1)
    costs = CostFunction({0: 0.0, 1: 2.0, 2: 1.0}, 1)
    k0, k2 = kl(mt.mu(0), mt.mu(1)), kl(mt.mu(2), mt.mu(1))
    assert theoretical_rate(mt, costs) == pytest.approx(min(k0, k2), rel=1e-14)
    ll = theoretical_rate(mt, costs, "limited_liability")
    assert ll == pytest.approx(min(chernoff(mt.mu(0), mt.mu(1)), k2), rel=1e-12)


def test_limited_liability_needs_unique_cheapest():
    mt = MonitoringTechnology.from_table({0: (0.6, 0.4), 1: (0.3, 0.7), 2: (0.45, 0.55)}, 1)
    with pytest.raises(ModelError):
        theoretical_rate(mt, CostFunction({0: 0.0, 1: 2.0, 2: 0.0}, 1), "limited_liability")


def test_ranking_example1():
    a, b = ex1()
    r = rank_monitoring(a, b, (0,))
    assert r.preferred == "first"
    assert r.index_first == pytest.approx(3.19, abs=0.005) and r.index_second == pytest.approx(1.54, abs=0.005)
    assert str(r) == "mu > mu', indices 3.19 vs 1.54"
    s = rank_monitoring(b, a, (0,))
    assert s.preferred == "second" and s.index_first == r.index_second
    assert rank_monitoring(a, a, (0,)).preferred == "tie"


# -- Gaussian closed form ----------------------------------------------------------

def test_gaussian_rate():
    assert gaussian_rate(1.0, 0.0, 1.0, -0.5) == pytest.approx(0.5)
    ell_at_a = ((0.3 - 0.0) ** 2 - (0.3 - 1.0) ** 2) / 2
    assert gaussian_rate(0.3, 0.0, 1.0, ell_at_a) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ModelError):
        gaussian_rate(0.0, 1.0, 1.0, 0.0)


@given(a=st.floats(-3, 3), dev=st.floats(-3, 3), star=st.floats(-3, 3), ell=st.floats(-3, 3),
       shift=st.floats(-5, 5))
def test_gaussian_translation_invariant(a, dev, star, ell, shift):
    assume(abs(dev - star) > 0.1)
    base = gaussian_rate(a, dev, star, ell)
    assert gaussian_rate(a + shift, dev + shift, star + shift, ell) == pytest.approx(base, rel=1e-9, abs=1e-9)
    assert base >= 0

