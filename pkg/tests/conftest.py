import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from contract_rates.monitoring import MonitoringTechnology
from contract_rates.preferences import CostFunction, UtilitySpec

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIG1 = {0: (0.7, 0.3), 1: (0.3, 0.7)}


@pytest.fixture(scope="session")
def fig1():
    mt = MonitoringTechnology.from_table(FIG1, 1, ("low", "high"))
    return mt, UtilitySpec("log", 0.1), CostFunction({0: 0.0, 1: 2.0}, 1)


@pytest.fixture(scope="session")
def fig1_ll():
    mt = MonitoringTechnology.from_table(FIG1, 1, ("low", "high"))
    return mt, UtilitySpec("log", 1.0), CostFunction({0: 0.0, 1: 2.0}, 1)


@pytest.fixture(scope="session")
def three_actions():
    """Three actions, ternary signals: one cheaper and one costlier deviation."""
    mt = MonitoringTechnology.from_table({0: (0.5, 0.3, 0.2), 1: (0.2, 0.3, 0.5), 2: (0.1, 0.3, 0.6)}, 1)
    return mt, UtilitySpec("log", 0.1), CostFunction({0: 0.0, 1: 1.0, 2: 3.0}, 1)


def dirichlet_pair(rng, k):
    """Two strictly positive probability vectors of length k."""
    p = rng.dirichlet(np.ones(k))
    q = rng.dirichlet(np.ones(k))
    p = 0.98 * p + 0.02 / k
    q = 0.98 * q + 0.02 / k
    return p / p.sum(), q / q.sum()


@st.composite
def prob_vectors(draw, k=None):
    k = k or draw(st.integers(2, 4))
    raw = draw(st.lists(st.floats(0.05, 1.0), min_size=k, max_size=k))
    v = np.asarray(raw)
    return v / v.sum()


@st.composite
def prob_pairs(draw):
    k = draw(st.integers(2, 4))
    return draw(prob_vectors(k)), draw(prob_vectors(k))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
