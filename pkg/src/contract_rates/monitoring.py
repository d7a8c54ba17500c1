"""Monitoring technologies and the divergences that govern convergence rates.

Covers KL divergence, Chernoff information, per-signal log-likelihood scores,
the Cramer rate function of the score, the theoretical exponents for both payoff
regimes, the KL-based ranking of technologies, and the Gaussian vanishing-noise
rate function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .preferences import CostFunction, ModelError, Regime

Action = Hashable

LAMBDA_BRACKET = 50.0
SLOPE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class MonitoringTechnology:
    """One strictly positive signal distribution per action over a finite alphabet."""

    actions: tuple
    alphabet: tuple
    probs: np.ndarray  # shape (len(actions), len(alphabet))
    target: Action

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        object.__setattr__(self, "actions", tuple(self.actions))
        object.__setattr__(self, "alphabet", tuple(self.alphabet))
        if probs.shape != (len(self.actions), len(self.alphabet)):
            raise ModelError(f"probability table shape {probs.shape} does not match "
                             f"{len(self.actions)} actions x {len(self.alphabet)} signals")
        if len(self.alphabet) < 2:
            raise ModelError("need at least two signals")
        if self.target not in self.actions:
            raise ModelError(f"target {self.target!r} is not an action")
        if len(set(self.actions)) != len(self.actions):
            raise ModelError("duplicate action labels")
        if np.any(probs <= 0):
            i, j = np.argwhere(probs <= 0)[0]
            raise ModelError(f"mu_{self.actions[i]}({self.alphabet[j]}) = {probs[i, j]} is not strictly positive")
        sums = probs.sum(axis=1)
        if np.any(np.abs(sums - 1) > 1e-12):
            i = int(np.argmax(np.abs(sums - 1)))
            raise ModelError(f"mu_{self.actions[i]} sums to {sums[i]!r}")
        for i in range(len(self.actions)):
            for j in range(i + 1, len(self.actions)):
                if np.max(np.abs(probs[i] - probs[j])) <= 1e-12:
                    raise ModelError(f"actions {self.actions[i]!r} and {self.actions[j]!r} are not identified")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "_logp", np.log(probs))

    @classmethod
    def from_table(cls, table: Mapping[Action, Sequence[float]], target: Action,
                   alphabet: Sequence | None = None) -> "MonitoringTechnology":
        actions = tuple(table)
        rows = [list(table[a]) for a in actions]
        if alphabet is None:
            alphabet = tuple(range(len(rows[0])))
        return cls(actions, tuple(alphabet), np.array(rows), target)

    def index(self, a: Action) -> int:
        try:
            return self.actions.index(a)
        except ValueError:
            raise ModelError(f"unknown action {a!r}") from None

    def mu(self, a: Action) -> np.ndarray:
        return self.probs[self.index(a)]

    def log_mu(self, a: Action) -> np.ndarray:
        return self._logp[self.index(a)]

    @property
    def deviations(self) -> tuple:
        return tuple(a for a in self.actions if a != self.target)

    @property
    def n_signals(self) -> int:
        return len(self.alphabet)


def _lse(x: np.ndarray) -> float:
    """log-sum-exp of a short 1-D vector (scipy's version carries heavy per-call overhead)."""
    m = float(np.max(x))
    return m + math.log(float(np.sum(np.exp(x - m))))


def _tilted_mean(logw: np.ndarray, values: np.ndarray) -> float:
    e = np.exp(logw - np.max(logw))
    return float(np.dot(e, values) / np.sum(e))


def _check_pair(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch {p.shape} vs {q.shape}")
    return p, q


def kl(p, q) -> float:
    """KL(p || q) with 0 log 0 = 0; raises when p is not absolutely continuous wrt q."""
    p, q = _check_pair(p, q)
    support = p > 0
    if np.any(q[support] <= 0):
        raise ModelError("KL divergence is infinite: p puts mass where q does not")
    ps, qs = p[support], q[support]
    return float(max(np.sum(ps * (np.log(ps) - np.log(qs))), 0.0))


def _bisect_increasing(fun: Callable[[float], float], lo: float, hi: float,
                       tol: float = SLOPE_TOL, maxiter: int = 400) -> float:
    """Root of an increasing function on [lo, hi], clamped to the bracket."""
    flo, fhi = fun(lo), fun(hi)
    if flo >= 0:
        return lo
    if fhi <= 0:
        return hi
    mid = 0.5 * (lo + hi)
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        fm = fun(mid)
        if abs(fm) < tol or hi - lo < 1e-15:
            break
        if fm > 0:
            hi = mid
        else:
            lo = mid
    return mid


def chernoff_lambda(p, q) -> tuple[float, float]:
    """Chernoff information and the minimising exponent lambda in [0, 1]."""
    p, q = _check_pair(p, q)
    if np.array_equal(p, q):
        return 0.0, 0.5
    if np.any(p <= 0) or np.any(q <= 0):
        support = (p > 0) & (q > 0)
        if not np.any(support):
            return math.inf, 0.5
    else:
        support = np.ones(p.shape, dtype=bool)
    lp, lq = np.log(p[support]), np.log(q[support])
    r = lp - lq

    def psi(lam):
        return _lse(lam * lp + (1 - lam) * lq)

    def dpsi(lam):
        return _tilted_mean(lam * lp + (1 - lam) * lq, r)

    lam = _bisect_increasing(dpsi, 0.0, 1.0)
    return max(-psi(lam), 0.0), lam


def chernoff(p, q) -> float:
    """Chernoff information ``-min_lambda log sum p^lambda q^(1-lambda)``."""
    return chernoff_lambda(p, q)[0]


def score_terms(mt: MonitoringTechnology, deviation: Action) -> np.ndarray:
    """Per-signal log-likelihood ratio log(mu_target / mu_deviation)."""
    if deviation == mt.target:
        raise ModelError("score against the target action itself is degenerate")
    return mt.log_mu(mt.target) - mt.log_mu(deviation)


def score_mean(mt: MonitoringTechnology, chosen: Action, deviation: Action) -> float:
    """E_chosen[score against deviation]."""
    return float(np.dot(mt.mu(chosen), score_terms(mt, deviation)))


@dataclass(frozen=True, eq=False)
class RateFunction:
    """Cramer rate function of the score against ``deviation`` under ``chosen``."""

    chosen: Action
    deviation: Action
    terms: np.ndarray
    log_weights: np.ndarray
    mean: float
    lo: float
    hi: float
    lo_value: float
    hi_value: float

    def log_mgf(self, lam: float) -> float:
        return _lse(self.log_weights + lam * self.terms)

    def tilted_mean(self, lam: float) -> float:
        return _tilted_mean(self.log_weights + lam * self.terms, self.terms)

    def optimal_lambda(self, ell: float) -> float:
        if not self.lo < ell < self.hi:
            raise ValueError("optimal lambda only exists on the open domain")
        bracket = LAMBDA_BRACKET
        # widen only when the tilt needed sits beyond the default bracket
        while self.tilted_mean(bracket) < ell and bracket < 1e6:
            bracket *= 2
        while self.tilted_mean(-bracket) > ell and bracket < 1e6:
            bracket *= 2
        return _bisect_increasing(lambda lam: self.tilted_mean(lam) - ell, -bracket, bracket)

    def _scalar(self, ell: float) -> float:
        span = self.hi - self.lo
        eps = 1e-13 * max(1.0, span)
        if ell < self.lo - eps or ell > self.hi + eps:
            return math.inf
        if ell <= self.lo + eps:
            return self.lo_value
        if ell >= self.hi - eps:
            return self.hi_value
        lam = self.optimal_lambda(ell)
        return max(lam * ell - self.log_mgf(lam), 0.0)

    def __call__(self, ell):
        if np.ndim(ell) == 0:
            return self._scalar(float(ell))
        return np.array([self._scalar(float(e)) for e in np.ravel(ell)]).reshape(np.shape(ell))


def cramer_rate(mt: MonitoringTechnology, chosen: Action, deviation: Action) -> RateFunction:
    terms = score_terms(mt, deviation)
    logw = mt.log_mu(chosen)
    lo, hi = float(terms.min()), float(terms.max())
    tol = 1e-14 * max(1.0, hi - lo)
    lo_value = -_lse(logw[terms <= lo + tol])
    hi_value = -_lse(logw[terms >= hi - tol])
    mean = float(np.dot(np.exp(logw), terms))
    terms = terms.copy()
    terms.setflags(write=False)
    return RateFunction(chosen, deviation, terms, logw.copy(), mean, lo, hi, lo_value, hi_value)


def kl_index(mt: MonitoringTechnology, actions: Iterable[Action]) -> float:
    """min over ``actions`` of KL(mu_a || mu_target)."""
    vals = [kl(mt.mu(a), mt.mu(mt.target)) for a in actions]
    if not vals:
        raise ModelError("empty deviation set")
    return float(min(vals))


def theoretical_rate(mt: MonitoringTechnology, costs: CostFunction,
                     regime: Regime | str = Regime.BASELINE) -> float:
    regime = Regime(regime)
    if costs.target != mt.target:
        raise ModelError("cost function and technology disagree on the target action")
    cheaper = costs.cheaper
    if not cheaper:
        raise ModelError("no action is cheaper than the target")
    if regime is Regime.BASELINE:
        return kl_index(mt, cheaper)
    if len(costs.cheapest) != 1:
        raise ModelError(f"limited liability needs a unique cheapest action, got {costs.cheapest}")
    a_hat = costs.cheapest[0]
    rate = chernoff(mt.mu(a_hat), mt.mu(mt.target))
    rest = [a for a in cheaper if a != a_hat]
    if rest:
        rate = min(rate, kl_index(mt, rest))
    return float(rate)


@dataclass(frozen=True)
class Ranking:
    preferred: str  # "first", "second" or "tie"
    index_first: float
    index_second: float

    def __str__(self):
        rel = {"first": ">", "second": "<", "tie": "~"}[self.preferred]
        return f"mu {rel} mu', indices {self.index_first:.2f} vs {self.index_second:.2f}"


def rank_monitoring(mt1: MonitoringTechnology, mt2: MonitoringTechnology,
                    cheaper: Iterable[Action], tol: float = 1e-12) -> Ranking:
    cheaper = tuple(cheaper)
    if mt1.target != mt2.target or set(mt1.actions) != set(mt2.actions):
        raise ModelError("technologies must share action labels and target")
    i1, i2 = kl_index(mt1, cheaper), kl_index(mt2, cheaper)
    if abs(i1 - i2) <= tol:
        pref = "tie"
    else:
        pref = "first" if i1 > i2 else "second"
    return Ranking(pref, i1, i2)


def gaussian_rate(a: float, dev: float, target: float, ell: float) -> float:
    """Rate function for a single Gaussian signal with vanishing noise.

    Minimises (x - a)^2 / 2 subject to ((x - dev)^2 - (x - target)^2) / 2 = ell;
    the constraint is affine in x so the minimiser is unique.
    """
    if dev == target:
        raise ModelError("deviation equals the target: the score constraint is degenerate")
    x = ell / (target - dev) + 0.5 * (target + dev)
    return 0.5 * (x - a) ** 2
