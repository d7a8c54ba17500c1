"""Exact finite-n law of the log-likelihood score vector via multinomial type classes.

Every probability is kept as a natural log and aggregated with log-sum-exp, so
tail probabilities far below the double-precision underflow limit stay exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Hashable, Mapping

import numpy as np
from scipy.special import gammaln, logsumexp

from .monitoring import MonitoringTechnology, score_terms

Action = Hashable

DEFAULT_TYPE_CAP = 2_000_000
TIE_TOL = 1e-12


class EnumerationCapExceeded(RuntimeError):
    """Too many type classes; estimate with ``mc_tail_prob`` instead."""


def n_types(n: int, k: int) -> int:
    return math.comb(n + k - 1, k - 1)


def compositions(n: int, k: int) -> np.ndarray:
    """All count vectors of length k summing to n, in a fixed lexicographic order."""
    if k == 1:
        return np.array([[n]], dtype=np.int64)
    if k == 2:
        c = np.arange(n + 1, dtype=np.int64)
        return np.column_stack([n - c, c])
    # stars and bars: bar positions among n + k - 1 slots
    bars = np.array(list(combinations(range(n + k - 1), k - 1)), dtype=np.int64)
    padded = np.column_stack([np.full(len(bars), -1), bars, np.full(len(bars), n + k - 1)])
    return np.diff(padded, axis=1) - 1


@dataclass(frozen=True, eq=False)
class ScoreDistribution:
    """Type classes at sample size n with per-action log-probabilities."""

    mt: MonitoringTechnology
    n: int
    counts: np.ndarray        # (T, |X|)
    log_mult: np.ndarray      # (T,)
    scores: np.ndarray        # (T, |deviations|) average score L(a') per type
    logp: np.ndarray          # (|A|, T)

    @property
    def n_types(self) -> int:
        return len(self.log_mult)

    @property
    def deviations(self) -> tuple:
        return self.mt.deviations

    def score(self, deviation: Action) -> np.ndarray:
        return self.scores[:, self.deviations.index(deviation)]

    def log_prob(self, a: Action) -> np.ndarray:
        return self.logp[self.mt.index(a)]

    def prob(self, a: Action) -> np.ndarray:
        return np.exp(self.log_prob(a))

    def freqs(self) -> np.ndarray:
        return self.counts / self.n

    def expect(self, a: Action, values) -> float:
        return float(np.dot(self.prob(a), values))


def enumerate_types(mt: MonitoringTechnology, n: int, cap: int = DEFAULT_TYPE_CAP) -> ScoreDistribution:
    if n < 1:
        raise ValueError("n must be positive")
    k = mt.n_signals
    total = n_types(n, k)
    if total > cap:
        raise EnumerationCapExceeded(
            f"{total} type classes at n={n}, |X|={k} exceed the cap {cap}; use mc_tail_prob")
    counts = compositions(n, k)
    log_mult = gammaln(n + 1) - gammaln(counts + 1).sum(axis=1)
    terms = np.column_stack([score_terms(mt, d) for d in mt.deviations])
    scores = counts @ terms / n
    logp = log_mult[:, None] + counts @ mt._logp.T
    logp = logp.T.copy()
    for arr in (counts, log_mult, scores, logp):
        arr.setflags(write=False)
    return ScoreDistribution(mt, n, counts, log_mult, scores, logp)


@dataclass(frozen=True)
class ThresholdRule:
    """Pass iff L(a') >= gamma(a') for every listed deviation (ties pass).

    With ``negate=True`` the rule selects the complement (some score falls short).
    """

    thresholds: Mapping[Action, float]
    negate: bool = False

    def passes_scores(self, scores_by_dev: Mapping[Action, np.ndarray]) -> np.ndarray:
        mask = None
        for d, g in self.thresholds.items():
            s = scores_by_dev[d]
            ok = s >= g - TIE_TOL * max(1.0, abs(g))
            mask = ok if mask is None else (mask & ok)
        if mask is None:
            raise ValueError("threshold rule with no deviations")
        return ~mask if self.negate else mask

    def mask(self, sd: ScoreDistribution) -> np.ndarray:
        return self.passes_scores({d: sd.score(d) for d in self.thresholds})

    def complement(self) -> "ThresholdRule":
        return ThresholdRule(dict(self.thresholds), not self.negate)


def log_prob_of_mask(sd: ScoreDistribution, a: Action, mask: np.ndarray) -> float:
    if mask.all():
        return 0.0
    lp = sd.log_prob(a)[mask]
    if lp.size == 0:
        return -math.inf
    return float(min(logsumexp(lp), 0.0))


def tail_prob(sd: ScoreDistribution, a: Action, predicate: ThresholdRule) -> float:
    """log P_a[predicate], exact over type classes."""
    return log_prob_of_mask(sd, a, predicate.mask(sd))


@dataclass(frozen=True)
class MCEstimate:
    estimate: float
    stderr: float
    samples: int


def mc_tail_prob(mt: MonitoringTechnology, n: int, a: Action, predicate: ThresholdRule,
                 samples: int, seed: int) -> MCEstimate:
    """Monte Carlo frequency of the predicate under action ``a`` (sampling type counts directly)."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(n, mt.mu(a), size=samples)
    scores = {d: counts @ score_terms(mt, d) / n for d in predicate.thresholds}
    hits = predicate.passes_scores(scores)
    p = float(hits.mean())
    return MCEstimate(p, math.sqrt(p * (1 - p) / samples), samples)
