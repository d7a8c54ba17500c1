"""Agent preferences: closed-form utility families, action costs, payoff regimes.

All contract arithmetic happens in utility space, so each family exposes its
inverse ``h = u^{-1}`` together with exact first and second derivatives and a
cancellation-free Bregman gap ``h(x) - h(y) - h'(y)(x - y)``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Hashable, Mapping

import numpy as np

Action = Hashable

_SERIES_CUTOFF = 1e-4


class Regime(str, enum.Enum):
    BASELINE = "baseline"
    LIMITED_LIABILITY = "limited_liability"


class ModelError(ValueError):
    """Inputs violate a modelling assumption needed by the requested operation."""


@dataclass(frozen=True)
class UtilitySpec:
    """Utility over money with a wage floor.

    ``family`` is one of ``"log"``, ``"crra"`` (``param`` = relative risk
    aversion, ``u(w) = (w^(1-s) - 1)/(1-s)``) or ``"cara"`` (``param`` =
    absolute risk aversion, ``u(w) = -exp(-a w)``).
    """

    family: str
    wage_floor: float
    param: float = 1.0

    def __post_init__(self):
        fam = self.family.lower()
        object.__setattr__(self, "family", fam)
        if fam not in ("log", "crra", "cara"):
            raise ModelError(f"unknown utility family {self.family!r}")
        if fam in ("log", "crra") and not self.wage_floor > 0:
            raise ModelError(f"{fam} utility needs a positive wage floor, got {self.wage_floor}")
        if fam == "crra" and (self.param <= 0 or self.param == 1):
            raise ModelError("CRRA needs sigma > 0 and sigma != 1 (use 'log' for sigma = 1)")
        if fam == "cara" and self.param <= 0:
            raise ModelError("CARA needs alpha > 0")

    # -- utility ---------------------------------------------------------
    def u(self, w):
        w = np.asarray(w, dtype=float)
        if self.family == "log":
            return np.log(w)
        if self.family == "crra":
            s = self.param
            return np.expm1((1 - s) * np.log(w)) / (1 - s)
        return -np.exp(-self.param * w)

    def u_prime(self, w):
        w = np.asarray(w, dtype=float)
        if self.family == "log":
            return 1.0 / w
        if self.family == "crra":
            return w ** (-self.param)
        return self.param * np.exp(-self.param * w)

    def u_second(self, w):
        w = np.asarray(w, dtype=float)
        if self.family == "log":
            return -1.0 / w**2
        if self.family == "crra":
            return -self.param * w ** (-self.param - 1)
        return -self.param**2 * np.exp(-self.param * w)

    # -- inverse ---------------------------------------------------------
    def _z(self, v):
        # CRRA: h(v) = z^k with z = 1 + (1 - s) v, k = 1/(1 - s)
        return 1.0 + (1.0 - self.param) * np.asarray(v, dtype=float)

    def h(self, v):
        v = np.asarray(v, dtype=float)
        if self.family == "log":
            return np.exp(v)
        if self.family == "crra":
            return self._z(v) ** (1.0 / (1.0 - self.param))
        return -np.log(-v) / self.param

    def h_prime(self, v):
        v = np.asarray(v, dtype=float)
        if self.family == "log":
            return np.exp(v)
        if self.family == "crra":
            s = self.param
            return self._z(v) ** (s / (1.0 - s))
        return -1.0 / (self.param * v)

    def h_second(self, v):
        v = np.asarray(v, dtype=float)
        if self.family == "log":
            return np.exp(v)
        if self.family == "crra":
            s = self.param
            return s * self._z(v) ** ((2 * s - 1) / (1.0 - s))
        return 1.0 / (self.param * v**2)

    def h_prime_inv(self, y):
        """Inverse of ``h'``; ``-inf`` where ``y`` is below the range of ``h'``."""
        y = np.asarray(y, dtype=float)
        out = np.full(y.shape, -np.inf)
        pos = y > 0
        if self.family == "log":
            out[pos] = np.log(y[pos])
        elif self.family == "crra":
            s = self.param
            out[pos] = np.expm1(((1 - s) / s) * np.log(y[pos])) / (1 - s)
        else:
            out[pos] = -1.0 / (self.param * y[pos])
        return out

    def h_prime_inv_offset(self, ref: float, eta):
        """``(h')^{-1}(h'(ref) (1 + eta)) - ref`` computed without cancellation.

        Returns ``-inf`` where ``1 + eta <= 0`` (below the range of ``h'``).
        """
        eta = np.asarray(eta, dtype=float)
        out = np.full(eta.shape, -np.inf)
        ok = eta > -1
        e = eta[ok]
        if self.family == "log":
            out[ok] = np.log1p(e)
        elif self.family == "crra":
            s = self.param
            z = float(self._z(ref))
            out[ok] = z * np.expm1(((1 - s) / s) * np.log1p(e)) / (1 - s)
        else:
            out[ok] = -ref * e / (1 + e)
        return out

    def bregman(self, x, y):
        """``h(x) - h(y) - h'(y)(x - y)`` without catastrophic cancellation."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        d = x - y
        return self.bregman_offset(y, d)

    def bregman_offset(self, y, d):
        """Bregman gap at ``y + d`` relative to ``y`` with the offset given exactly."""
        y = np.asarray(y, dtype=float)
        d = np.asarray(d, dtype=float)
        y, d = np.broadcast_arrays(y, d)
        if self.family == "log":
            small = np.abs(d) < _SERIES_CUTOFF
            series = d * d * (0.5 + d * (1 / 6 + d / 24))
            with np.errstate(over="ignore"):
                direct = np.expm1(d) - d
            return np.exp(y) * np.where(small, series, direct)
        if self.family == "crra":
            s = self.param
            k = 1.0 / (1.0 - s)
            z = self._z(y)
            r = (1.0 - s) * d / z
            small = np.abs(r) < _SERIES_CUTOFF
            series = r * r * (k * (k - 1) / 2 + r * (k * (k - 1) * (k - 2) / 6
                                                     + r * k * (k - 1) * (k - 2) * (k - 3) / 24))
            with np.errstate(invalid="ignore", over="ignore"):
                direct = np.expm1(k * np.log1p(r)) - k * r
            return z**k * np.where(small, series, direct)
        r = d / y
        small = np.abs(r) < _SERIES_CUTOFF
        series = -r * r * (0.5 - r * (1 / 3 - r / 4))
        with np.errstate(invalid="ignore", divide="ignore"):
            direct = np.log1p(r) - r
        return -np.where(small, series, direct) / self.param

    # -- ranges ----------------------------------------------------------
    @property
    def u_floor(self) -> float:
        return float(self.u(self.wage_floor))

    @property
    def sup_u(self) -> float:
        if self.family == "log":
            return math.inf
        if self.family == "crra":
            return 1.0 / (self.param - 1.0) if self.param > 1 else math.inf
        return 0.0

    def in_range(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return (v >= self.u_floor) & (v < self.sup_u)

    def utility_cap(self, wage_cap: float) -> float:
        return float(self.u(wage_cap))


@dataclass(frozen=True)
class CostFunction:
    """Per-action effort cost together with the target action."""

    costs: Mapping[Action, float]
    target: Action

    def __post_init__(self):
        if self.target not in self.costs:
            raise ModelError(f"target {self.target!r} has no cost")
        object.__setattr__(self, "costs", dict(self.costs))

    def __call__(self, a: Action) -> float:
        return float(self.costs[a])

    @property
    def actions(self) -> tuple:
        return tuple(self.costs)

    @property
    def target_cost(self) -> float:
        return float(self.costs[self.target])

    @property
    def cheaper(self) -> tuple:
        """A-: actions strictly cheaper than the target."""
        c = self.target_cost
        return tuple(a for a, ca in self.costs.items() if ca < c)

    @property
    def costlier(self) -> tuple:
        c = self.target_cost
        return tuple(a for a, ca in self.costs.items() if ca > c)

    @property
    def min_cost(self) -> float:
        return float(min(self.costs.values()))

    @property
    def cheapest(self) -> tuple:
        m = self.min_cost
        return tuple(a for a, ca in self.costs.items() if ca == m)


@dataclass
class Check:
    name: str
    passed: bool
    witness: str = ""


@dataclass
class ValidationReport:
    checks: list[Check] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def add(self, name: str, passed: bool, witness: str = ""):
        self.checks.append(Check(name, bool(passed), "" if passed else witness))

    def __str__(self):
        lines = [f"[{'pass' if c.passed else 'FAIL'}] {c.name}" + (f": {c.witness}" if c.witness else "")
                 for c in self.checks]
        return "\n".join(lines)


def _risk_aversion_check(prefs: UtilitySpec) -> tuple[bool, str]:
    grid = prefs.wage_floor + np.linspace(0.0, 100.0, 101)
    up = prefs.u_prime(grid)
    upp = prefs.u_second(grid)
    bad = np.flatnonzero(~((up > 0) & (upp < 0)))
    if bad.size:
        w = grid[bad[0]]
        return False, f"u'({w:g})={float(prefs.u_prime(w)):g}, u''({w:g})={float(prefs.u_second(w)):g}"
    return True, ""


def validate_assumptions(prefs: UtilitySpec, costs: CostFunction,
                         regime: Regime | str = Regime.BASELINE) -> ValidationReport:
    regime = Regime(regime)
    rep = ValidationReport()
    ok, wit = _risk_aversion_check(prefs)
    rep.add("A1.1 strict risk aversion (u' > 0, u'' < 0)", ok, wit)

    lo, hi = prefs.u_floor, prefs.sup_u
    c_star = costs.target_cost
    others = [a for a in costs.actions if a != costs.target]
    ties = [a for a in others if costs(a) == c_star]
    cheaper = costs.cheaper
    rep.add("A1.3 target not the cheapest, costs distinct from target",
            bool(cheaper) and not ties,
            f"no action cheaper than c(a*)={c_star:g}" if not cheaper
            else f"actions {ties} tie with the target cost")

    if regime is Regime.BASELINE:
        outside = [(a, costs(a)) for a in costs.actions if not (lo < costs(a) < hi)]
        rep.add("A1.2 c(A) inside int u([w_floor, inf))", not outside,
                "; ".join(f"cost {c:g} of action {a!r}" for a, c in outside) + f" outside ({lo:g}, {hi:g})"
                if outside else "")
    else:
        cmin = costs.min_cost
        rep.add("LL u(w_floor) >= min cost", lo >= cmin, f"u(w_floor)={lo:g} < min c={cmin:g}")
        top = lo + c_star - cmin
        rep.add("LL u(w_floor) + c(a*) - min c < sup u", top < hi, f"{top:g} >= sup u = {hi:g}")
        rep.add("LL unique cheapest action", len(costs.cheapest) == 1,
                f"cost minimisers {costs.cheapest}")
    return rep


def require_valid(prefs: UtilitySpec, costs: CostFunction, regime: Regime | str) -> None:
    rep = validate_assumptions(prefs, costs, regime)
    if not rep.ok:
        raise ModelError("model assumptions violated:\n" + str(rep))


def first_best_utility(prefs: UtilitySpec, costs: CostFunction, regime: Regime | str) -> float:
    """Utility level the agent receives under observable actions."""
    regime = Regime(regime)
    if regime is Regime.BASELINE:
        v = costs.target_cost
        if not prefs.u_floor < v < prefs.sup_u:
            raise ModelError(f"c(a*)={v:g} outside the utility range")
        return v
    v = prefs.u_floor + costs.target_cost - costs.min_cost
    if not v < prefs.sup_u:
        raise ModelError(f"u(w_floor) + c(a*) - min c = {v:g} is not below sup u")
    return v


def first_best_cost(prefs: UtilitySpec, costs: CostFunction, regime: Regime | str = Regime.BASELINE) -> float:
    return float(prefs.h(first_best_utility(prefs, costs, regime)))
