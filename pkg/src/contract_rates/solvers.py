"""Second-best, best-binary and linear contracts.

The second-best program is separable and convex in utility space:
minimise sum_t P*(t) h(v_t) over type classes subject to linear IR/IC rows and
a box. It is solved by a weighted log-barrier Newton method in offset
variables ``d = v - ref`` and then polished by Newton's method on the active
multipliers, which keeps IC multipliers of size exp(-n KL) accurate.
"""
from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np
from scipy.optimize import linprog, minimize

from .contracts import (BinaryTest, Contract, InfeasibleContract, build_binary_test, check_ic_ir,
                        gap_to_first_best)
from .monitoring import MonitoringTechnology, score_mean
from .preferences import (CostFunction, ModelError, Regime, UtilitySpec,
                          first_best_cost, first_best_utility)
from .score_dist import EnumerationCapExceeded, ScoreDistribution, enumerate_types

Action = Hashable
log = logging.getLogger(__name__)

WAGE_CAP_FACTOR = 1e6
BARRIER_GAP_TOL = 1e-9
BARRIER_MU = 10.0
KKT_TOL = 1e-6
ORACLE_TYPE_CAP = 5000
UPPER_SET_CAP = 200_000


# ---------------------------------------------------------------------------
# problem data

@dataclass(eq=False)
class _Program:
    """Offset form: slack_j = C[j] . d - b[j] >= 0, lo <= d <= hi (offsets from ref)."""

    sd: ScoreDistribution
    prefs: UtilitySpec
    costs: CostFunction
    regime: Regime
    ref: float
    lo: float
    hi: float
    p: np.ndarray
    C: np.ndarray
    b: np.ndarray
    names: list
    rho: np.ndarray       # rho[j, t] = d eta_t / d multiplier_j (IR row: 1, IC row: 1 - P_a/P*)
    has_ir: bool = True

    @property
    def m(self) -> int:
        return len(self.b)

    def slacks(self, d: np.ndarray) -> np.ndarray:
        return np.array([math.fsum(self.C[j] * d) for j in range(self.m)]) - self.b

    def gap(self, d: np.ndarray) -> float:
        # cost minus h(ref); exact for tiny offsets
        pr = self.prefs
        return math.fsum(self.p * pr.bregman_offset(self.ref, d)) + float(pr.h_prime(self.ref)) * math.fsum(self.p * d)


def _build_program(sd: ScoreDistribution, prefs: UtilitySpec, costs: CostFunction,
                   regime: Regime) -> _Program:
    mt = sd.mt
    ref = first_best_utility(prefs, costs, regime)
    cap = prefs.utility_cap(first_best_cost(prefs, costs, regime) * WAGE_CAP_FACTOR)
    lo, hi = prefs.u_floor - ref, min(cap, prefs.sup_u) - ref
    lp_star = sd.log_prob(mt.target)
    p = np.exp(lp_star)
    rows, b, names, rho = [p], [costs.target_cost - ref], ["IR"], [np.ones_like(p)]
    with np.errstate(over="ignore"):
        for a in mt.deviations:
            pa = sd.prob(a)
            rows.append(p - pa)
            b.append(costs.target_cost - costs(a))
            names.append(a)
            rho.append(-np.expm1(sd.log_prob(a) - lp_star))
    return _Program(sd, prefs, costs, regime, ref, lo, hi, p, np.array(rows), np.array(b, dtype=float),
                    names, np.array(rho))


# ---------------------------------------------------------------------------
# Slater point

def _slater_point(prog: _Program, mt: MonitoringTechnology) -> tuple[np.ndarray, str]:
    """Strictly feasible offsets: a binary contract with its spread widened and shifted up."""
    sd = prog.sd
    cheaper = prog.costs.cheaper
    bands = {a: (score_mean(mt, a, a), score_mean(mt, mt.target, a)) for a in cheaper}
    for frac in (0.5, 0.3, 0.7, 0.15, 0.85):
        gam = {a: lo + frac * (hi - lo) for a, (lo, hi) in bands.items()}
        try:
            bt = build_binary_test(mt, prog.prefs, prog.costs, sd.n, gam, prog.regime, sd=sd)
        except (InfeasibleContract, ModelError):
            continue
        mask = bt.mask(sd)
        d = np.where(mask, bt.ref + bt.d_plus, bt.ref + bt.d_minus) - prog.ref
        if bt.regime is Regime.LIMITED_LIABILITY:
            d = np.where(mask, d, prog.lo)
        scale = float(np.max(np.abs(d))) + 1e-3
        for eps in (0.05, 0.01, 1e-3):
            cand = (1 + eps) * d + eps * scale
            if (np.all(prog.slacks(cand) > 0) and np.all(cand > prog.lo) and np.all(cand < prog.hi)):
                return cand, f"binary(frac={frac}, widen={eps})"
    return _lp_slater(prog), "max-margin LP"


def _lp_slater(prog: _Program) -> np.ndarray:
    T, m = len(prog.p), prog.m
    norms = np.maximum(np.abs(prog.C).max(axis=1), 1e-300)
    # max tau s.t. (C d - b)/norm >= tau, d - lo >= tau, hi - d >= tau, tau <= 1
    A_ub = np.zeros((m + 2 * T, T + 1))
    b_ub = np.zeros(m + 2 * T)
    A_ub[:m, :T] = -prog.C / norms[:, None]
    A_ub[:m, T] = 1.0
    b_ub[:m] = -prog.b / norms
    A_ub[m:m + T, :T] = -np.eye(T)
    A_ub[m:m + T, T] = 1.0
    b_ub[m:m + T] = -prog.lo
    A_ub[m + T:, :T] = np.eye(T)
    A_ub[m + T:, T] = 1.0
    b_ub[m + T:] = prog.hi if math.isfinite(prog.hi) else 1e6
    c = np.zeros(T + 1)
    c[T] = -1.0
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * T + [(None, 1.0)], method="highs")
    if res.status != 0 or res.x[T] <= 1e-12:
        raise InfeasibleContract(f"n={prog.sd.n}: no strictly feasible contract exists at this n")
    return res.x[:T]


# ---------------------------------------------------------------------------
# primal barrier

@dataclass
class BarrierTrace:
    outer: int = 0
    newton: int = 0
    t: float = 0.0
    gap_proxy: float = math.inf
    history: list = field(default_factory=list)


def _barrier(prog: _Program, d0: np.ndarray, gap_tol: float, max_outer: int = 80,
             max_newton: int = 200) -> tuple[np.ndarray, float, BarrierTrace]:
    pr = prog.prefs
    p, C = prog.p, prog.C
    # box barriers carry the largest probability any action puts on the type, so every
    # type keeps a well-scaled barrier while the total weight stays bounded by |A|
    w = np.exp(np.max(prog.sd.logp, axis=0))
    has_hi = math.isfinite(prog.hi)
    m_eff = prog.m + w.sum() * (2 if has_hi else 1)

    def phi(d, t):
        s = prog.slacks(d)
        lo_s = d - prog.lo
        val = t * prog.gap(d) - np.log(s).sum() - math.fsum(w * np.log(lo_s))
        if has_hi:
            val -= math.fsum(w * np.log(prog.hi - d))
        return val

    d = d0.copy()
    f0 = max(prog.gap(d), 1e-300)
    t = max(m_eff / f0, 1.0)
    tr = BarrierTrace()
    for outer in range(max_outer):
        for _ in range(max_newton):
            s = prog.slacks(d)
            v = prog.ref + d
            lo_s = d - prog.lo
            g = t * p * pr.h_prime(v) - (C / s[:, None]).sum(axis=0) - w / lo_s
            D = t * p * pr.h_second(v) + w / lo_s**2
            if has_hi:
                hi_s = prog.hi - d
                g = g + w / hi_s
                D = D + w / hi_s**2
            U = (C / s[:, None]).T                      # T x m
            Dinv_g = g / D
            Dinv_U = U / D[:, None]
            cap = np.eye(prog.m) + U.T @ Dinv_U
            step = -(Dinv_g - Dinv_U @ np.linalg.solve(cap, U.T @ Dinv_g))
            dec2 = float(-g @ step)
            tr.newton += 1
            if dec2 / 2 <= 1e-10:
                break
            # ratio test keeps every slack positive
            amax = 1.0
            ds = C @ step
            neg = ds < 0
            if np.any(neg):
                amax = min(amax, float(np.min(-s[neg] / ds[neg])))
            neg = step < 0
            if np.any(neg):
                amax = min(amax, float(np.min(-lo_s[neg] / step[neg])))
            if has_hi:
                pos = step > 0
                if np.any(pos):
                    amax = min(amax, float(np.min(hi_s[pos] / step[pos])))
            alpha = min(1.0, 0.99 * amax)
            f_cur = phi(d, t)
            while alpha > 1e-14:
                cand = d + alpha * step
                if (np.all(prog.slacks(cand) > 0) and np.all(cand > prog.lo)
                        and (not has_hi or np.all(cand < prog.hi))
                        and phi(cand, t) <= f_cur - 0.25 * alpha * dec2):
                    break
                alpha *= 0.5
            else:
                log.debug("barrier line search stalled at t=%.3g", t)
                break
            d = cand
        tr.outer = outer + 1
        tr.t = t
        tr.gap_proxy = m_eff / t
        tr.history.append((t, prog.gap(d), dec2))
        log.debug("barrier outer %d t=%.3g gap=%.6g decrement=%.3g", outer, t, prog.gap(d), dec2)
        if m_eff / t < gap_tol:
            break
        t *= BARRIER_MU
    return d, t, tr


# ---------------------------------------------------------------------------
# dual polish

@dataclass
class _Dual:
    ir_active: bool
    active: list          # indices of active IC rows (>= 1)
    z: np.ndarray         # [ell] + theta for active IC rows

    def multipliers(self, m: int) -> np.ndarray:
        """Scaled multipliers nu_j = multiplier_j / h'(ref) for all rows."""
        nu = np.zeros(m)
        k = 0
        if self.ir_active:
            nu[0] = 1.0 + self.z[0]
            k = 1
        for j in self.active:
            nu[j] = math.exp(self.z[k])
            k += 1
        return nu


def _primal_from_dual(prog: _Program, dual: _Dual) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Offsets v - ref, their derivative in eta, and eta itself."""
    k = 0
    if dual.ir_active:
        eta = np.full(len(prog.p), dual.z[0])
        k = 1
    else:
        eta = np.full(len(prog.p), -1.0)
    with np.errstate(over="ignore", invalid="ignore"):
        for j in dual.active:
            eta = eta + math.exp(dual.z[k]) * prog.rho[j]
            k += 1
    eta = np.where(np.isnan(eta), -np.inf, eta)
    raw = prog.prefs.h_prime_inv_offset(prog.ref, eta)
    d = np.clip(raw, prog.lo, prog.hi)
    interior = (raw > prog.lo) & (raw < prog.hi)
    dd = np.zeros_like(d)
    v = prog.ref + d[interior]
    dd[interior] = float(prog.prefs.h_prime(prog.ref)) / prog.prefs.h_second(v)
    return d, dd, eta


def _newton_dual(prog: _Program, dual: _Dual, max_iter: int = 200) -> tuple[bool, _Dual, int]:
    rows = ([0] if dual.ir_active else []) + list(dual.active)
    z = dual.z.copy()
    scale = np.array([math.fsum(np.abs(prog.C[j])) for j in rows])

    def solve(J, rhs):
        rs = np.abs(J).max(axis=1)
        rs[rs == 0] = 1.0
        cs = np.abs(J / rs[:, None]).max(axis=0)
        cs[cs == 0] = 1.0
        Js = J / rs[:, None] / cs[None, :]
        try:
            x = np.linalg.solve(Js, rhs / rs)
        except np.linalg.LinAlgError:
            x = np.linalg.lstsq(Js, rhs / rs, rcond=None)[0]
        return x / cs

    def state(zv):
        cur = _Dual(dual.ir_active, dual.active, zv)
        d, dd, _ = _primal_from_dual(prog, cur)
        s = prog.slacks(d)[rows]
        return cur, d, dd, s

    for it in range(max_iter):
        cur, d, dd, s = state(z)
        noise = 1e-14 * (scale + np.abs(prog.b[rows]))
        E = []
        k = 0
        if dual.ir_active:
            E.append(np.ones_like(d))
            k = 1
        for j in dual.active:
            with np.errstate(invalid="ignore"):
                col = math.exp(z[k]) * prog.rho[j]
            E.append(np.where(dd > 0, col, 0.0))
            k += 1
        E = np.array(E).T
        J = prog.C[rows] @ (dd[:, None] * E)
        if not np.all(np.isfinite(J)):
            return False, cur, it
        dz = solve(J, -s)
        if not np.all(np.isfinite(dz)):
            return False, cur, it
        nrm = float(np.linalg.norm(dz))
        if np.all(np.abs(s) <= noise) or nrm <= 1e-13 * (1 + float(np.linalg.norm(z))):
            return True, cur, it
        alpha = 1.0
        while alpha > 1e-12:
            zt = z + alpha * dz
            th = zt[1 if dual.ir_active else 0:]
            if np.any(th < -745) or np.any(th > 700):
                alpha *= 0.5
                continue
            _, _, _, st = state(zt)
            dz_bar = solve(J, -st)
            if np.all(np.isfinite(dz_bar)) and np.linalg.norm(dz_bar) <= (1 - alpha / 4) * nrm:
                break
            if np.all(np.abs(st) <= noise):
                break
            alpha *= 0.5
        else:
            return False, cur, it
        z = zt
    cur, d, dd, s = state(z)
    return bool(np.all(np.abs(s) <= 1e-10 * (1 + scale))), cur, max_iter


def _polish(prog: _Program, guesses: list[np.ndarray]) -> tuple[_Dual | None, int]:
    """Active-set Newton on the dual; ``guesses`` are scaled multiplier vectors nu."""
    m = prog.m
    total = 0
    for nu0 in guesses:
        ir = bool(prog.has_ir and nu0[0] > 0)
        active = [j for j in range(1, m) if nu0[j] > 0]
        for _ in range(2 * m + 2):
            z = ([nu0[0] - 1.0] if ir else []) + [math.log(max(nu0[j], 1e-300)) for j in active]
            dual = _Dual(ir, active, np.array(z, dtype=float))
            ok, dual, its = _newton_dual(prog, dual)
            total += its
            if not ok:
                break
            nu = dual.multipliers(m)
            d, _, _ = _primal_from_dual(prog, dual)
            s = prog.slacks(d)
            tol = 1e-9 * (1 + np.abs(prog.b))
            changed = False
            if ir and nu[0] < 0:
                ir, changed = False, True
            theta = dual.z[1 if dual.ir_active else 0:]
            drop = [j for j, th in zip(active, theta) if th < -700]
            if drop:
                active = [j for j in active if j not in drop]
                changed = True
            if prog.has_ir and not ir and s[0] < -tol[0]:
                ir, changed = True, True
            viol = [j for j in range(1, m) if j not in active and s[j] < -tol[j]]
            if viol:
                j = min(viol, key=lambda k: s[k])
                active = sorted(active + [j])
                changed = True
            if not changed:
                return dual, total
            nu0 = nu.copy()
            for j in active:
                if nu0[j] <= 0:
                    nu0[j] = max((nu[k] for k in active if nu[k] > 0), default=1.0)
            nu0[0] = nu[0] if ir else 0.0
            if ir and nu0[0] <= 0:
                nu0[0] = 1.0
    return None, total


# ---------------------------------------------------------------------------
# public API

@dataclass
class KKTReport:
    stationarity: float       # max |v - max{(h')^{-1}(y), u(w_floor)}| over types (cap-clipped)
    complementarity: float    # max |multiplier * slack|
    primal_infeasibility: float
    dual_infeasibility: float

    @property
    def residual(self) -> float:
        return max(self.stationarity, self.complementarity, self.primal_infeasibility,
                   self.dual_infeasibility)

    @property
    def ok(self) -> bool:
        return self.residual < KKT_TOL


@dataclass
class SecondBestSolution:
    contract: Contract
    sd: ScoreDistribution
    regime: Regime
    lam: float
    kappa: dict
    slacks: dict
    kkt: KKTReport
    cost: float
    gap: float
    cap_binding: bool
    converged: bool
    slater: str
    barrier: BarrierTrace
    polish_iterations: int
    warnings: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.sd.n

    @property
    def kkt_residual(self) -> float:
        return self.kkt.residual


def kkt_check(contract: Contract, sd: ScoreDistribution, costs: CostFunction, lam: float,
              kappa: dict, regime: Regime | str = Regime.BASELINE) -> KKTReport:
    """Verify optimality conditions directly from utilities and multipliers."""
    regime = Regime(regime)
    prefs = contract.prefs
    mt = sd.mt
    lp_star = sd.log_prob(mt.target)
    y = np.full(sd.n_types, float(lam))
    with np.errstate(over="ignore", invalid="ignore"):
        for a, k in kappa.items():
            if k > 0:
                y = y + k * (-np.expm1(sd.log_prob(a) - lp_star))
    y = np.where(np.isnan(y), -np.inf, y)
    cap = prefs.utility_cap(first_best_cost(prefs, costs, regime) * WAGE_CAP_FACTOR)
    vstar = np.clip(np.maximum(prefs.h_prime_inv(y), prefs.u_floor), -np.inf, min(cap, prefs.sup_u))
    stat = float(np.max(np.abs(contract.utilities - vstar)))
    sl = check_ic_ir(contract, mt, costs, sd)
    comp = abs(lam * sl.ir)
    for a, k in kappa.items():
        comp = max(comp, abs(k * sl.ic[a]))
    prim = max(0.0, -sl.ir, *(-s for s in sl.ic.values()))
    dual = max(0.0, -lam, *(-k for k in kappa.values()))
    return KKTReport(stat, comp, prim, dual)


def solve_second_best(mt: MonitoringTechnology, prefs: UtilitySpec, costs: CostFunction, n: int,
                      regime: Regime | str = Regime.BASELINE,
                      sd: ScoreDistribution | None = None) -> SecondBestSolution:
    """Cost-minimising contract implementing the target at sample size n."""
    regime = Regime(regime)
    sd = sd if sd is not None else enumerate_types(mt, n)
    prog = _build_program(sd, prefs, costs, regime)
    warnings = []
    d0, slater = _slater_point(prog, mt)
    gap_tol = BARRIER_GAP_TOL * first_best_cost(prefs, costs, regime)
    h1 = float(prefs.h_prime(prog.ref))
    try:
        d_bar, t, trace = _barrier(prog, d0, gap_tol)
        s_bar = prog.slacks(d_bar)
        nu_bar = 1.0 / (t * s_bar) / h1
    except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:  # pragma: no cover
        warnings.append(f"barrier failed: {exc}")
        d_bar, trace, nu_bar = d0, BarrierTrace(), None

    # multiplier guesses: barrier estimate, then the limit-shape heuristic
    guesses = []
    if nu_bar is not None and np.all(np.isfinite(nu_bar)):
        g = nu_bar.copy()
        g[1:] = np.where(g[1:] > 1e-6 * g[1:].max(), g[1:], 0.0)
        guesses.append(g)
    heur = np.zeros(prog.m)
    if regime is Regime.BASELINE:
        heur[0] = 1.0
    for j, a in enumerate(prog.names[1:], start=1):
        if a in costs.cheaper:
            heur[j] = 1.0 if (regime is Regime.LIMITED_LIABILITY and a in costs.cheapest) \
                else math.exp(max(n * score_mean(mt, a, a), -700))
    guesses.append(heur)
    dual, pol_its = _polish(prog, guesses[::-1])
    if dual is not None:
        d, _, _ = _primal_from_dual(prog, dual)
        nu = dual.multipliers(prog.m)
        converged = True
    else:
        warnings.append("dual polish did not converge; barrier solution returned")
        d = d_bar
        nu = np.where(np.isfinite(nu_bar), nu_bar, 0.0) if nu_bar is not None else np.zeros(prog.m)
        converged = False
    lam = float(nu[0] * h1)
    kappa = {a: float(nu[j] * h1) for j, a in enumerate(prog.names) if j > 0}
    v = prog.ref + d
    contract = Contract(n, v, prefs, prog.ref, d, "second_best")
    kkt = kkt_check(contract, sd, costs, lam, kappa, regime)
    sl = check_ic_ir(contract, mt, costs, sd)
    slacks = {"IR": sl.ir, **sl.ic}
    cap_binding = bool(np.any(d >= prog.hi - 1e-6 * max(1.0, abs(prog.hi))))
    if cap_binding:
        warnings.append("wage cap binding: solution unreliable")
    if not kkt.ok:
        warnings.append(f"KKT residual {kkt.residual:.3g} above tolerance")
    gap = gap_to_first_best(contract, sd, costs, regime)
    cost = first_best_cost(prefs, costs, regime) + gap
    return SecondBestSolution(contract, sd, regime, lam, kappa, slacks, kkt, cost, gap, cap_binding,
                              converged and kkt.ok, slater, trace, pol_its, warnings)


# ---------------------------------------------------------------------------
# limit shape

@dataclass
class ShapeReport:
    ns: list
    delta: dict
    high_mean: list           # conditional mean utility under a* on the pass region
    low_mean: list            # worst conditional mean under a in A- on its fail region
    high_target: float
    low_target: float
    high_monotone: bool
    low_monotone: bool

    @property
    def high_dev(self) -> float:
        return abs(self.high_mean[-1] - self.high_target)

    @property
    def low_dev(self) -> float:
        return abs(self.low_mean[-1] - self.low_target)

    @property
    def trend_monotone(self) -> bool:
        return self.high_monotone and self.low_monotone


def _monotone_toward(seq, target) -> bool:
    dist = [abs(x - target) for x in seq]
    return all(b <= a + 1e-12 for a, b in zip(dist, dist[1:]))


def limit_shape(solutions: Sequence[SecondBestSolution], mt: MonitoringTechnology, prefs: UtilitySpec,
                costs: CostFunction, delta_frac: float = 0.1) -> ShapeReport:
    """Mean payment above and below the maximally lenient thresholds across increasing n."""
    sols = sorted(solutions, key=lambda s: s.n)
    if len(sols) < 2 or len({s.n for s in sols}) < 2:
        raise ValueError("trend undefined: need solutions at several n")
    cheaper = costs.cheaper
    gamma = {a: score_mean(mt, a, a) for a in cheaper}
    delta = {a: delta_frac * (score_mean(mt, mt.target, a) - gamma[a]) for a in cheaper}
    highs, lows = [], []
    for s in sols:
        sd, v = s.sd, s.contract.utilities
        high = np.ones(sd.n_types, dtype=bool)
        for a in cheaper:
            high &= sd.score(a) > gamma[a] + delta[a]
        p = sd.prob(mt.target)
        highs.append(float(np.dot(p[high], v[high]) / p[high].sum()) if p[high].sum() > 0 else math.nan)
        worst = None
        for a in cheaper:
            low = sd.score(a) < gamma[a] - delta[a]
            pa = sd.prob(a)
            if pa[low].sum() > 0:
                mean = float(np.dot(pa[low], v[low]) / pa[low].sum())
                if worst is None or abs(mean - prefs.u_floor) > abs(worst - prefs.u_floor):
                    worst = mean
        lows.append(math.nan if worst is None else worst)
    regime = sols[-1].regime
    high_target = costs.target_cost if regime is Regime.BASELINE else first_best_utility(prefs, costs, regime)
    return ShapeReport([s.n for s in sols], delta, highs, lows, high_target, prefs.u_floor,
                       _monotone_toward(highs, high_target), _monotone_toward(lows, prefs.u_floor))


# ---------------------------------------------------------------------------
# best binary contract

@dataclass
class BestBinary:
    test: BinaryTest | None
    gap: float
    cost: float
    thresholds: dict | None
    method: str
    search_gap: float
    oracle_gap: float | None


def _binary_gap(mt, prefs, costs, n, regime, sd, thresholds=None, mask=None):
    try:
        bt = build_binary_test(mt, prefs, costs, n, thresholds, regime, sd=sd, pass_mask=mask)
    except (InfeasibleContract, ModelError):
        return math.inf, None
    return gap_to_first_best(bt.to_contract(sd), sd, costs, regime), bt


def _golden(f, lo, hi, iters=60):
    g = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def _upper_sets(scores: np.ndarray, cap: int):
    """All upper sets of the componentwise order on distinct score vectors."""
    uniq, inv = np.unique(np.round(scores, 12), axis=0, return_inverse=True)
    inv = np.ravel(inv)
    k = len(uniq)
    order = np.argsort(-uniq.sum(axis=1), kind="stable")
    above = [[j for j in range(k) if j != i and np.all(uniq[j] >= uniq[i])] for i in range(k)]
    out = []

    def rec(pos, chosen):
        if len(out) > cap:
            raise EnumerationCapExceeded(f"more than {cap} upper sets")
        if pos == k:
            out.append(chosen.copy())
            return
        i = order[pos]
        chosen[i] = False
        # excluding i is fine only if nothing below i was included; checked when including
        rec(pos + 1, chosen)
        if all(chosen[j] for j in above[i]):
            chosen[i] = True
            rec(pos + 1, chosen)
            chosen[i] = False

    if scores.shape[1] == 1:
        vals = uniq[:, 0]
        for thr in np.concatenate([np.sort(vals), [np.inf]]):
            out.append(vals >= thr)
    else:
        rec(0, np.zeros(k, dtype=bool))
    # an upper set must also contain everything above its members; filter the recursion output
    valid = [u for u in out if all(u[j] for i in np.flatnonzero(u) for j in above[i])]
    return [u[inv] for u in valid]


def best_binary(mt: MonitoringTechnology, prefs: UtilitySpec, costs: CostFunction, n: int,
                regime: Regime | str = Regime.BASELINE, sd: ScoreDistribution | None = None,
                exact: bool = True) -> BestBinary:
    """Cheapest binary contract: threshold search plus an exact pass-set oracle when affordable."""
    regime = Regime(regime)
    sd = sd if sd is not None else enumerate_types(mt, n)
    cheaper = costs.cheaper
    bands = {a: (score_mean(mt, a, a), score_mean(mt, mt.target, a)) for a in cheaper}
    best_g, best_thr, best_bt = math.inf, None, None
    for frac in (0.1, 0.3, 0.5, 0.7, 0.9):
        thr = {a: lo + frac * (hi - lo) for a, (lo, hi) in bands.items()}
        cur, bt = _binary_gap(mt, prefs, costs, n, regime, sd, thr)
        for _ in range(4):
            improved = False
            for a, (lo, hi) in bands.items():
                span = hi - lo

                def f(g, a=a):
                    return _binary_gap(mt, prefs, costs, n, regime, sd, {**thr, a: g})[0]
                g_new, val = _golden(f, lo + 1e-9 * span, hi - 1e-9 * span)
                if val < cur:
                    thr = {**thr, a: g_new}
                    cur = val
                    improved = True
            if not improved:
                break
        if cur < best_g:
            best_g, best_thr = cur, thr
            best_bt = _binary_gap(mt, prefs, costs, n, regime, sd, thr)[1]
    search_gap = best_g
    oracle_gap = None
    method = "threshold search"
    if exact and sd.n_types <= ORACLE_TYPE_CAP:
        scores = np.column_stack([sd.score(a) for a in cheaper])
        try:
            sets = _upper_sets(scores, UPPER_SET_CAP)
        except EnumerationCapExceeded:
            sets = []
        og, obt = math.inf, None
        for mask in sets:
            if not mask.any() or mask.all():
                continue
            g, bt = _binary_gap(mt, prefs, costs, n, regime, sd, mask=mask)
            if g < og:
                og, obt = g, bt
        if sets:
            oracle_gap = og
            if og < best_g:
                best_g, best_bt, best_thr, method = og, obt, None, "upper-set oracle"
    if best_bt is None:
        raise InfeasibleContract(f"n={n}: no feasible binary contract")
    cost = first_best_cost(prefs, costs, regime) + best_g
    return BestBinary(best_bt, best_g, cost, best_thr, method, search_gap, oracle_gap)


# ---------------------------------------------------------------------------
# linear schedules

@dataclass
class LinearSolution:
    mode: str
    coef: np.ndarray          # beta (utility_linear) or b (wage_linear)
    cost: float
    gap: float
    floor_active: bool
    local_optimum: bool
    seeds: list = field(default_factory=list)
    contract: Contract | None = None


def _dense_barrier(f_grad_hess, A: np.ndarray, bvec: np.ndarray, x0: np.ndarray, scale: float,
                   gap_tol: float = 1e-12, max_outer: int = 60) -> np.ndarray:
    """Log-barrier Newton for a small smooth convex objective under A x >= b."""
    x = x0.copy()
    m = len(bvec)
    t = max(1.0, m / max(scale, 1e-300))
    for _ in range(max_outer):
        for _ in range(200):
            s = A @ x - bvec
            f, g, H = f_grad_hess(x)
            gb = t * g - A.T @ (1 / s)
            Hb = t * H + A.T @ (A / s[:, None] ** 2)
            step = -np.linalg.solve(Hb, gb)
            dec2 = float(-gb @ step)
            if dec2 / 2 < 1e-12:
                break
            ds = A @ step
            neg = ds < 0
            amax = float(np.min(-s[neg] / ds[neg])) if np.any(neg) else 1.0
            alpha = min(1.0, 0.99 * amax)
            cur = t * f - np.log(s).sum()
            while alpha > 1e-14:
                xn = x + alpha * step
                sn = A @ xn - bvec
                if np.all(sn > 0) and t * f_grad_hess(xn)[0] - np.log(sn).sum() <= cur - 0.25 * alpha * dec2:
                    break
                alpha *= 0.5
            else:
                break
            x = xn
        if m / t < gap_tol * scale:
            break
        t *= BARRIER_MU
    return x


def _utility_linear(mt, prefs, costs, sd, regime) -> LinearSolution:
    K = mt.n_signals
    F = sd.freqs()
    p = sd.prob(mt.target)
    ref = first_best_utility(prefs, costs, regime)
    h1 = float(prefs.h_prime(ref))
    lo = prefs.u_floor - ref
    cap = prefs.utility_cap(first_best_cost(prefs, costs, regime) * WAGE_CAP_FACTOR) - ref

    def fgh(beta):  # beta as offsets from ref
        d = F @ beta
        v = ref + d
        f = math.fsum(p * prefs.bregman_offset(ref, d)) + h1 * math.fsum(p * d)
        g = F.T @ (p * prefs.h_prime(v))
        H = F.T @ (F * (p * prefs.h_second(v))[:, None])
        return f, g, H

    rows, rhs = [mt.mu(mt.target)], [costs.target_cost - ref]
    for a in mt.deviations:
        rows.append(mt.mu(mt.target) - mt.mu(a))
        rhs.append(costs.target_cost - costs(a))
    A = np.vstack(rows + [np.eye(K), -np.eye(K)])
    bvec = np.concatenate([rhs, np.full(K, lo), np.full(K, -cap)])
    # strictly feasible start: scale a binding two-point solution if possible, else LP
    res = linprog(np.zeros(K + 1) - np.r_[np.zeros(K), 1.0],
                  A_ub=-np.c_[A, -np.ones(len(bvec))], b_ub=-bvec,
                  bounds=[(None, None)] * K + [(None, 1.0)], method="highs")
    if res.status != 0 or res.x[K] <= 1e-12:
        raise InfeasibleContract("no strictly feasible utility-linear schedule")
    beta = _dense_barrier(fgh, A, bvec, res.x[:K], first_best_cost(prefs, costs, regime))
    # exact vertex clean-up: if the active set is a square system, solve it directly
    s = A @ beta - bvec
    act = np.flatnonzero(s < 1e-7 * (1 + np.abs(bvec)))
    if len(act) == K and abs(np.linalg.det(A[act])) > 1e-12:
        cand = np.linalg.solve(A[act], bvec[act])
        if np.all(A @ cand - bvec >= -1e-12):
            beta = cand
    d = F @ beta
    contract = Contract(sd.n, ref + d, prefs, ref, d, "utility_linear")
    gap = gap_to_first_best(contract, sd, costs, regime)
    floor_active = bool(np.any(beta - lo < 1e-7))
    return LinearSolution("utility_linear", ref + beta, first_best_cost(prefs, costs, regime) + gap, gap,
                          floor_active, False, [], contract)


def _wage_linear(mt, prefs, costs, sd, regime, starts: int, seed: int) -> LinearSolution:
    K = mt.n_signals
    F = sd.freqs()
    mu_star = mt.mu(mt.target)
    c_fb = first_best_cost(prefs, costs, regime)
    acts = mt.actions

    def payoffs(b):
        v = prefs.u(np.maximum(F @ b, prefs.wage_floor))
        return {a: float(np.dot(sd.prob(a), v)) - costs(a) for a in acts}

    def jac_payoff(b, a):
        w = np.maximum(F @ b, prefs.wage_floor)
        return F.T @ (sd.prob(a) * prefs.u_prime(w))

    cons = [{"type": "ineq", "fun": lambda b: payoffs(b)[mt.target],
             "jac": lambda b: jac_payoff(b, mt.target)}]
    for a in mt.deviations:
        cons.append({"type": "ineq",
                     "fun": lambda b, a=a: payoffs(b)[mt.target] - payoffs(b)[a],
                     "jac": lambda b, a=a: jac_payoff(b, mt.target) - jac_payoff(b, a)})
    rng = np.random.default_rng(seed)
    best, seeds = None, []
    hi = c_fb * 20
    for k in range(starts):
        x0 = rng.uniform(prefs.wage_floor, hi, size=K)
        seeds.append(int(seed) * 1000 + k)
        with warnings.catch_warnings():
            # SLSQP clips trial points to the bounds and says so; the clipped point is what we want
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(lambda b: float(mu_star @ b), x0, jac=lambda b: mu_star, method="SLSQP",
                           bounds=[(prefs.wage_floor, None)] * K, constraints=cons,
                           options={"ftol": 1e-14, "maxiter": 1000})
        b = res.x
        pay = payoffs(b)
        feas = pay[mt.target] >= -1e-9 and all(pay[mt.target] - pay[a] >= -1e-9 for a in mt.deviations)
        if feas and (best is None or mu_star @ b < mu_star @ best):
            best = b
    if best is None:
        raise InfeasibleContract("all wage-linear starts infeasible")
    cost = float(mu_star @ best)
    floor_active = bool(np.any(best <= prefs.wage_floor + 1e-9))
    return LinearSolution("wage_linear", best, cost, cost - c_fb, floor_active, True, seeds)


def solve_linear(mt: MonitoringTechnology, prefs: UtilitySpec, costs: CostFunction, n: int,
                 mode: str = "utility_linear", regime: Regime | str = Regime.BASELINE,
                 sd: ScoreDistribution | None = None, starts: int = 20, seed: int = 0) -> LinearSolution:
    """Optimal schedule linear in empirical frequencies (in utilities or in wages)."""
    regime = Regime(regime)
    if mt.n_signals > 4:
        raise ModelError("linear schedules are supported for at most 4 signals")
    sd = sd if sd is not None else enumerate_types(mt, n)
    if mode == "utility_linear":
        return _utility_linear(mt, prefs, costs, sd, regime)
    if mode == "wage_linear":
        return _wage_linear(mt, prefs, costs, sd, regime, starts, seed)
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# raw-sequence oracle

def raw_sequence_oracle(mt: MonitoringTechnology, prefs: UtilitySpec, costs: CostFunction, n: int,
                        regime: Regime | str = Regime.BASELINE, x0: np.ndarray | None = None) -> float:
    """Second-best cost optimising one payment per raw signal sequence (tiny n only)."""
    regime = Regime(regime)
    K = mt.n_signals
    if K**n > 4096:
        raise ValueError("raw-sequence oracle is limited to |X|^n <= 4096")
    seqs = np.array(list(itertools.product(range(K), repeat=n)), dtype=int)
    logp = {a: mt.log_mu(a)[seqs].sum(axis=1) for a in mt.actions}
    P = {a: np.exp(lp) for a, lp in logp.items()}
    ps = P[mt.target]
    cap = prefs.utility_cap(first_best_cost(prefs, costs, regime) * WAGE_CAP_FACTOR)
    cons = [{"type": "ineq", "fun": lambda v: ps @ v - costs.target_cost, "jac": lambda v: ps}]
    for a in mt.deviations:
        g = ps - P[a]
        cons.append({"type": "ineq", "fun": lambda v, g=g, a=a: g @ v - (costs.target_cost - costs(a)),
                     "jac": lambda v, g=g: g})
    if x0 is None:
        # start from the single-signal binary contract replicated by majority of the high signal
        x0 = np.full(len(ps), costs.target_cost)
    best = None
    for start in (x0, np.full(len(ps), costs.target_cost) + 0.1 * (logp[mt.target] - logp[mt.deviations[0]])):
        res = minimize(lambda v: float(ps @ prefs.h(v)), start, jac=lambda v: ps * prefs.h_prime(v),
                       method="SLSQP", bounds=[(prefs.u_floor, cap)] * len(ps), constraints=cons,
                       options={"ftol": 1e-15, "maxiter": 2000})
        v = res.x
        ok = ps @ v - costs.target_cost >= -1e-9 and all(
            (ps - P[a]) @ v - (costs.target_cost - costs(a)) >= -1e-9 for a in mt.deviations)
        if ok and (best is None or res.fun < best):
            best = float(res.fun)
    if best is None:
        raise InfeasibleContract("raw-sequence oracle found no feasible contract")
    return best
