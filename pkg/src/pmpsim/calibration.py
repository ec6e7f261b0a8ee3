"""PMP calibration of the household models.

Per household:

1. a linear program at marginal gross margins, with every observed level
   capped slightly above its observed value, yields the resource shadow
   values rho;
2. a diagonal quadratic behavioral term is seeded from the target supply
   elasticities and refined by a fixed point on finite-difference
   elasticities of the full constrained problem;
3. the linear term d is set so that the first-order conditions hold exactly
   at the observed crop mix, whatever Q is.

Activities that other members of a household's group grow are attached as
alternatives with the group's mean margin and curvature, calibrated to sit
exactly at zero.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy.optimize import linprog, minimize

from .core import Activity, BehavioralFunction, Diagnostic, Household, Model, PriceSystem, SubsidyPolicy
from .household import BUYER, SELLER, build_problem, fixed_cost_per_ha, solve_household, tranche_pieces
from .qp import OPTIMAL, QPError, solve_dense_qp

log = logging.getLogger(__name__)

STAGE1_EPS = 1e-6
ELASTICITY_TOL = 0.05
MAX_ITER = 50
PRICE_STEP = 0.01
# Q stays within this factor of its myopic seed; jointly unattainable targets
# otherwise drive some entries toward zero and the problem toward singularity.
Q_RANGE = 100.0
# stop once this many iterations pass without improving the best iterate
STALL_ITER = 5


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ElasticityTargets:
    values: Mapping[str, float] = field(default_factory=dict)
    default: float = 0.8

    def __post_init__(self):
        if self.default <= 0 or any(v <= 0 for v in self.values.values()):
            raise ValueError("supply elasticities must be > 0")

    def get(self, product: str) -> float:
        return float(self.values.get(product, self.default))


@dataclass(frozen=True)
class CalibrationResult:
    household: str
    activity_ids: tuple
    behavioral: BehavioralFunction
    margin_adjust: dict
    duals: dict
    observed: dict
    gross_margin: dict
    alternatives: tuple = ()
    target: dict = field(default_factory=dict)
    elasticity: dict = field(default_factory=dict)
    corner: dict = field(default_factory=dict)
    residual: dict = field(default_factory=dict)
    converged: bool = True
    iterations: int = 0
    diagnostics: tuple = ()
    les: tuple | None = None

    @property
    def max_residual(self) -> float:
        return max(self.residual.values(), default=0.0)


@dataclass(frozen=True)
class GroupStat:
    gross_margin: float
    q_diag: float
    count: int


# ------------------------------------------------------------ gross margins

def marginal_fertilizer_price(household: Household, model: Model, policy: SubsidyPolicy,
                              levels: Mapping[str, float] | None = None,
                              prices: PriceSystem | None = None) -> float:
    """Price of the next eligible kilogram of fertilizer at the given levels."""
    prices = model.prices if prices is None else prices
    pf = prices.fertilizer_market_price
    if not policy.eligible(household):
        return pf
    levels = household.observed_levels if levels is None else levels
    used = sum(model.activities[a].fertilizer_qty * x for a, x in levels.items()
               if model.activities[a].subsidy_eligible_fertilizer)
    return (1.0 - policy.rate) * pf if used <= policy.quota_kg else pf


def gross_margin(activity: Activity, product_price: float, fertilizer_price: float = 0.0) -> float:
    """Revenue plus per-ha subsidy minus operating costs, per ha.

    Fertilizer with a known quantity is costed at ``fertilizer_price``;
    otherwise its recorded per-ha expenditure is used as is.
    """
    if activity.yield_ < 0 or product_price < 0:
        raise ValueError("negative revenue component")
    fert = activity.fertilizer_qty * fertilizer_price if activity.fertilizer_qty > 0 else 0.0
    return (activity.yield_ * product_price + activity.production_subsidy
            - fixed_cost_per_ha(activity) - fert)


def base_regimes(household: Household, model: Model, activity_ids) -> dict[str, str]:
    """Market regimes used for calibration: seller unless consumption exceeds output."""
    q: dict[str, float] = defaultdict(float)
    for a in activity_ids:
        q[model.activities[a].product] += model.activities[a].yield_ * household.observed_levels.get(a, 0.0)
    out = {}
    for p in sorted(set(q) | {p for p, c in household.observed_consumption.items() if c > 0}):
        out[p] = BUYER if household.observed_consumption.get(p, 0.0) > q.get(p, 0.0) else SELLER
    return out


def base_tranche(household: Household, model: Model, policy: SubsidyPolicy, activity_ids) -> str:
    """Fertilizer tranche the household is on at its observed levels."""
    if len(tranche_pieces(household, _zero_shell(activity_ids), model, policy)) == 1:
        return "none"
    used = sum(model.activities[a].fertilizer_qty * x for a, x in household.observed_levels.items()
               if model.activities[a].subsidy_eligible_fertilizer)
    return "below" if used <= policy.quota_kg else "above"


@dataclass(frozen=True)
class _Shell:
    """Minimal calibration stand-in used to assemble constraint matrices."""
    activity_ids: tuple
    behavioral: BehavioralFunction
    margin_adjust: dict = field(default_factory=dict)
    les: tuple | None = None


def _zero_shell(ids) -> _Shell:
    return _Shell(tuple(ids), BehavioralFunction({a: 0.0 for a in ids}, {}))


def _resource_rows(inst):
    keep = [i for i, n in enumerate(inst.ineq_names) if not n.startswith("nonneg:")]
    return [inst.ineq_names[i] for i in keep], inst.G[keep], inst.h[keep]


def stage1_duals(household: Household, model: Model, policy: SubsidyPolicy,
                 prices: PriceSystem | None = None, eps: float = STAGE1_EPS):
    """Resource shadow values from the calibration-bounded linear program.

    Returns ``(duals, gross_margins)``.  Duals of constraints that are slack
    at the observed levels are zero.
    """
    ids = tuple(a for a, x in sorted(household.observed_levels.items()) if x > 0)
    if not ids:
        raise CalibrationError(f"household {household.id}: no observed activity")
    regimes = base_regimes(household, model, ids)
    tranche = base_tranche(household, model, policy, ids)
    inst = build_problem(household, _zero_shell(ids), model, policy, regimes, tranche=tranche,
                         prices=prices)
    gm = {a: float(v) for a, v in zip(ids, inst.lin)}
    names, G, h = _resource_rows(inst)
    x0 = np.array([household.observed_levels[a] for a in ids])
    if inst.E.shape[0]:
        raise CalibrationError(f"household {household.id}: autarky rows in calibration problem")
    if G.shape[0] and np.any(G @ x0 > h + 1e-9 * np.maximum(1.0, np.abs(h))):
        bad = [n for n, v, r in zip(names, G @ x0, h) if v > r + 1e-9 * max(1.0, abs(r))]
        raise CalibrationError(f"household {household.id}: observed levels violate {', '.join(bad)}")
    if not G.shape[0]:
        return {}, gm
    res = linprog(-inst.lin, A_ub=G, b_ub=h, bounds=[(0.0, x * (1.0 + eps)) for x in x0],
                  method="highs")
    if res.status != 0:
        raise CalibrationError(f"household {household.id}: stage-1 LP failed ({res.message})")
    rho = -np.asarray(res.ineqlin.marginals)
    slack = h - G @ x0
    duals = {}
    for n, r, s, hv in zip(names, rho, slack, h):
        binding = abs(s) <= 1e-9 * max(1.0, abs(hv))
        duals[n] = float(max(r, 0.0)) if binding else 0.0
    return duals, gm


# ------------------------------------------------------------ elasticities

class _PieceSolver:
    """Solves the household problem for fixed regimes over all tranche pieces.

    The constraint matrices do not depend on the revenue perturbations used
    for elasticities, so they are assembled once per (d, Q) candidate.
    """

    def __init__(self, household, calib, model, policy, regimes, prices, pieces):
        self.pieces = []
        for piece in pieces:
            inst = build_problem(household, calib, model, policy, regimes, tranche=piece, prices=prices)
            rev = np.array([model.activities[a].yield_ * inst.product_prices.get(model.activities[a].product, 0.0)
                            for a in inst.var_ids])
            self.pieces.append((inst, rev))
        self.ids = self.pieces[0][0].var_ids

    def solve(self, scale: Mapping[int, float] | None = None) -> np.ndarray | None:
        best, best_obj = None, -math.inf
        for inst, rev in self.pieces:
            lin = inst.lin.copy()
            for i, f in (scale or {}).items():
                lin[i] += (f - 1.0) * rev[i]
            if inst.infeasible_reason:
                continue
            res = solve_dense_qp(inst.H, lin, inst.G, inst.h, inst.E, inst.e)
            if res.status != OPTIMAL:
                continue
            obj = res.objective + inst.constant
            if obj > best_obj + 1e-9 * max(1.0, abs(obj)):
                best, best_obj = res.x, obj
        return best


def finite_difference_elasticities(solver: _PieceSolver, observed: Mapping[str, float],
                                   step: float = PRICE_STEP) -> dict[str, float]:
    """Own-price supply elasticity of each observed activity (central differences)."""
    out = {}
    for i, a in enumerate(solver.ids):
        x0 = observed.get(a, 0.0)
        if x0 <= 0:
            continue
        up = solver.solve({i: 1.0 + step})
        dn = solver.solve({i: 1.0 - step})
        if up is None or dn is None:
            out[a] = math.nan
            continue
        out[a] = float((up[i] - dn[i]) / (2.0 * step * x0))
    return out


def corner_activities(G_active: np.ndarray, ids) -> dict[str, bool]:
    """An activity is at a corner when binding constraints pin its level.

    That is the case exactly when its unit vector lies in the row space of
    the binding constraint rows.
    """
    n = len(ids)
    out = {}
    if G_active.shape[0] == 0:
        return {a: False for a in ids}
    rank = np.linalg.matrix_rank(G_active)
    for i, a in enumerate(ids):
        e = np.zeros(n)
        e[i] = 1.0
        out[a] = bool(np.linalg.matrix_rank(np.vstack([G_active, e])) == rank)
    return out


# ------------------------------------------------------------ calibration core

def _linear_terms(ids, gm, q, x0, duals, cols, adjust=None, group_gm=None):
    """d from exact first-order conditions; alternatives sit exactly at zero."""
    d = {}
    for a in ids:
        arho = sum(cols[a].get(n, 0.0) * r for n, r in duals.items())
        if x0.get(a, 0.0) > 0:
            d[a] = gm[a] - q[a] * x0[a] - arho
        else:
            d[a] = group_gm[a] - arho
    return d


def _columns(inst) -> dict[str, dict[str, float]]:
    names, G, _ = _resource_rows(inst)
    return {a: {n: float(G[r, j]) for r, n in enumerate(names)} for j, a in enumerate(inst.var_ids)}


def calibrate_household(household: Household, model: Model, policy: SubsidyPolicy,
                        targets: ElasticityTargets = ElasticityTargets(), *,
                        alternatives: Mapping[str, GroupStat] | None = None,
                        q_start: Mapping[str, float] | None = None,
                        prices: PriceSystem | None = None, max_iter: int = MAX_ITER,
                        tol: float = ELASTICITY_TOL, check: bool = True) -> CalibrationResult:
    """Calibrate one household; see the module docstring for the scheme."""
    prices = model.prices if prices is None else prices
    duals, gm = stage1_duals(household, model, policy, prices)
    observed = {a: x for a, x in sorted(household.observed_levels.items()) if x > 0}
    alternatives = dict(alternatives or {})
    alt_ids = tuple(sorted(a for a in alternatives if a not in observed
                           and household.land(model.activities[a].season) > 0))
    ids = tuple(sorted(observed)) + alt_ids
    regimes = base_regimes(household, model, ids)
    tranche = base_tranche(household, model, policy, ids)
    pieces = ("none",) if tranche == "none" else ("below", "above")

    shell_inst = build_problem(household, _zero_shell(ids), model, policy, regimes,
                               tranche=tranche, prices=prices)
    cols = _columns(shell_inst)
    own_gm = {a: float(v) for a, v in zip(ids, shell_inst.lin)}
    group_gm = {a: alternatives[a].gross_margin for a in alt_ids}
    adjust = {a: group_gm[a] - own_gm[a] for a in alt_ids}

    target = {a: targets.get(model.activities[a].product) for a in observed}
    q, bounds = {}, {}
    for a, x in observed.items():
        rev = model.activities[a].yield_ * shell_inst.product_prices[model.activities[a].product]
        seed = rev / (target[a] * x) if rev > 0 else max(abs(gm[a]), 1.0) / x
        bounds[a] = (seed / Q_RANGE, seed * Q_RANGE)
        q[a] = float(q_start[a]) if q_start and a in q_start else seed
    for a in alt_ids:
        q[a] = max(alternatives[a].q_diag, 1e-9)

    names, G, h = _resource_rows(shell_inst)
    x_full = np.array([observed.get(a, 0.0) for a in ids])
    binding = [i for i in range(G.shape[0]) if abs(h[i] - G[i] @ x_full) <= 1e-9 * max(1.0, abs(h[i]))]
    G_active = G[binding]
    zero_rows = np.eye(len(ids))[[i for i, a in enumerate(ids) if a not in observed]]
    corner = corner_activities(np.vstack([G_active, zero_rows]) if zero_rows.size else G_active, ids)
    corner = {a: corner[a] for a in observed}

    def make(qd):
        d = _linear_terms(ids, gm, qd, observed, duals, cols, adjust, group_gm)
        beh = BehavioralFunction(d, {(a, a): qd[a] for a in ids})
        return _Shell(ids, beh, adjust)

    best = None
    diags = []
    it = 0
    eps_sim: dict[str, float] = {}
    for it in range(1, max_iter + 1):
        shell = make(q)
        solver = _PieceSolver(household, shell, model, policy, regimes, prices, pieces)
        eps_sim = finite_difference_elasticities(solver, observed)
        devs = [abs(eps_sim[a] / target[a] - 1.0) for a in observed
                if not corner[a] and math.isfinite(eps_sim.get(a, math.nan))]
        worst = max(devs, default=0.0)
        if best is None or worst < best[0]:
            best = (worst, dict(q), dict(eps_sim), it)
        if worst <= tol or it - best[3] >= STALL_ITER:
            break
        for a in observed:
            e = eps_sim.get(a, math.nan)
            if corner[a] or not math.isfinite(e) or e <= 1e-12:
                continue
            lo, hi = bounds[a]
            q[a] = min(max(q[a] * e / target[a], lo), hi)
    worst, q, eps_sim, it_best = best
    converged = worst <= tol
    if not converged:
        diags.append(f"elasticity fixed point stopped at max relative deviation {worst:.3g}")
    shell = make(q)
    result = CalibrationResult(
        household=household.id, activity_ids=ids, behavioral=shell.behavioral,
        margin_adjust=adjust, duals=duals, observed=observed,
        gross_margin={**{a: gm[a] for a in observed}, **group_gm}, alternatives=alt_ids,
        target=target, elasticity=eps_sim, corner=corner, converged=converged,
        iterations=it_best, diagnostics=tuple(diags))
    if check:
        result = replace(result, residual=calibration_residuals(household, result, model, policy, prices))
    return result


def reanchor(household: Household, calib: CalibrationResult, model: Model, policy: SubsidyPolicy,
             factors: Mapping[str, float]) -> CalibrationResult:
    """Carry a calibration to new prices and costs.

    Q and the alternatives' group margins are multiplied by the activity's
    ``factors`` entry; d is then re-derived from the first-order conditions
    under ``model`` so that the observed crop mix stays the optimum.
    """
    duals, gm = stage1_duals(household, model, policy)
    ids = calib.activity_ids
    regimes = base_regimes(household, model, ids)
    tranche = base_tranche(household, model, policy, ids)
    inst = build_problem(household, _zero_shell(ids), model, policy, regimes, tranche=tranche)
    own_gm = {a: float(v) for a, v in zip(ids, inst.lin)}
    alt = set(calib.alternatives)
    group_gm = {a: calib.gross_margin[a] * factors.get(a, 1.0) for a in ids if a in alt}
    adjust = {a: group_gm[a] - own_gm[a] for a in group_gm}
    q = {a: calib.behavioral.q_diag(a) * factors.get(a, 1.0) for a in ids}
    d = _linear_terms(ids, gm, q, calib.observed, duals, _columns(inst), adjust, group_gm)
    return replace(calib, behavioral=BehavioralFunction(d, {(a, a): q[a] for a in ids}),
                   margin_adjust=adjust, duals=duals,
                   gross_margin={**{a: gm[a] for a in calib.observed}, **group_gm})


def calibration_residuals(household: Household, calib: CalibrationResult, model: Model,
                          policy: SubsidyPolicy, prices: PriceSystem | None = None) -> dict[str, float]:
    """Relative deviation of the re-solved base year from the observed levels.

    Alternatives are measured relative to the household's total observed area.
    """
    sol, _ = solve_household(household, calib, model, policy, prices=prices)
    total = sum(calib.observed.values())
    out = {}
    for a in calib.activity_ids:
        x0 = calib.observed.get(a, 0.0)
        x = sol.levels.get(a, 0.0)
        out[a] = abs(x - x0) / (x0 if x0 > 0 else total)
    return out


# ------------------------------------------------------------ groups

def group_statistics(results: Mapping[str, CalibrationResult], groups: Mapping[str, tuple]):
    """Unweighted mean gross margin and Q diagonal per (group, activity)."""
    acc: dict[tuple, list] = defaultdict(list)
    for hid in sorted(results):
        r = results[hid]
        for a in r.observed:
            acc[(groups[hid], a)].append((r.gross_margin[a], r.behavioral.q_diag(a)))
    return {k: GroupStat(float(np.mean([v[0] for v in vals])), float(np.mean([v[1] for v in vals])),
                         len(vals)) for k, vals in sorted(acc.items())}


def alternatives_for(group, stats: Mapping[tuple, GroupStat]) -> dict[str, GroupStat]:
    return {a: s for (g, a), s in stats.items() if g == group}


@dataclass
class CalibrationSet:
    results: dict
    group_stats: dict
    groups: dict
    diagnostics: list


def _calibrate_chunk(args):
    households, model, policy, targets, stats, groups, q_start, attach = args
    out = []
    for h in households:
        try:
            alts = alternatives_for(groups[h.id], stats) if attach else None
            r = calibrate_household(h, model, policy, targets, alternatives=alts,
                                    q_start=(q_start or {}).get(h.id), check=attach)
            out.append((h.id, r, None))
        except (CalibrationError, QPError, ValueError) as exc:
            out.append((h.id, None, str(exc)))
    return out


def _run(hs, model, policy, targets, stats, groups, q_start, attach, jobs):
    light = replace(model, households=())
    if jobs <= 1 or len(hs) < 2:
        return _calibrate_chunk((hs, light, policy, targets, stats, groups, q_start, attach))
    size = max(1, math.ceil(len(hs) / (jobs * 4)))
    tasks = [(hs[i:i + size], light, policy, targets, stats, groups, q_start, attach)
             for i in range(0, len(hs), size)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return [r for part in pool.map(_calibrate_chunk, tasks) for r in part]


def calibrate_all(model: Model, targets: ElasticityTargets = ElasticityTargets(), *,
                  groups: Mapping[str, tuple] | None = None, policy: SubsidyPolicy | None = None,
                  attach: bool = True, jobs: int = 1) -> CalibrationSet:
    """Two-pass calibration of every household.

    The first pass calibrates households on their own activities and yields
    the group statistics; the second attaches group alternatives and
    re-runs the elasticity fixed point, starting from the first-pass Q.
    """
    policy = model.base_policy() if policy is None else policy
    hs = sorted(model.households, key=lambda h: h.id)
    groups = dict(groups) if groups is not None else {h.id: (h.region,) for h in hs}
    diags: list[Diagnostic] = []
    first = {}
    for hid, r, err in _run(hs, model, policy, targets, {}, groups, None, False, jobs):
        if err is None:
            first[hid] = r
        else:
            diags.append(Diagnostic(hid, err))
    stats = group_statistics(first, groups)
    if not attach:
        results = {hid: replace(r, residual=calibration_residuals(model.household(hid), r, model, policy))
                   for hid, r in first.items()}
        return CalibrationSet(results, stats, groups, diags)
    q_start = {hid: {a: r.behavioral.q_diag(a) for a in r.observed} for hid, r in first.items()}
    ok = [h for h in hs if h.id in first]
    results = {}
    for hid, r, err in _run(ok, model, policy, targets, stats, groups, q_start, True, jobs):
        if err is None:
            results[hid] = r
            diags.extend(Diagnostic(hid, m) for m in r.diagnostics)
        else:
            diags.append(Diagnostic(hid, err))
    return CalibrationSet(results, stats, groups, diags)


# ------------------------------------------------------------ LES

def estimate_les(consumption: Mapping[str, float], prices: Mapping[str, float],
                 priors: tuple[Mapping[str, float], Mapping[str, float]],
                 income: float | None = None, sigma_frac: float = 0.2):
    """Prior-anchored estimate of linear expenditure system parameters.

    The marginal budget shares are eliminated through the demand equations,
    ``beta_j = (c_j - gamma_j) p_j / (M - sum(gamma p))``, so the observed
    consumption is reproduced exactly and the shares sum to one; the
    committed quantities are then chosen in ``[0, c]`` to stay closest to the
    priors in prior-standard-deviation units.  ``income`` (the consumption
    budget M) must equal observed expenditure when given.
    """
    goods = sorted(consumption)
    if not goods:
        raise ValueError("no consumption observed")
    c = np.array([float(consumption[j]) for j in goods])
    p = np.array([float(prices[j]) for j in goods])
    if np.any(c < 0) or np.any(p <= 0):
        raise ValueError("consumption must be >= 0 and prices > 0")
    beta0 = np.array([float(priors[0].get(j, 0.0)) for j in goods])
    gamma0 = np.array([float(priors[1].get(j, 0.0)) for j in goods])
    budget = float(c @ p)
    if income is not None and abs(income - budget) > 1e-9 * max(1.0, budget):
        raise ValueError(f"income {income:g} differs from observed expenditure {budget:g}")
    if np.any(gamma0 > c * (1 + 1e-12)):
        raise ValueError("prior committed quantities exceed observed consumption")
    if len(goods) == 1:
        g = float(np.clip(gamma0[0], 0.0, c[0]))
        return {goods[0]: 1.0}, {goods[0]: g}

    sb = np.maximum(sigma_frac * np.abs(beta0), 1e-3)
    sg = np.maximum(sigma_frac * np.abs(gamma0), 1e-3 * np.maximum(c, 1e-9))

    def beta_of(g):
        free = c * p - g * p
        return free / free.sum()

    def loss(g):
        return float((((beta_of(g) - beta0) / sb) ** 2).sum() + (((g - gamma0) / sg) ** 2).sum())

    upper = c * (1.0 - 1e-9)
    start = np.clip(gamma0, 0.0, upper)
    res = minimize(loss, start, method="L-BFGS-B", bounds=list(zip(np.zeros_like(c), upper)),
                   options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 1000})
    g = np.clip(res.x if loss(res.x) <= loss(start) else start, 0.0, upper)
    b = beta_of(g)
    b = b / b.sum()
    return dict(zip(goods, map(float, b))), dict(zip(goods, map(float, g)))


# ------------------------------------------------------------ files

_CAL_COLS = ["household", "activity", "kind", "observed_level", "d", "q", "margin_adjust",
             "gross_margin", "target", "elasticity", "corner", "residual"]


def write_calibration(cset: CalibrationSet, directory) -> None:
    """Persist a calibration so that later stages can reload it exactly."""
    from pathlib import Path

    from .core import write_csv
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    res = cset.results
    ids = sorted(res)

    def rows():
        for hid in ids:
            r = res[hid]
            for a in r.activity_ids:
                alt = a in r.alternatives
                yield [hid, a, "alternative" if alt else "observed", float(r.observed.get(a, 0.0)),
                       float(r.behavioral.d[a]), r.behavioral.q_diag(a),
                       float(r.margin_adjust.get(a, 0.0)), float(r.gross_margin.get(a, 0.0)),
                       float(r.target.get(a, math.nan)), float(r.elasticity.get(a, math.nan)),
                       bool(r.corner.get(a, False)), float(r.residual.get(a, math.nan))]

    write_csv(directory / "calibration.csv", _CAL_COLS, rows())
    write_csv(directory / "duals.csv", ["household", "constraint", "dual"], (
        [hid, n, float(v)] for hid in ids for n, v in sorted(res[hid].duals.items())))
    write_csv(directory / "status.csv", ["household", "converged", "iterations", "max_residual",
                                         "diagnostics"], (
        [hid, res[hid].converged, res[hid].iterations, float(res[hid].max_residual),
         " | ".join(res[hid].diagnostics)] for hid in ids))
    write_csv(directory / "les.csv", ["household", "product", "beta", "gamma"], (
        [hid, p, float(res[hid].les[0][p]), float(res[hid].les[1].get(p, 0.0))]
        for hid in ids if res[hid].les for p in sorted(res[hid].les[0])))
    write_csv(directory / "groups.csv", ["household", "group"], (
        [hid, "|".join(cset.groups[hid])] for hid in sorted(cset.groups)))
    write_csv(directory / "group_stats.csv", ["group", "activity", "gross_margin", "q_diag", "count"], (
        ["|".join(g), a, s.gross_margin, s.q_diag, s.count] for (g, a), s in sorted(cset.group_stats.items())))
    write_csv(directory / "failures.csv", ["subject", "message"], (
        [d.subject, d.message] for d in cset.diagnostics))


def read_calibration(directory) -> CalibrationSet:
    from pathlib import Path

    from .core import read_csv
    directory = Path(directory)
    per: dict[str, list] = defaultdict(list)
    for r in read_csv(directory / "calibration.csv", _CAL_COLS):
        per[r["household"]].append(r)
    duals: dict[str, dict] = defaultdict(dict)
    for r in read_csv(directory / "duals.csv", ["household", "constraint", "dual"]):
        duals[r["household"]][r["constraint"]] = float(r["dual"])
    status = {r["household"]: r for r in read_csv(directory / "status.csv", ["household", "converged"])}
    les: dict[str, tuple] = {}
    if (directory / "les.csv").exists():
        for r in read_csv(directory / "les.csv", ["household", "product", "beta", "gamma"]):
            b, g = les.setdefault(r["household"], ({}, {}))
            b[r["product"]] = float(r["beta"])
            g[r["product"]] = float(r["gamma"])
    results = {}
    for hid, rows in per.items():
        ids = tuple(r["activity"] for r in rows)
        obs = {r["activity"]: float(r["observed_level"]) for r in rows if r["kind"] == "observed"}
        st = status.get(hid, {})
        diags = tuple(x for x in st.get("diagnostics", "").split(" | ") if x)
        results[hid] = CalibrationResult(
            household=hid, activity_ids=ids,
            behavioral=BehavioralFunction({r["activity"]: float(r["d"]) for r in rows},
                                          {(r["activity"], r["activity"]): float(r["q"]) for r in rows}),
            margin_adjust={r["activity"]: float(r["margin_adjust"]) for r in rows if r["kind"] == "alternative"},
            duals=dict(duals.get(hid, {})), observed=obs,
            gross_margin={r["activity"]: float(r["gross_margin"]) for r in rows},
            alternatives=tuple(r["activity"] for r in rows if r["kind"] == "alternative"),
            target={a: float(r["target"]) for r in rows for a in (r["activity"],) if a in obs},
            elasticity={a: float(r["elasticity"]) for r in rows for a in (r["activity"],) if a in obs},
            corner={a: r["corner"] == "1" for r in rows for a in (r["activity"],) if a in obs},
            residual={r["activity"]: float(r["residual"]) for r in rows},
            converged=st.get("converged", "1") == "1", iterations=int(st.get("iterations", 0) or 0),
            diagnostics=diags, les=les.get(hid))
    groups = {r["household"]: tuple(r["group"].split("|"))
              for r in read_csv(directory / "groups.csv", ["household", "group"])}
    stats = {(tuple(r["group"].split("|")), r["activity"]):
             GroupStat(float(r["gross_margin"]), float(r["q_diag"]), int(r["count"]))
             for r in read_csv(directory / "group_stats.csv", ["group", "activity"])}
    diags = [Diagnostic(r["subject"], r["message"])
             for r in read_csv(directory / "failures.csv", ["subject", "message"])]
    return CalibrationSet(results, stats, groups, diags)
