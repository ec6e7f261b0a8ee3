"""Per-household optimization: problem construction, solve, regime choice.

Each household maximizes its income (gross margins net of the calibrated
behavioral cost, plus exogenous income) subject to seasonal land and labor
balances, a cash constraint on input purchases, and product balances.  Two
piecewise-linear features are handled by enumeration over convex pieces, each
of which is a strictly concave QP:

* market regimes per product (seller / buyer / autarky), which fix the price
  band side and the sign of the net market position;
* the subsidized fertilizer tranche: below the quota every eligible kilogram
  is bought at the subsidized price, above it the quota is exhausted and the
  marginal kilogram is bought at the market price.

The income function is concave across pieces, so the best piece is the
global optimum.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import Household, Model, PriceSystem, Solution, SubsidyPolicy
from .qp import OPTIMAL, STATUS_NAMES, KKTReport, QPError, solve_dense_qp

log = logging.getLogger(__name__)

SELLER, BUYER, AUTARKY = "seller", "buyer", "autarky"
# tie-break order: autarky, then seller, then buyer
_REGIME_RANK = {AUTARKY: 0, SELLER: 1, BUYER: 2}
MAX_ENUMERATED_PRODUCTS = 6
BALANCE_TOL = 1e-8


class InfeasibleHousehold(RuntimeError):
    pass


@dataclass(frozen=True)
class ProblemInstance:
    household: str
    var_ids: tuple
    H: np.ndarray
    lin: np.ndarray
    G: np.ndarray
    h: np.ndarray
    E: np.ndarray
    e: np.ndarray
    ineq_names: tuple
    eq_names: tuple
    constant: float
    regimes: dict
    tranche: str
    consumption: dict
    consumption_enabled: bool = False
    infeasible_reason: str | None = None
    # data needed to turn x back into a Solution
    yields: np.ndarray = field(default=None, repr=False)
    products: tuple = ()
    fert_qty: np.ndarray = field(default=None, repr=False)
    fert_qty_eligible: np.ndarray = field(default=None, repr=False)
    fixed_cost: np.ndarray = field(default=None, repr=False)
    prod_subsidy: np.ndarray = field(default=None, repr=False)
    behav_lin: np.ndarray = field(default=None, repr=False)
    product_prices: dict = field(default_factory=dict)
    fert_price: float = 0.0
    rate: float = 0.0
    quota: float = 0.0
    exog_income: float = 0.0

    @property
    def n(self) -> int:
        return len(self.var_ids)


@dataclass(frozen=True)
class BalanceReport:
    complementarity: float  # max s*b
    balance: float  # max |q + b - s - c| and |c - cs - b|, relative
    price_band: float  # max distance of internal price outside its band, relative


def apply_quota(demand_kg: float, policy: SubsidyPolicy, household: Household,
                market_price: float) -> tuple[float, float, float]:
    """Split fertilizer demand into subsidized and market tranches."""
    if demand_kg < 0:
        raise ValueError("fertilizer demand must be >= 0")
    quota = policy.effective_quota(household)
    sub = min(demand_kg, quota)
    unsub = demand_kg - sub
    cost = sub * (1.0 - policy.rate) * market_price + unsub * market_price
    return sub, unsub, cost


def fixed_cost_per_ha(activity) -> float:
    """Per-ha input cost other than quantity-priced fertilizer."""
    c = activity.nonfertilizer_cost()
    if activity.fertilizer_qty <= 0:
        c += activity.cost("fertilizer")
    return c


def household_products(household: Household, calibration, model: Model) -> list[str]:
    prods = {model.activities[a].product for a in calibration.activity_ids}
    prods.update(p for p, c in household.observed_consumption.items() if c > 0)
    return sorted(prods)


def build_problem(household: Household, calibration, model: Model, policy: SubsidyPolicy,
                  regimes: Mapping[str, str], *, tranche: str = "none",
                  prices: PriceSystem | None = None, consumption: Mapping[str, float] | None = None,
                  revenue_scale: Mapping[str, float] | None = None,
                  consumption_enabled: bool = False) -> ProblemInstance:
    """Assemble one convex piece of the household problem.

    ``tranche`` is ``"none"`` (no subsidized fertilizer), ``"below"``
    (eligible fertilizer at or below the quota) or ``"above"`` (quota
    exhausted).  ``consumption`` fixes committed consumption per product;
    it defaults to the household's observed consumption.
    """
    prices = model.prices if prices is None else prices
    consumption = dict(household.observed_consumption if consumption is None else consumption)
    revenue_scale = revenue_scale or {}
    ids = tuple(calibration.activity_ids)
    acts = [model.activities[a] for a in ids]
    n = len(ids)
    beh = calibration.behavioral
    adjust = getattr(calibration, "margin_adjust", {}) or {}

    prods = household_products(household, calibration, model)
    for p in prods:
        if p not in regimes:
            raise ValueError(f"household {household.id}: no market regime assigned for {p!r}")

    pf = prices.fertilizer_market_price
    rate = policy.rate if policy.eligible(household) else 0.0
    quota = policy.effective_quota(household) if rate > 0 else 0.0
    if tranche != "none" and rate <= 0:
        raise ValueError("subsidy tranche requested for an ineligible household")

    yields = np.array([a.yield_ for a in acts], dtype=float)
    fq = np.array([a.fertilizer_qty for a in acts], dtype=float)
    fq_el = np.array([a.fertilizer_qty if a.subsidy_eligible_fertilizer else 0.0 for a in acts])
    fixed = np.array([fixed_cost_per_ha(a) for a in acts], dtype=float)
    sb = np.array([a.production_subsidy for a in acts], dtype=float)
    cash_unit = np.array([a.cash_cost() for a in acts], dtype=float)
    d = np.array([beh.d.get(a, 0.0) for a in ids], dtype=float)
    adj = np.array([adjust.get(a, 0.0) for a in ids], dtype=float)
    H = np.zeros((n, n))
    for i, ai in enumerate(ids):
        for j, aj in enumerate(ids):
            H[i, j] = beh.Q.get((ai, aj), 0.0)

    fert_unit = fq * pf
    constant = household.exog_income
    if tranche == "below":
        fert_unit = fq_el * (1.0 - rate) * pf + (fq - fq_el) * pf
    elif tranche == "above":
        constant += rate * pf * quota

    prod_price = {}
    rev = np.zeros(n)
    for p in prods:
        reg = regimes[p]
        c = consumption.get(p, 0.0)
        if reg == SELLER:
            prod_price[p] = prices.sell_price(p)
            constant -= prod_price[p] * c
        elif reg == BUYER:
            prod_price[p] = prices.buy_price(p)
            constant -= prod_price[p] * c
        elif reg != AUTARKY:
            raise ValueError(f"unknown regime {reg!r}")
    for i, a in enumerate(acts):
        if regimes[a.product] != AUTARKY:
            rev[i] = a.yield_ * prod_price[a.product] * revenue_scale.get(a.id, 1.0)

    lin = rev + sb - fixed - fert_unit + adj - d

    rows, rhs, names = [], [], []
    for season in sorted({a.season for a in acts}):
        mask = np.array([1.0 if a.season == season else 0.0 for a in acts])
        rows.append(mask)
        rhs.append(household.land(season))
        names.append(f"land:{season}")
        lab = mask * np.array([a.labor_req for a in acts])
        cap = household.labor(season)
        if math.isfinite(cap) and lab.any():
            rows.append(lab)
            rhs.append(cap)
            names.append(f"labor:{season}")
    cash_row = cash_unit + fert_unit
    if cash_row.any():
        rows.append(cash_row)
        rhs.append(household.cash_endowment + (rate * pf * quota if tranche == "above" else 0.0))
        names.append("cash")
    if tranche == "below":
        rows.append(fq_el.copy())
        rhs.append(quota)
        names.append("quota")
    elif tranche == "above":
        rows.append(-fq_el)
        rhs.append(-quota)
        names.append("quota_floor")

    eq_rows, eq_rhs, eq_names = [], [], []
    reason = None
    for p in prods:
        c = consumption.get(p, 0.0)
        prow = np.array([a.yield_ if a.product == p else 0.0 for a in acts])
        reg = regimes[p]
        if reg == SELLER and c > 0:
            rows.append(-prow)
            rhs.append(-c)
            names.append(f"market:{p}")
        elif reg == BUYER and prow.any():
            rows.append(prow)
            rhs.append(c)
            names.append(f"market:{p}")
        elif reg == AUTARKY:
            if not prow.any() and c > 0:
                reason = f"autarky for {p} with no production possibility and consumption {c:g}"
            eq_rows.append(prow)
            eq_rhs.append(c)
            eq_names.append(f"autarky:{p}")
    for i, a in enumerate(ids):
        row = np.zeros(n)
        row[i] = -1.0
        rows.append(row)
        rhs.append(0.0)
        names.append(f"nonneg:{a}")

    G = np.array(rows).reshape(-1, n) if rows else np.zeros((0, n))
    E = np.array(eq_rows).reshape(-1, n) if eq_rows else np.zeros((0, n))
    return ProblemInstance(
        household=household.id, var_ids=ids, H=H, lin=lin, G=G, h=np.array(rhs, dtype=float),
        E=E, e=np.array(eq_rhs, dtype=float), ineq_names=tuple(names), eq_names=tuple(eq_names),
        constant=constant, regimes={p: regimes[p] for p in prods}, tranche=tranche,
        consumption=consumption, consumption_enabled=consumption_enabled,
        infeasible_reason=reason, yields=yields, products=tuple(a.product for a in acts),
        fert_qty=fq, fert_qty_eligible=fq_el, fixed_cost=fixed, prod_subsidy=sb,
        behav_lin=d - adj, product_prices=prod_price, fert_price=pf, rate=rate, quota=quota,
        exog_income=household.exog_income)


def solve_qp(instance: ProblemInstance) -> tuple[Solution, KKTReport]:
    """Solve one convex piece; raises ``QPError`` when it has no optimum."""
    if instance.infeasible_reason:
        raise QPError(1, instance.infeasible_reason)
    res = solve_dense_qp(instance.H, instance.lin, instance.G, instance.h, instance.E, instance.e)
    if res.status != OPTIMAL:
        raise QPError(res.status, f"household {instance.household}: {STATUS_NAMES[res.status]}")
    return _to_solution(instance, res), res.kkt


def _to_solution(inst: ProblemInstance, res) -> Solution:
    x = np.where(np.abs(res.x) < 1e-12, 0.0, res.x)
    x = np.maximum(x, 0.0)
    levels = {a: float(v) for a, v in zip(inst.var_ids, x)}
    prod = {}
    for p, y, v in zip(inst.products, inst.yields, x):
        prod[p] = prod.get(p, 0.0) + float(y * v)
    for p in inst.regimes:
        prod.setdefault(p, 0.0)

    sales, purchases, selfc, cons, pint = {}, {}, {}, {}, {}
    eq_dual = dict(zip(inst.eq_names, res.eq_duals))
    for p, reg in inst.regimes.items():
        q = prod[p]
        c = float(inst.consumption.get(p, 0.0))
        if reg == SELLER:
            s, b = max(q - c, 0.0), 0.0
            pint[p] = inst.product_prices[p]
        elif reg == BUYER:
            s, b = 0.0, max(c - q, 0.0)
            pint[p] = inst.product_prices[p]
        else:
            s, b = 0.0, 0.0
            pint[p] = -float(eq_dual[f"autarky:{p}"])
        sales[p], purchases[p] = s, b
        cons[p] = c
        selfc[p] = c - b

    F = float(inst.fert_qty @ x)
    F_el = float(inst.fert_qty_eligible @ x)
    sub = min(F_el, inst.quota) if inst.rate > 0 else 0.0
    if inst.tranche == "above":
        sub = inst.quota
    sub = max(0.0, min(sub, F_el))
    unsub = max(F - sub, 0.0)
    fert_cost = sub * (1.0 - inst.rate) * inst.fert_price + unsub * inst.fert_price

    revenue = sum((sales[p] + selfc[p]) * pint[p] for p in inst.regimes)
    behav = float(inst.behav_lin @ x + 0.5 * x @ inst.H @ x)
    total = (revenue + float(inst.prod_subsidy @ x) - float(inst.fixed_cost @ x) - fert_cost
             - behav + inst.exog_income)
    objective = float(inst.lin @ x - 0.5 * x @ inst.H @ x) + inst.constant

    duals = {}
    binding = []
    slack = inst.h - inst.G @ x if inst.G.shape[0] else np.zeros(0)
    for name, lam, sl, row_h in zip(inst.ineq_names, res.ineq_duals, slack, inst.h):
        if name.startswith("nonneg:"):
            continue
        duals[name] = float(max(lam, 0.0))
        if abs(sl) <= 1e-9 * max(1.0, abs(row_h)):
            binding.append(name)
    for name, mu in zip(inst.eq_names, res.eq_duals):
        duals[name] = float(mu)
        binding.append(name)

    return Solution(
        household=inst.household, levels=levels, sales=sales, purchases=purchases,
        self_consumed=selfc, consumed=cons, internal_price=pint,
        fertilizer_subsidized_kg=float(sub), fertilizer_unsubsidized_kg=float(unsub),
        duals=duals, regime=dict(inst.regimes), farm_income=total - inst.exog_income,
        total_income=total, subsidy_outlay=float(inst.rate * inst.fert_price * sub),
        objective=objective, binding=tuple(binding), production=prod)


def check_balances(sol: Solution, prices: PriceSystem) -> BalanceReport:
    comp = bal = band = 0.0
    for p, reg in sol.regime.items():
        s, b = sol.sales[p], sol.purchases[p]
        c, cs, q = sol.consumed[p], sol.self_consumed[p], sol.production.get(p, 0.0)
        scale = max(1.0, q, c)
        comp = max(comp, s * b / scale ** 2)
        bal = max(bal, abs(q + b - s - c) / scale, abs(c - cs - b) / scale)
        lo, hi = prices.sell_price(p), prices.buy_price(p)
        ph = sol.internal_price[p]
        pm = max(prices.market_price[p], 1e-12)
        band = max(band, max(lo - ph, ph - hi, 0.0) / pm)
    return BalanceReport(comp, bal, band)


def _base_regime(household: Household, calibration, model: Model, p: str) -> str:
    q = sum(model.activities[a].yield_ * household.observed_levels.get(a, 0.0)
            for a in calibration.activity_ids if model.activities[a].product == p)
    c = household.observed_consumption.get(p, 0.0)
    if q > c:
        return SELLER
    if q < c:
        return BUYER
    return AUTARKY


def regime_candidates(household: Household, calibration, model: Model):
    """Fixed regimes plus the list of products whose regime must be searched."""
    produced = {model.activities[a].product for a in calibration.activity_ids}
    fixed, free = {}, []
    for p in household_products(household, calibration, model):
        c = household.observed_consumption.get(p, 0.0)
        tradable = model.products[p].tradable if p in model.products else True
        if not tradable:
            fixed[p] = AUTARKY
        elif c <= 0:
            fixed[p] = SELLER
        elif p not in produced:
            fixed[p] = BUYER
        else:
            free.append(p)
    return fixed, free


def tranche_pieces(household: Household, calibration, model: Model, policy: SubsidyPolicy):
    if not policy.eligible(household):
        return ("none",)
    if not any(model.activities[a].fertilizer_qty > 0 and model.activities[a].subsidy_eligible_fertilizer
               for a in calibration.activity_ids):
        return ("none",)
    return ("below", "above")


@dataclass
class _Best:
    sol: Solution | None = None
    kkt: KKTReport | None = None
    key: tuple | None = None


def _better(obj: float, key: tuple, best: _Best) -> bool:
    if best.sol is None:
        return True
    ref = best.sol.objective
    tol = 1e-9 * max(1.0, abs(obj), abs(ref))
    if obj > ref + tol:
        return True
    if obj < ref - tol:
        return False
    return key < best.key


def _solve_fixed_consumption(household, calibration, model, policy, prices, consumption,
                             revenue_scale):
    fixed, free = regime_candidates(household, calibration, model)
    pieces = tranche_pieces(household, calibration, model, policy)
    best = _Best()
    evaluated = {}

    def evaluate(assign):
        key_r = tuple(_REGIME_RANK[assign[p]] for p in free)
        if key_r in evaluated:
            return evaluated[key_r]
        out = None
        for k, piece in enumerate(pieces):
            inst = build_problem(household, calibration, model, policy, assign, tranche=piece,
                                 prices=prices, consumption=consumption,
                                 revenue_scale=revenue_scale)
            try:
                sol, kkt = solve_qp(inst)
            except QPError as exc:
                if exc.status != 1:
                    raise
                continue
            key = key_r + (k,)
            if _better(sol.objective, key, best):
                best.sol, best.kkt, best.key = sol, kkt, key
            if out is None or sol.objective > out:
                out = sol.objective
        evaluated[key_r] = out
        return out

    if len(free) <= MAX_ENUMERATED_PRODUCTS:
        for combo in itertools.product((AUTARKY, SELLER, BUYER), repeat=len(free)):
            evaluate({**fixed, **dict(zip(free, combo))})
    else:
        current = {**fixed, **{p: _base_regime(household, calibration, model, p) for p in free}}
        cur_val = evaluate(current)
        improved = True
        while improved:
            improved = False
            for p in free:
                for reg in (AUTARKY, SELLER, BUYER):
                    if reg == current[p]:
                        continue
                    trial = {**current, p: reg}
                    val = evaluate(trial)
                    if val is not None and (cur_val is None or val > cur_val + 1e-9 * max(1.0, abs(val))):
                        current, cur_val, improved = trial, val, True
    if best.sol is None:
        raise InfeasibleHousehold(f"household {household.id}: every market regime is infeasible")
    return best.sol, best.kkt


def les_consumption(beta: Mapping[str, float], gamma: Mapping[str, float],
                    income: float, prices: Mapping[str, float]) -> dict:
    """Linear expenditure system demand at the given income and prices."""
    committed = sum(gamma[j] * prices[j] for j in beta)
    return {j: gamma[j] + beta[j] * (income - committed) / prices[j] for j in beta}


def solve_household(household: Household, calibration, model: Model, policy: SubsidyPolicy, *,
                    prices: PriceSystem | None = None, revenue_scale=None,
                    consumption_enabled: bool = False, max_les_iter: int = 200):
    """Best solution over market regimes and fertilizer tranches.

    Returns ``(Solution, KKTReport)``.  With ``consumption_enabled`` and LES
    parameters on the calibration, consumption is made consistent with income
    by damped fixed-point iteration on the demand system.
    """
    prices = model.prices if prices is None else prices
    if not calibration.activity_ids:
        sol = Solution(household=household.id, levels={}, sales={}, purchases={},
                       self_consumed={}, consumed={}, internal_price={},
                       fertilizer_subsidized_kg=0.0, fertilizer_unsubsidized_kg=0.0, duals={},
                       regime={}, farm_income=0.0, total_income=household.exog_income,
                       subsidy_outlay=0.0, objective=household.exog_income)
        return sol, KKTReport(0.0, 0.0, 0.0)

    les = getattr(calibration, "les", None)
    consumption = dict(household.observed_consumption)
    if not (consumption_enabled and les):
        return _solve_fixed_consumption(household, calibration, model, policy, prices,
                                        consumption, revenue_scale)

    beta, gamma = les
    for _ in range(max_les_iter):
        sol, kkt = _solve_fixed_consumption(household, calibration, model, policy, prices,
                                            consumption, revenue_scale)
        pj = {j: sol.internal_price.get(j, prices.market_price[j]) for j in beta}
        target = les_consumption(beta, gamma, sol.total_income, pj)
        new = {j: 0.5 * consumption.get(j, 0.0) + 0.5 * max(target[j], 0.0) for j in beta}
        delta = max(abs(new[j] - consumption.get(j, 0.0)) / max(1.0, new[j]) for j in beta)
        consumption.update(new)
        if delta < 1e-10:
            break
    else:
        log.warning("household %s: consumption fixed point did not converge", household.id)
    return _solve_fixed_consumption(household, calibration, model, policy, prices, consumption,
                                    revenue_scale)


@dataclass(frozen=True)
class SolveFailure:
    household: str
    message: str


def _solve_chunk(args):
    households, calibrations, model, policy, prices, consumption_enabled = args
    out = []
    for h in households:
        if h.id not in calibrations:
            out.append((h.id, None, None, "no calibration for household"))
            continue
        try:
            sol, kkt = solve_household(h, calibrations[h.id], model, policy, prices=prices,
                                       consumption_enabled=consumption_enabled)
            out.append((h.id, sol, kkt, None))
        except (QPError, InfeasibleHousehold, KeyError, ValueError) as exc:
            out.append((h.id, None, None, str(exc)))
    return out


def solve_all(households, calibrations: Mapping, model: Model, policy: SubsidyPolicy, *,
              prices: PriceSystem | None = None, jobs: int = 1, consumption_enabled: bool = False):
    """Solve every household independently.

    Returns ``(solutions, kkt_reports, failures)``; the first two are keyed by
    household id in sorted order.  Results do not depend on ``jobs``.
    """
    hs = sorted(households, key=lambda h: h.id)
    prices = model.prices if prices is None else prices
    if not hs:
        return {}, {}, []
    light_model = Model(model.products, model.activities, (), model.prices, model.base_year,
                        model.currency, model.base_rate, model.base_quota_kg)
    if jobs <= 1 or len(hs) < 2:
        rows = _solve_chunk((hs, calibrations, light_model, policy, prices, consumption_enabled))
    else:
        size = max(1, math.ceil(len(hs) / (jobs * 4)))
        chunks = [hs[i:i + size] for i in range(0, len(hs), size)]
        tasks = [(c, {h.id: calibrations[h.id] for h in c if h.id in calibrations}, light_model,
                  policy, prices, consumption_enabled) for c in chunks]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = [r for part in pool.map(_solve_chunk, tasks) for r in part]
    sols, kkts, failures = {}, {}, []
    for hid, sol, kkt, err in rows:
        if err is None:
            sols[hid] = sol
            kkts[hid] = kkt
        else:
            failures.append(SolveFailure(hid, err))
    return sols, kkts, failures
