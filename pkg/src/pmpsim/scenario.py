"""Baseline projection and subsidy-policy scenarios."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

from .calibration import reanchor
from .core import Activity, Eligibility, Model, Solution, SubsidyPolicy, read_csv, write_csv
from .household import solve_all

# Yield and price changes between the 2011 base year and the 2017 baseline, in percent.
YIELD_SHIFT_PCT = {"arachide": 34.1, "mais": 33.2, "mil": 13.5, "oignon": 4.7, "riz": 13.3}
PRICE_SHIFT_PCT = {"arachide": 13.5, "mais": 9.8, "mil": 24.0, "oignon": 30.4, "riz": 29.4}


@dataclass(frozen=True)
class BaselineSpec:
    years: int = 6
    cost_inflation: float = 0.027
    yield_shift: Mapping[str, float] = field(
        default_factory=lambda: {k: v / 100.0 for k, v in YIELD_SHIFT_PCT.items()})
    price_shift: Mapping[str, float] = field(
        default_factory=lambda: {k: v / 100.0 for k, v in PRICE_SHIFT_PCT.items()})

    def __post_init__(self):
        if self.years < 0:
            raise ValueError("years must be >= 0")
        if self.cost_inflation <= -1:
            raise ValueError("cost inflation must be > -1")
        for name, shifts in (("yield", self.yield_shift), ("price", self.price_shift)):
            if any(v <= -1 for v in shifts.values()):
                raise ValueError(f"{name} shifts must be > -1")

    @property
    def cost_factor(self) -> float:
        return (1.0 + self.cost_inflation) ** self.years

    def to_dict(self) -> dict:
        return {"years": self.years, "inflation": self.cost_inflation,
                "yield_shift": dict(sorted(self.yield_shift.items())),
                "price_shift": dict(sorted(self.price_shift.items()))}

    @classmethod
    def from_dict(cls, d: Mapping) -> "BaselineSpec":
        base = cls()
        shifts = d.get("shifts", {})
        return cls(years=int(d.get("years", base.years)),
                   cost_inflation=float(d.get("inflation", d.get("cost_inflation", base.cost_inflation))),
                   yield_shift=dict(d.get("yield_shift", shifts.get("yield", base.yield_shift))),
                   price_shift=dict(d.get("price_shift", shifts.get("price", base.price_shift))))


def _gm(a: Activity, price: float, fert_price: float) -> float:
    fert = a.fertilizer_qty * fert_price if a.fertilizer_qty > 0 else a.cost("fertilizer")
    return a.yield_ * price + a.production_subsidy - a.nonfertilizer_cost() - fert


def margin_deflators(old: Model, new: Model) -> dict[str, float]:
    """Per-activity ratio of projected to base gross margin (1 when not positive)."""
    out = {}
    for aid, a in old.activities.items():
        b = new.activities[aid]
        g0 = _gm(a, old.prices.market_price[a.product], old.prices.fertilizer_market_price)
        g1 = _gm(b, new.prices.market_price[b.product], new.prices.fertilizer_market_price)
        out[aid] = g1 / g0 if g0 > 0 and g1 > 0 else 1.0
    return out


def project_baseline(model: Model, spec: BaselineSpec = BaselineSpec(), calibrations=None,
                     policy: SubsidyPolicy | None = None):
    """Move the base-year model to the baseline year.

    Input costs, the fertilizer price and cash endowments grow with
    inflation; yields and prices move by their product shifts; the subsidy
    policy is unchanged.  Each household's curvature is rescaled by the
    activity's gross-margin ratio and its linear term re-derived so the
    observed crop mix stays the optimum.  Returns ``(model, calibrations)``.
    """
    cf = spec.cost_factor
    acts = {}
    for aid, a in model.activities.items():
        acts[aid] = replace(a, yield_=a.yield_ * (1.0 + spec.yield_shift.get(a.product, 0.0)),
                            input_costs={k: v * cf for k, v in a.input_costs.items()})
    p = model.prices
    prices = replace(p, market_price={k: v * (1.0 + spec.price_shift.get(k, 0.0))
                                      for k, v in p.market_price.items()},
                     fertilizer_market_price=p.fertilizer_market_price * cf)
    hs = tuple(replace(h, cash_endowment=h.cash_endowment * cf) for h in model.households)
    new = replace(model, activities=acts, prices=prices, households=hs)
    if calibrations is None:
        return new, None
    policy = new.base_policy() if policy is None else policy
    k = margin_deflators(model, new)
    by_id = {h.id: h for h in hs}
    out = {hid: reanchor(by_id[hid], calibrations[hid], new, policy, k) for hid in sorted(calibrations)}
    return new, out


# ------------------------------------------------------------ scenarios

@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    rate: float
    quota_kg: float
    eligibility: Mapping = field(default_factory=lambda: {"kind": "all"})
    baseline: BaselineSpec = BaselineSpec()

    def __post_init__(self):
        kind = self.eligibility.get("kind", "all")
        if kind not in ("all", "none", "area_leq", "listed", "beneficiaries"):
            raise ValueError(f"unknown eligibility kind {kind!r}")
        SubsidyPolicy(self.name, self.rate, self.quota_kg)  # validates rate and quota
        if self.name == "Abol" and not (self.rate == 0 or kind == "none"):
            raise ValueError("Abol must have rate 0 or no eligible household")
        if self.name == "Univ" and (kind != "all" or self.quota_kg != 75):
            raise ValueError("Univ is universal with a 75 kg quota")
        if self.name == "Cibl" and (kind != "area_leq" or self.quota_kg != 75
                                    or float(self.eligibility.get("threshold_ha", 0)) != 5.0):
            raise ValueError("Cibl targets farms of at most 5 ha with a 75 kg quota")

    def policy(self, households) -> SubsidyPolicy:
        """Concrete policy; ``beneficiaries`` resolves to the base-year recipients."""
        kind = self.eligibility.get("kind", "all")
        if kind == "beneficiaries":
            elig = Eligibility.beneficiaries(households)
        else:
            elig = Eligibility.from_dict(self.eligibility)
        return SubsidyPolicy(self.name, self.rate, self.quota_kg, elig)

    def to_dict(self) -> dict:
        return {"name": self.name, "rate": self.rate, "quota_kg": self.quota_kg,
                "eligibility": dict(self.eligibility), "baseline": self.baseline.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScenarioSpec":
        if "name" not in d:
            raise ValueError("scenario needs a name")
        preset = PRESETS.get(d["name"])
        return cls(name=d["name"],
                   rate=float(d.get("rate", preset.rate if preset else 0.0)),
                   quota_kg=float(d.get("quota_kg", preset.quota_kg if preset else 0.0)),
                   eligibility=dict(d.get("eligibility", preset.eligibility if preset else {"kind": "all"})),
                   baseline=BaselineSpec.from_dict(d.get("baseline", {})))


PRESETS = {
    "baseline": ScenarioSpec("baseline", 0.5, 150.0, {"kind": "beneficiaries"}),
    "Abol": ScenarioSpec("Abol", 0.0, 0.0, {"kind": "none"}),
    "Univ": ScenarioSpec("Univ", 0.5, 75.0, {"kind": "all"}),
    "Cibl": ScenarioSpec("Cibl", 0.5, 75.0, {"kind": "area_leq", "threshold_ha": 5.0}),
}


def read_config(path) -> dict:
    """Parse a JSON config, or TOML when the file ends in ``.toml`` and ``tomli`` is installed."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".toml":
        try:
            import tomli
        except ImportError as exc:  # pragma: no cover - depends on the environment
            raise RuntimeError("reading TOML configs requires the 'tomli' package") from exc
        return tomli.loads(text)
    return json.loads(text)


def parse_scenarios(data) -> list[ScenarioSpec]:
    """Scenarios from one object, a list of them, or an object with a ``scenarios`` list.

    A preset name alone (``{"name": "Univ"}``) is enough.
    """
    if isinstance(data, Mapping) and "scenarios" in data:
        items = data["scenarios"]
    elif isinstance(data, list):
        items = data
    else:
        items = [data]
    return [x if isinstance(x, ScenarioSpec) else
            PRESETS[x] if isinstance(x, str) else ScenarioSpec.from_dict(x) for x in items]


def load_scenarios(path) -> list[ScenarioSpec]:
    return parse_scenarios(read_config(path))


def eligibility_rate(households, policy: SubsidyPolicy) -> float:
    """Weighted share of households eligible for the subsidy."""
    hs = sorted(households, key=lambda h: h.id)
    total = sum(h.weight for h in hs)
    if total <= 0:
        raise ValueError("zero total weight")
    return sum(h.weight for h in hs if policy.eligible(h)) / total


@dataclass
class ScenarioResult:
    name: str
    policy: SubsidyPolicy
    solutions: dict
    failures: list = field(default_factory=list)
    kkt: dict = field(default_factory=dict)

    def totals(self, households) -> dict:
        w = {h.id: h.weight for h in households}
        ids = sorted(self.solutions)
        return {
            "households": len(ids),
            "failures": len(self.failures),
            "subsidy_outlay": sum(w[i] * self.solutions[i].subsidy_outlay for i in ids),
            "total_income": sum(w[i] * self.solutions[i].total_income for i in ids),
            "fertilizer_kg": sum(w[i] * self.solutions[i].fertilizer_kg for i in ids),
            "area_ha": sum(w[i] * self.solutions[i].area for i in ids),
        }


def run_scenario(model: Model, calibrations: Mapping, spec: ScenarioSpec | SubsidyPolicy, *,
                 jobs: int = 1, consumption_enabled: bool = False) -> ScenarioResult:
    """Solve every household under the scenario's policy (model already projected)."""
    policy = spec if isinstance(spec, SubsidyPolicy) else spec.policy(model.households)
    sols, kkts, fails = solve_all(model.households, calibrations, model, policy, jobs=jobs,
                                  consumption_enabled=consumption_enabled)
    return ScenarioResult(policy.name, policy, sols, fails, kkts)


# ------------------------------------------------------------ result files

_HH_HEADER = ["household", "farm_income", "total_income", "fertilizer_subsidized_kg",
              "fertilizer_unsubsidized_kg", "subsidy_outlay", "objective", "binding"]
_ACT_HEADER = ["household", "activity", "ha"]
_PROD_HEADER = ["household", "product", "regime", "production_kg", "sold_kg", "bought_kg",
                "self_consumed_kg", "consumed_kg", "internal_price"]


def write_solutions(solutions: Mapping[str, Solution], directory) -> None:
    """Household, activity and product tables for one scenario."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ids = sorted(solutions)
    write_csv(directory / "households.csv", _HH_HEADER, (
        [i, s.farm_income, s.total_income, s.fertilizer_subsidized_kg, s.fertilizer_unsubsidized_kg,
         s.subsidy_outlay, s.objective, ";".join(s.binding)] for i, s in ((i, solutions[i]) for i in ids)))
    write_csv(directory / "activities.csv", _ACT_HEADER, (
        [i, a, float(x)] for i in ids for a, x in sorted(solutions[i].levels.items())))
    write_csv(directory / "products.csv", _PROD_HEADER, (
        [i, p, s.regime[p], float(s.production.get(p, 0.0)), float(s.sales[p]), float(s.purchases[p]),
         float(s.self_consumed[p]), float(s.consumed[p]), float(s.internal_price[p])]
        for i in ids for s in (solutions[i],) for p in sorted(s.regime)))
    write_csv(directory / "duals.csv", ["household", "constraint", "dual"], (
        [i, n, float(v)] for i in ids for n, v in sorted(solutions[i].duals.items())))


def read_solutions(directory) -> dict[str, Solution]:
    directory = Path(directory)
    levels: dict[str, dict] = {}
    for r in read_csv(directory / "activities.csv", _ACT_HEADER):
        levels.setdefault(r["household"], {})[r["activity"]] = float(r["ha"])
    prod: dict[str, dict] = {}
    for r in read_csv(directory / "products.csv", _PROD_HEADER):
        prod.setdefault(r["household"], {})[r["product"]] = r
    duals: dict[str, dict] = {}
    if (directory / "duals.csv").exists():
        for r in read_csv(directory / "duals.csv", ["household", "constraint", "dual"]):
            duals.setdefault(r["household"], {})[r["constraint"]] = float(r["dual"])
    out = {}
    for r in read_csv(directory / "households.csv", _HH_HEADER):
        hid = r["household"]
        pr = prod.get(hid, {})
        out[hid] = Solution(
            household=hid, levels=levels.get(hid, {}),
            sales={p: float(v["sold_kg"]) for p, v in pr.items()},
            purchases={p: float(v["bought_kg"]) for p, v in pr.items()},
            self_consumed={p: float(v["self_consumed_kg"]) for p, v in pr.items()},
            consumed={p: float(v["consumed_kg"]) for p, v in pr.items()},
            internal_price={p: float(v["internal_price"]) for p, v in pr.items()},
            fertilizer_subsidized_kg=float(r["fertilizer_subsidized_kg"]),
            fertilizer_unsubsidized_kg=float(r["fertilizer_unsubsidized_kg"]),
            duals=duals.get(hid, {}), regime={p: v["regime"] for p, v in pr.items()},
            farm_income=float(r["farm_income"]), total_income=float(r["total_income"]),
            subsidy_outlay=float(r["subsidy_outlay"]), objective=float(r["objective"]),
            binding=tuple(x for x in r["binding"].split(";") if x),
            production={p: float(v["production_kg"]) for p, v in pr.items()})
    return out
