"""Domain vocabulary shared by every stage, plus the model-instance format."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

SEASONS = ("rainy", "dry")
PRACTICES = ("extensive", "semi_intensive")
CATEGORIES = ("cereal", "root_tuber", "legume", "cash_horticulture", "cash_other")
COST_ITEMS = ("seed", "fertilizer", "phyto", "equipment", "hired_labor", "other")
# Items paid in cash; the liquidity constraint covers these plus fertilizer.
CASH_ITEMS = ("seed", "phyto", "hired_labor")

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Product:
    id: str
    name: str
    category: str
    tradable: bool = True


@dataclass(frozen=True)
class Activity:
    id: str
    product: str
    practice: str
    season: str
    yield_: float  # kg/ha
    input_costs: Mapping[str, float]  # FCFA/ha
    fertilizer_qty: float = 0.0  # kg/ha
    labor_req: float = 0.0  # person-days/ha
    subsidy_eligible_fertilizer: bool = True
    production_subsidy: float = 0.0  # FCFA/ha

    def __post_init__(self):
        unknown = set(self.input_costs) - set(COST_ITEMS)
        if unknown:
            raise ValueError(f"activity {self.id}: unknown cost item(s) {', '.join(sorted(unknown))}")
        # every item present, so equal activities compare equal however they were built
        object.__setattr__(self, "input_costs",
                           {k: float(self.input_costs.get(k, 0.0)) for k in COST_ITEMS})

    def cost(self, item: str) -> float:
        return float(self.input_costs.get(item, 0.0))

    def nonfertilizer_cost(self) -> float:
        return sum(v for k, v in self.input_costs.items() if k != "fertilizer")

    def cash_cost(self) -> float:
        """Cash outlay per ha excluding fertilizer (priced separately)."""
        return sum(self.cost(k) for k in CASH_ITEMS)


@dataclass(frozen=True)
class Household:
    id: str
    region: str
    weight: float
    land_endowment: Mapping[str, float]  # season -> ha
    labor_endowment: Mapping[str, float]  # season -> person-days
    cash_endowment: float
    exog_income: float
    observed_levels: Mapping[str, float]  # activity id -> ha
    observed_consumption: Mapping[str, float] = field(default_factory=dict)
    adult_equivalents: float = 1.0
    subsidy_beneficiary: bool = False  # base-year program status

    def land(self, season: str) -> float:
        return float(self.land_endowment.get(season, 0.0))

    def labor(self, season: str) -> float:
        return float(self.labor_endowment.get(season, math.inf))

    @property
    def cultivated_area(self) -> float:
        return float(sum(self.observed_levels.values()))


@dataclass(frozen=True)
class PriceSystem:
    market_price: Mapping[str, float]
    buy_markup: Mapping[str, float] = field(default_factory=dict)
    sell_markdown: Mapping[str, float] = field(default_factory=dict)
    fertilizer_market_price: float = 300.0
    factor_prices: Mapping[str, float] = field(default_factory=dict)

    def sell_price(self, product: str) -> float:
        return self.market_price[product] * self.sell_markdown.get(product, 1.0)

    def buy_price(self, product: str) -> float:
        return self.market_price[product] * self.buy_markup.get(product, 1.0)


@dataclass(frozen=True)
class BehavioralFunction:
    d: Mapping[str, float]
    Q: Mapping[tuple[str, str], float]

    def q_diag(self, activity: str) -> float:
        return float(self.Q.get((activity, activity), 0.0))


@dataclass(frozen=True)
class Eligibility:
    kind: str = "all"  # all | area_leq | listed | none
    threshold_ha: float = 0.0
    ids: frozenset = frozenset()

    def __call__(self, household: Household) -> bool:
        if self.kind == "all":
            return True
        if self.kind == "none":
            return False
        if self.kind == "area_leq":
            return household.cultivated_area <= self.threshold_ha
        if self.kind == "listed":
            return household.id in self.ids
        raise ValueError(f"unknown eligibility kind {self.kind!r}")

    @classmethod
    def beneficiaries(cls, households: Iterable[Household]) -> "Eligibility":
        return cls("listed", ids=frozenset(h.id for h in households if h.subsidy_beneficiary))

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.kind == "area_leq":
            out["threshold_ha"] = self.threshold_ha
        if self.kind == "listed":
            out["ids"] = sorted(self.ids)
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "Eligibility":
        kind = d.get("kind", "all")
        if kind not in {"all", "none", "area_leq", "listed"}:
            raise ValueError(f"unknown eligibility kind {kind!r}")
        return cls(kind, float(d.get("threshold_ha", 0.0)), frozenset(d.get("ids", ())))


@dataclass(frozen=True)
class SubsidyPolicy:
    name: str
    rate: float
    quota_kg: float
    eligibility: Eligibility = Eligibility("all")

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"subsidy rate must be in [0, 1], got {self.rate}")
        if self.quota_kg < 0:
            raise ValueError("quota_kg must be >= 0")

    def eligible(self, household: Household) -> bool:
        return self.rate > 0.0 and self.quota_kg > 0.0 and self.eligibility(household)

    def effective_quota(self, household: Household) -> float:
        return self.quota_kg if self.eligible(household) else 0.0


@dataclass(frozen=True)
class Solution:
    household: str
    levels: dict
    sales: dict
    purchases: dict
    self_consumed: dict
    consumed: dict
    internal_price: dict
    fertilizer_subsidized_kg: float
    fertilizer_unsubsidized_kg: float
    duals: dict
    regime: dict
    farm_income: float
    total_income: float
    subsidy_outlay: float
    objective: float = 0.0
    binding: tuple = ()
    production: dict = field(default_factory=dict)

    @property
    def fertilizer_kg(self) -> float:
        return self.fertilizer_subsidized_kg + self.fertilizer_unsubsidized_kg

    @property
    def area(self) -> float:
        return float(sum(self.levels.values()))


@dataclass(frozen=True)
class Model:
    products: Mapping[str, Product]
    activities: Mapping[str, Activity]
    households: tuple
    prices: PriceSystem
    base_year: int = 2011
    currency: str = "FCFA"
    base_rate: float = 0.5
    base_quota_kg: float = 150.0

    def household(self, hid: str) -> Household:
        for h in self.households:
            if h.id == hid:
                return h
        raise KeyError(hid)

    def base_policy(self) -> SubsidyPolicy:
        """The subsidy program as observed in the base year."""
        return SubsidyPolicy("baseline", self.base_rate, self.base_quota_kg,
                             Eligibility.beneficiaries(self.households))


@dataclass(frozen=True)
class Diagnostic:
    subject: str
    message: str

    def __str__(self) -> str:
        return f"{self.subject}: {self.message}"


def validate_model(households, activities, prices, products=None, tol=1e-9) -> list[Diagnostic]:
    """Check every type invariant; returns an empty list when all hold."""
    acts = dict(activities) if isinstance(activities, Mapping) else {a.id: a for a in activities}
    out: list[Diagnostic] = []
    for a in acts.values():
        if a.yield_ < 0:
            out.append(Diagnostic(a.id, "negative yield"))
        if any(v < 0 for v in a.input_costs.values()):
            out.append(Diagnostic(a.id, "negative input cost"))
        if a.fertilizer_qty < 0:
            out.append(Diagnostic(a.id, "negative fertilizer quantity"))
        if a.fertilizer_qty > 0 and prices.fertilizer_market_price > 0 and a.cost("fertilizer") <= 0:
            out.append(Diagnostic(a.id, "fertilizer used but fertilizer cost is zero"))
        if a.season not in SEASONS:
            out.append(Diagnostic(a.id, f"unknown season {a.season!r}"))
        if a.practice not in PRACTICES:
            out.append(Diagnostic(a.id, f"unknown practice {a.practice!r}"))
        if products is not None and a.product not in products:
            out.append(Diagnostic(a.id, f"unknown product {a.product!r}"))
    if products is not None:
        for p in products.values():
            if p.category not in CATEGORIES:
                out.append(Diagnostic(p.id, f"unknown category {p.category!r}"))
    for pid, t in prices.buy_markup.items():
        if t < 1.0:
            out.append(Diagnostic(pid, "buy factor below 1"))
    for pid, t in prices.sell_markdown.items():
        if t > 1.0:
            out.append(Diagnostic(pid, "sell factor above 1"))
    for pid, p in prices.market_price.items():
        if p < 0:
            out.append(Diagnostic(pid, "negative market price"))
    if prices.fertilizer_market_price < 0:
        out.append(Diagnostic("fertilizer", "negative market price"))
    seen = set()
    for h in households:
        if h.id in seen:
            out.append(Diagnostic(h.id, "duplicate household id"))
        seen.add(h.id)
        if h.weight < 0:
            out.append(Diagnostic(h.id, "negative weight"))
        if any(v < 0 for v in h.land_endowment.values()):
            out.append(Diagnostic(h.id, "negative land endowment"))
        if any(v < 0 for v in h.labor_endowment.values()):
            out.append(Diagnostic(h.id, "negative labor endowment"))
        if h.cash_endowment < 0:
            out.append(Diagnostic(h.id, "negative cash endowment"))
        per_season: dict[str, float] = {}
        for aid, lvl in h.observed_levels.items():
            if aid not in acts:
                out.append(Diagnostic(h.id, f"observed level for unknown activity {aid!r}"))
                continue
            if lvl < 0:
                out.append(Diagnostic(h.id, f"negative observed level for {aid}"))
            s = acts[aid].season
            per_season[s] = per_season.get(s, 0.0) + lvl
        for s, total in per_season.items():
            if total > h.land(s) * (1 + tol) + tol:
                out.append(Diagnostic(h.id, f"land overcommitted in {s} season "
                                            f"({total:g} ha > {h.land(s):g} ha)"))
    return out


# ---------------------------------------------------------------- model I/O

_HH_COLS = ["id", "region", "weight", "land_rainy", "land_dry", "labor_rainy", "labor_dry",
            "cash_endowment", "exog_income", "adult_equivalents", "subsidy_beneficiary"]
_ACT_COLS = ["id", "product", "practice", "season", "yield"] + [f"cost_{k}" for k in COST_ITEMS] + [
    "fertilizer_qty", "labor_req", "subsidy_eligible_fertilizer", "production_subsidy"]


def fmt(v) -> str:
    """Float formatting that round-trips exactly and is stable across runs."""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        if v == math.inf:
            return "inf"
        return repr(v)
    return str(v)


def write_csv(path: Path, header: list[str], rows: Iterable[Iterable]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def read_csv(path: Path, required: Iterable[str] = ()) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        missing = [c for c in required if c not in cols]
        if missing:
            raise KeyError(f"{path.name}: missing column(s) {', '.join(missing)}")
        return list(reader)


def _b(s: str) -> bool:
    return s.strip().lower() in {"1", "true", "yes"}


def write_model(model: Model, directory: Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_csv(directory / "households.csv", _HH_COLS, (
        [h.id, h.region, float(h.weight), float(h.land("rainy")), float(h.land("dry")),
         float(h.labor_endowment.get("rainy", math.inf)), float(h.labor_endowment.get("dry", math.inf)),
         float(h.cash_endowment), float(h.exog_income), float(h.adult_equivalents),
         bool(h.subsidy_beneficiary)]
        for h in model.households))
    write_csv(directory / "activities.csv", _ACT_COLS, (
        [a.id, a.product, a.practice, a.season, float(a.yield_)]
        + [float(a.cost(k)) for k in COST_ITEMS]
        + [float(a.fertilizer_qty), float(a.labor_req), bool(a.subsidy_eligible_fertilizer),
           float(a.production_subsidy)]
        for a in model.activities.values()))
    write_csv(directory / "observed_levels.csv", ["household", "activity", "level"], (
        [h.id, aid, float(lvl)] for h in model.households for aid, lvl in h.observed_levels.items()))
    rows = []
    for pid, p in model.products.items():
        rows.append(["product", pid, p.name, p.category, p.tradable,
                     float(model.prices.market_price.get(pid, 0.0)),
                     float(model.prices.buy_markup.get(pid, 1.0)),
                     float(model.prices.sell_markdown.get(pid, 1.0))])
    rows.append(["fertilizer", "fertilizer", "fertilizer", "", False,
                 float(model.prices.fertilizer_market_price), 1.0, 1.0])
    for fid, v in model.prices.factor_prices.items():
        rows.append(["factor", fid, fid, "", False, float(v), 1.0, 1.0])
    write_csv(directory / "prices.csv",
              ["kind", "id", "name", "category", "tradable", "market_price", "buy_markup",
               "sell_markdown"], rows)
    cons = [[h.id, pid, float(c)] for h in model.households
            for pid, c in h.observed_consumption.items()]
    if cons:
        write_csv(directory / "consumption.csv", ["household", "product", "kg"], cons)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "base_year": model.base_year,
        "currency": model.currency,
        "base_policy": {"rate": model.base_rate, "quota_kg": model.base_quota_kg},
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                             encoding="utf-8")


def read_model(directory: Path) -> Model:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {manifest.get('schema_version')!r}")
    products: dict[str, Product] = {}
    market, buy, sell, factors = {}, {}, {}, {}
    fert_price = 0.0
    for r in read_csv(directory / "prices.csv", ["kind", "id", "market_price"]):
        if r["kind"] == "product":
            products[r["id"]] = Product(r["id"], r["name"], r["category"], _b(r["tradable"]))
            market[r["id"]] = float(r["market_price"])
            buy[r["id"]] = float(r["buy_markup"])
            sell[r["id"]] = float(r["sell_markdown"])
        elif r["kind"] == "fertilizer":
            fert_price = float(r["market_price"])
        elif r["kind"] == "factor":
            factors[r["id"]] = float(r["market_price"])
    prices = PriceSystem(market, buy, sell, fert_price, factors)

    activities = {}
    for r in read_csv(directory / "activities.csv", _ACT_COLS):
        activities[r["id"]] = Activity(
            id=r["id"], product=r["product"], practice=r["practice"], season=r["season"],
            yield_=float(r["yield"]),
            input_costs={k: float(r[f"cost_{k}"]) for k in COST_ITEMS},
            fertilizer_qty=float(r["fertilizer_qty"]), labor_req=float(r["labor_req"]),
            subsidy_eligible_fertilizer=_b(r["subsidy_eligible_fertilizer"]),
            production_subsidy=float(r["production_subsidy"]))

    levels: dict[str, dict[str, float]] = {}
    for r in read_csv(directory / "observed_levels.csv", ["household", "activity", "level"]):
        levels.setdefault(r["household"], {})[r["activity"]] = float(r["level"])
    consumption: dict[str, dict[str, float]] = {}
    if (directory / "consumption.csv").exists():
        for r in read_csv(directory / "consumption.csv", ["household", "product", "kg"]):
            consumption.setdefault(r["household"], {})[r["product"]] = float(r["kg"])

    households = []
    for r in read_csv(directory / "households.csv", _HH_COLS):
        households.append(Household(
            id=r["id"], region=r["region"], weight=float(r["weight"]),
            land_endowment={"rainy": float(r["land_rainy"]), "dry": float(r["land_dry"])},
            labor_endowment={"rainy": float(r["labor_rainy"]), "dry": float(r["labor_dry"])},
            cash_endowment=float(r["cash_endowment"]), exog_income=float(r["exog_income"]),
            observed_levels=levels.get(r["id"], {}),
            observed_consumption=consumption.get(r["id"], {}),
            adult_equivalents=float(r["adult_equivalents"]),
            subsidy_beneficiary=_b(r["subsidy_beneficiary"])))
    base = manifest.get("base_policy", {})
    return Model(products, activities, tuple(households), prices,
                 base_year=int(manifest.get("base_year", 2011)),
                 currency=manifest.get("currency", "FCFA"),
                 base_rate=float(base.get("rate", 0.5)),
                 base_quota_kg=float(base.get("quota_kg", 150.0)))


def replace_households(model: Model, households: Iterable[Household]) -> Model:
    from dataclasses import replace
    return replace(model, households=tuple(households))


def map_households(model: Model, fn: Callable[[Household], Household]) -> Model:
    return replace_households(model, (fn(h) for h in model.households))
