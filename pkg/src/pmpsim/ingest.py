"""Survey loading, outlier cleaning, imputation and model assembly."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import (COST_ITEMS, Activity, Diagnostic, Eligibility, Household, Model, PriceSystem,
                   Product, SubsidyPolicy, read_csv)

# crop id -> (display name, category)
DEFAULT_CROPS = {
    "mil": ("Mil", "cereal"),
    "sorgho": ("Sorgho", "cereal"),
    "mais": ("Maïs", "cereal"),
    "riz": ("Riz paddy", "cereal"),
    "manioc": ("Manioc", "root_tuber"),
    "arachide": ("Arachide", "legume"),
    "niebe": ("Niébé", "legume"),
    "oignon": ("Oignon", "cash_horticulture"),
    "tomate": ("Tomate", "cash_horticulture"),
    "aubergine": ("Aubergine", "cash_horticulture"),
    "pasteque": ("Pastèque", "cash_horticulture"),
    "coton": ("Coton", "cash_other"),
    "sesame": ("Sésame", "cash_other"),
}

PLOT_COLUMNS = ["plot_id", "household", "crop", "season", "area", "production"] + list(COST_ITEMS) + [
    "fertilizer_kg", "price"]
HOUSEHOLD_COLUMNS = ["id", "region", "weight", "members", "adult_equivalents", "exog_income"]
# Per-ha plot quantities that go through outlier cleaning.
CLEANED_FIELDS = ("yield", *COST_ITEMS, "fertilizer_per_ha", "price", "labor_per_ha")
# Fields a survey may omit entirely; they default to zero without a diagnostic.
OPTIONAL_FIELDS = ("other", "labor_per_ha")
PRACTICE_SUFFIX = {"extensive": "ext", "semi_intensive": "semi"}


class SurveyError(ValueError):
    pass


@dataclass(frozen=True)
class CleaningPolicy:
    method: str = "tukey_drop"
    tukey_k: float = 1.5
    winsor_lo: float = 5.0
    winsor_hi: float = 95.0
    impute: str = "median"
    by_region: bool = True

    def __post_init__(self):
        if self.method not in ("tukey_drop", "winsorize"):
            raise ValueError(f"unknown cleaning method {self.method!r}")
        if not 0.0 <= self.winsor_lo < self.winsor_hi <= 100.0:
            raise ValueError("need 0 <= winsor_lo < winsor_hi <= 100")
        if self.tukey_k <= 0:
            raise ValueError("tukey_k must be > 0")
        if self.impute != "median":
            raise ValueError(f"unknown imputation {self.impute!r}")


@dataclass
class SurveyDataset:
    plots: list[dict]
    households: list[dict]
    crops: dict = field(default_factory=lambda: dict(DEFAULT_CROPS))
    consumption: list[dict] = field(default_factory=list)


def parse_number(cell) -> float | None:
    """Parse a numeric cell; anything unparseable or non-finite is missing."""
    if cell is None:
        return None
    if isinstance(cell, (int, float)):
        v = float(cell)
    else:
        s = str(cell).strip()
        if not s:
            return None
        try:
            v = float(s)
        except ValueError:
            return None
    return v if math.isfinite(v) else None


_NUMERIC_PLOT = ["area", "production", *COST_ITEMS, "fertilizer_kg", "price", "labor_days"]
_NUMERIC_HH = ["weight", "members", "adult_equivalents", "exog_income", "declared_area",
               "declared_area_dry", "labor_rainy", "labor_dry", "cash_endowment"]


def load_survey(path) -> SurveyDataset:
    """Read ``households.csv`` and ``plots.csv`` (plus optional ``crops.csv``
    and ``consumption.csv``) from a directory."""
    path = Path(path)
    for name in ("households.csv", "plots.csv"):
        if not (path / name).exists():
            raise FileNotFoundError(f"{path / name} not found")
    hh_rows = read_csv(path / "households.csv", HOUSEHOLD_COLUMNS)
    plot_rows = read_csv(path / "plots.csv", [c for c in PLOT_COLUMNS if c != "other"])

    households, seen = [], set()
    for r in hh_rows:
        hid = r["id"].strip()
        if hid in seen:
            raise SurveyError(f"duplicate id {hid!r} in households.csv")
        seen.add(hid)
        row = {"id": hid, "region": r["region"].strip(),
               "beneficiary": r.get("beneficiary", "0").strip() in ("1", "true", "True")}
        for c in _NUMERIC_HH:
            row[c] = parse_number(r.get(c))
        households.append(row)

    plots = []
    for r in plot_rows:
        hid = r["household"].strip()
        if hid not in seen:
            raise SurveyError(f"plot {r['plot_id']} references unknown household {hid!r}")
        row = {"plot_id": r["plot_id"].strip(), "household": hid, "crop": r["crop"].strip(),
               "season": r["season"].strip()}
        for c in _NUMERIC_PLOT:
            row[c] = parse_number(r.get(c))
        plots.append(row)

    crops = dict(DEFAULT_CROPS)
    if (path / "crops.csv").exists():
        for r in read_csv(path / "crops.csv", ["crop", "name", "category"]):
            crops[r["crop"]] = (r["name"], r["category"])
    consumption = []
    if (path / "consumption.csv").exists():
        for r in read_csv(path / "consumption.csv", ["household", "crop", "kg"]):
            consumption.append({"household": r["household"], "crop": r["crop"],
                                "kg": parse_number(r["kg"])})
    return SurveyDataset(plots, households, crops, consumption)


def quartiles(values: np.ndarray) -> tuple[float, float]:
    """Q1 and Q3 by linear interpolation between order statistics."""
    q1, q3 = np.percentile(values, [25.0, 75.0], method="linear")
    return float(q1), float(q3)


def _clean_pass(vals: list, policy: CleaningPolicy):
    present = np.array([v for v in vals if v is not None], dtype=float)
    actions: list[str | None] = [None] * len(vals)
    vals = list(vals)
    if policy.method == "tukey_drop":
        q1, q3 = quartiles(present)
        iqr = q3 - q1
        lo, hi = q1 - policy.tukey_k * iqr, q3 + policy.tukey_k * iqr
        for i, v in enumerate(vals):
            if v is not None and (v < lo or v > hi):
                vals[i] = None
                actions[i] = "dropped_outlier"
    else:
        # clamp to observed order statistics, so winsorized values are data values
        lo, hi = np.percentile(present, [policy.winsor_lo, policy.winsor_hi], method="inverted_cdf")
        for i, v in enumerate(vals):
            if v is not None and (v < lo or v > hi):
                vals[i] = float(min(max(v, lo), hi))
                actions[i] = "winsorized"
    med = float(np.median([v for v in vals if v is not None]))
    for i, v in enumerate(vals):
        if v is None:
            vals[i] = med
            actions[i] = actions[i] or "imputed_median"
    return vals, actions


def clean_series(values: Sequence[float | None], policy: CleaningPolicy = CleaningPolicy()):
    """Clean one numeric series; returns ``(cleaned, actions)``.

    ``actions[i]`` is ``None`` for untouched entries, otherwise one of
    ``"dropped_outlier"``, ``"winsorized"`` or ``"imputed_median"`` (the
    first action taken on that entry).  Screening and imputation repeat
    until a pass changes nothing: imputed medians narrow the quartile range
    and can expose new outliers, and stopping at the fixed point makes
    cleaning idempotent.
    """
    vals = [None if v is None or not math.isfinite(v) else float(v) for v in values]
    if all(v is None for v in vals):
        raise ValueError("cannot clean a series with no observed values")
    actions: list[str | None] = [None] * len(vals)
    for _ in range(len(vals) + 1):
        new, acts = _clean_pass(vals, policy)
        if all(a is None for a in acts):
            break
        actions = [a or b for a, b in zip(actions, acts)]
        vals = new
    return vals, actions


@dataclass(frozen=True)
class CleaningRecord:
    household: str
    plot: str
    field: str
    raw: float | None
    action: str
    value: float


def _per_ha(plot: dict) -> dict:
    area = plot["area"]
    out = {}
    prod = plot["production"]
    out["yield"] = None if prod is None else prod / area
    for item in COST_ITEMS:
        v = plot.get(item)
        out[item] = None if v is None else v / area
    fk = plot.get("fertilizer_kg")
    out["fertilizer_per_ha"] = None if fk is None else fk / area
    out["price"] = plot.get("price")
    ld = plot.get("labor_days")
    out["labor_per_ha"] = None if ld is None else ld / area
    return out


def _clean_field(raw: list, policy: CleaningPolicy):
    """Clean one field; zeros are structural (input not used) and pass through.

    Outlier screening runs on the positive observations only, so a field that
    most plots leave at zero keeps its users.  Missing cells get the median of
    every surviving value, zeros included.
    """
    idx = [i for i, v in enumerate(raw) if v != 0.0]
    vals = [float(v) if v is not None else 0.0 for v in raw]
    actions: list[str | None] = [None] * len(raw)
    if not idx:
        return vals, actions
    if all(raw[i] is None for i in idx):
        survivors = [v for v in raw if v is not None]
        med = float(np.median(survivors)) if survivors else 0.0
        for i in idx:
            vals[i], actions[i] = med, "imputed_median"
        return vals, actions
    sub, sub_act = clean_series([raw[i] for i in idx], policy)
    for i, v, a in zip(idx, sub, sub_act):
        vals[i], actions[i] = v, a
    imputed = [i for i, a in enumerate(actions) if a in ("imputed_median", "dropped_outlier")]
    if imputed:
        keep = [vals[i] for i in range(len(raw)) if i not in set(imputed)]
        if keep:
            med = float(np.median(keep))
            for i in imputed:
                vals[i] = med
    return vals, actions


def clean_plots(dataset: SurveyDataset, policy: CleaningPolicy = CleaningPolicy(),
                practice_labels: Mapping[str, str] | None = None):
    """Clean per-ha plot coefficients within crop × practice (× region) groups.

    Returns ``(plots, records, diagnostics)``; each returned plot carries the
    cleaned per-ha values.  Plots without a positive area are dropped.
    """
    practice_labels = practice_labels or {}
    region = {h["id"]: h["region"] for h in dataset.households}
    records: list[CleaningRecord] = []
    diags: list[Diagnostic] = []
    plots = []
    for p in sorted(dataset.plots, key=lambda r: r["plot_id"]):
        if p["area"] is None or p["area"] <= 0:
            diags.append(Diagnostic(p["plot_id"], "plot without positive area dropped"))
            records.append(CleaningRecord(p["household"], p["plot_id"], "area", p["area"],
                                          "dropped_plot", 0.0))
            continue
        plots.append({**p, "raw": _per_ha(p)})

    groups: dict[tuple, list[int]] = defaultdict(list)
    crop_groups: dict[str, list[int]] = defaultdict(list)
    for i, p in enumerate(plots):
        key = (p["crop"], practice_labels.get(p["plot_id"], "extensive"),
               region[p["household"]] if policy.by_region else "")
        groups[key].append(i)
        crop_groups[p["crop"]].append(i)

    cleaned = [dict() for _ in plots]
    for key in sorted(groups):
        idx = groups[key]
        for f in CLEANED_FIELDS:
            raw = [plots[i]["raw"][f] for i in idx]
            if all(v is None for v in raw):
                pool = [plots[i]["raw"][f] for i in crop_groups[key[0]]]
                if f in OPTIONAL_FIELDS and all(v is None for v in pool):
                    for i in idx:
                        cleaned[i][f] = 0.0
                    continue
                if all(v is None for v in pool):
                    diags.append(Diagnostic(key[0], f"no observed {f}; set to 0"))
                    fill = 0.0
                else:
                    fill, _ = _clean_field(pool, policy)
                    fill = float(np.median(fill))
                for i in idx:
                    cleaned[i][f] = fill
                    records.append(CleaningRecord(plots[i]["household"], plots[i]["plot_id"], f,
                                                  None, "imputed_crop_median", fill))
                continue
            vals, actions = _clean_field(raw, policy)
            for i, v, a, r in zip(idx, vals, actions, raw):
                cleaned[i][f] = v
                if a is not None:
                    records.append(CleaningRecord(plots[i]["household"], plots[i]["plot_id"], f,
                                                  r, a, v))
    out = []
    for p, c in zip(plots, cleaned):
        q = {k: v for k, v in p.items() if k != "raw"}
        q["per_ha"] = c
        out.append(q)
    records.sort(key=lambda r: (r.household, r.plot, r.field))
    return out, records, diags


def activity_id(crop: str, practice: str, season: str) -> str:
    return f"{crop}_{PRACTICE_SUFFIX[practice]}_{season}"


@dataclass
class IngestResult:
    model: Model
    diagnostics: list
    records: list


def build_households(dataset: SurveyDataset, cleaning: CleaningPolicy = CleaningPolicy(),
                     practice_labels: Mapping[str, str] | None = None, *,
                     fertilizer_price: float = 300.0, base_rate: float = 0.5,
                     base_quota_kg: float = 150.0, cash_multiplier: float = 1.2,
                     buy_markup: float = 1.0, sell_markdown: float = 1.0,
                     base_year: int = 2011) -> IngestResult:
    """Assemble activities and households from cleaned survey plots.

    Activity coefficients are area-weighted means over the plots of each
    (crop, practice, season) cell; product prices are production-weighted
    means.  Land and labor endowments are at least what the observed crop mix
    needs under those mean coefficients.  Unless the survey supplies one, each household's cash endowment
    is ``cash_multiplier`` times its base-year cash outlay implied by the
    model (cash inputs plus fertilizer at its base-year effective price).
    """
    if not dataset.plots:
        raise SurveyError("empty dataset: no plots")
    practice_labels = practice_labels or {}
    plots, records, diags = clean_plots(dataset, cleaning, practice_labels)

    cells: dict[str, list[dict]] = defaultdict(list)
    for p in plots:
        practice = practice_labels.get(p["plot_id"], "extensive")
        p["activity"] = activity_id(p["crop"], practice, p["season"])
        p["practice"] = practice
        cells[p["activity"]].append(p)

    activities = {}
    for aid in sorted(cells):
        ps = cells[aid]
        w = np.array([p["area"] for p in ps])

        def mean(f):
            return float(np.dot(w, [p["per_ha"][f] for p in ps]) / w.sum())

        fq = mean("fertilizer_per_ha")
        costs = {k: mean(k) for k in COST_ITEMS}
        if fq > 0 and costs["fertilizer"] <= 0:
            costs["fertilizer"] = fq * fertilizer_price
        activities[aid] = Activity(
            id=aid, product=ps[0]["crop"], practice=ps[0]["practice"], season=ps[0]["season"],
            yield_=mean("yield"), input_costs=costs, fertilizer_qty=fq,
            labor_req=mean("labor_per_ha"))

    products, market = {}, {}
    by_crop: dict[str, list[dict]] = defaultdict(list)
    for p in plots:
        by_crop[p["crop"]].append(p)
    for crop in sorted(by_crop):
        name, cat = dataset.crops.get(crop, (crop, "cash_other"))
        products[crop] = Product(crop, name, cat, True)
        ps = by_crop[crop]
        q = np.array([p["area"] * p["per_ha"]["yield"] for p in ps])
        pr = np.array([p["per_ha"]["price"] for p in ps])
        market[crop] = float(q @ pr / q.sum()) if q.sum() > 0 else float(np.mean(pr))
    prices = PriceSystem(market, {c: buy_markup for c in products}, {c: sell_markdown for c in products},
                         fertilizer_price)

    levels: dict[str, dict[str, float]] = defaultdict(dict)
    area_season: dict[str, dict[str, float]] = defaultdict(lambda: defaultdict(float))
    for p in plots:
        lv = levels[p["household"]]
        lv[p["activity"]] = lv.get(p["activity"], 0.0) + p["area"]
        area_season[p["household"]][p["season"]] += p["area"]

    cons: dict[str, dict[str, float]] = defaultdict(dict)
    for r in dataset.consumption:
        if r["kg"] is not None and r["kg"] > 0:
            cons[r["household"]][r["crop"]] = cons[r["household"]].get(r["crop"], 0.0) + r["kg"]

    base = SubsidyPolicy("baseline", base_rate, base_quota_kg, Eligibility("all"))
    households = []
    for h in sorted(dataset.households, key=lambda r: r["id"]):
        hid = h["id"]
        if hid not in levels:
            diags.append(Diagnostic(hid, "household without plots excluded"))
            continue
        lv = dict(sorted(levels[hid].items()))
        land = {"rainy": max(area_season[hid].get("rainy", 0.0), h.get("declared_area") or 0.0),
                "dry": max(area_season[hid].get("dry", 0.0), h.get("declared_area_dry") or 0.0)}
        labor = {}
        for s in ("rainy", "dry"):
            v = h.get(f"labor_{s}")
            need = sum(activities[a].labor_req * x for a, x in lv.items() if activities[a].season == s)
            labor[s] = math.inf if v is None else max(v, need)
        if h.get("cash_endowment") is not None:
            cash = h["cash_endowment"]
        else:
            cash = cash_multiplier * base_cash_outlay(lv, activities, h["beneficiary"], base,
                                                      fertilizer_price)
        weight = h["weight"]
        if weight is None:
            diags.append(Diagnostic(hid, "missing weight; set to 1"))
            weight = 1.0
        households.append(Household(
            id=hid, region=h["region"], weight=weight, land_endowment=land,
            labor_endowment=labor, cash_endowment=cash, exog_income=h["exog_income"] or 0.0,
            observed_levels=lv, observed_consumption=dict(sorted(cons.get(hid, {}).items())),
            adult_equivalents=h["adult_equivalents"] or 1.0,
            subsidy_beneficiary=bool(h["beneficiary"])))
    model = Model(products, activities, tuple(households), prices, base_year=base_year,
                  base_rate=base_rate, base_quota_kg=base_quota_kg)
    return IngestResult(model, diags, records)


def base_cash_outlay(levels: Mapping[str, float], activities: Mapping[str, Activity],
                     beneficiary: bool, policy: SubsidyPolicy, fertilizer_price: float) -> float:
    """Cash spent on inputs at observed levels, fertilizer at its effective price."""
    cash = sum(activities[a].cash_cost() * x for a, x in levels.items())
    fert = sum(activities[a].fertilizer_qty * x for a, x in levels.items())
    elig = sum(activities[a].fertilizer_qty * x for a, x in levels.items()
               if activities[a].subsidy_eligible_fertilizer)
    sub = min(elig, policy.quota_kg) if beneficiary and policy.rate > 0 else 0.0
    return cash + sub * (1.0 - policy.rate) * fertilizer_price + (fert - sub) * fertilizer_price


def practice_observations(dataset: SurveyDataset) -> dict[str, list[tuple[str, list[float]]]]:
    """Per crop, the (plot id, per-ha expenditure vector) pairs used by the typology."""
    out: dict[str, list] = defaultdict(list)
    for p in sorted(dataset.plots, key=lambda r: r["plot_id"]):
        if p["area"] is None or p["area"] <= 0:
            continue
        vec = [(p.get(k) or 0.0) / p["area"] for k in ("seed", "fertilizer", "phyto", "equipment",
                                                       "hired_labor")]
        out[p["crop"]].append((p["plot_id"], vec))
    return dict(out)


def write_cleaning_report(records: Iterable[CleaningRecord], path) -> None:
    from .core import write_csv
    write_csv(Path(path), ["household", "plot", "field", "raw_value", "action", "value"],
              ([r.household, r.plot, r.field, "" if r.raw is None else float(r.raw), r.action,
                float(r.value)] for r in records))
