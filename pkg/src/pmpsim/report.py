"""Weighted indicator tables, scenario comparison, income distribution and cost-benefit."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .core import Model, Solution, write_csv

GROUPINGS = ("national", "region", "size", "specialization", "crop")

# indicator -> internal unit
UNITS = {
    "area_ha": "ha",
    "area_share_pct": "%",
    "production_kg": "kg",
    "yield_kg_ha": "kg/ha",
    "fertilizer_kg_ha": "kg/ha",
    "mean_farm_income": "FCFA",
    "mean_total_income": "FCFA",
    "beneficiary_rate_pct": "%",
    "subsidy_outlay": "FCFA",
}


@dataclass
class IndicatorTable:
    group_by: str
    rows: list = field(default_factory=list)  # (group, indicator, value, unit); None marks an empty cell

    def value(self, group: str, indicator: str):
        for g, i, v, _ in self.rows:
            if g == group and i == indicator:
                return v
        raise KeyError((group, indicator))

    def groups(self) -> list[str]:
        return sorted({r[0] for r in self.rows})

    def keys(self) -> list[tuple]:
        return [(r[0], r[1]) for r in self.rows]


def _div(a: float, b: float):
    return a / b if b > 0 else None


def _group_key(group_by: str, household, classes) -> str:
    if group_by == "national":
        return "national"
    if group_by == "region":
        return household.region
    if classes is None or household.id not in classes:
        raise ValueError(f"grouping by {group_by} needs farm classes for every household")
    c = classes[household.id]
    return c.size if group_by == "size" else c.specialization


def aggregate(solutions: Mapping[str, Solution], model: Model, group_by: str = "national",
              classes: Mapping | None = None) -> IndicatorTable:
    """Weighted indicators over households (or over crops for ``group_by='crop'``).

    Sums run in household-id order, so the result is bit-stable.
    """
    if group_by not in GROUPINGS:
        raise ValueError(f"unknown grouping {group_by!r}; choose from {', '.join(GROUPINGS)}")
    hh = {h.id: h for h in model.households}
    ids = sorted(solutions)
    missing = [i for i in ids if i not in hh]
    if missing:
        raise KeyError(f"no household record for {missing[0]}")
    acc: dict[str, dict[str, float]] = {}

    def add(g, k, v):
        acc.setdefault(g, {}).setdefault(k, 0.0)
        acc[g][k] += v

    for hid in ids:
        s, h = solutions[hid], hh[hid]
        w = h.weight
        if group_by == "crop":
            for aid, x in sorted(s.levels.items()):
                a = model.activities[aid]
                add(a.product, "area", w * x)
                add(a.product, "prod", w * x * a.yield_)
                add(a.product, "fert", w * x * a.fertilizer_qty)
            continue
        g = _group_key(group_by, h, classes)
        add(g, "w", w)
        add(g, "area", w * s.area)
        add(g, "prod", w * sum(x * model.activities[a].yield_ for a, x in sorted(s.levels.items())))
        add(g, "fert", w * s.fertilizer_kg)
        add(g, "farm", w * s.farm_income)
        add(g, "total", w * s.total_income)
        add(g, "benef", w if s.fertilizer_subsidized_kg > 0 else 0.0)
        add(g, "outlay", w * s.subsidy_outlay)

    total_area = sum(acc[g]["area"] for g in sorted(acc))
    rows = []
    for g in sorted(acc):
        v = acc[g]
        cells = {
            "area_ha": v["area"],
            "area_share_pct": 100.0 * v["area"] / total_area if total_area > 0 else None,
            "production_kg": v["prod"],
            "yield_kg_ha": _div(v["prod"], v["area"]),
            "fertilizer_kg_ha": _div(v["fert"], v["area"]),
        }
        if group_by != "crop":
            cells.update({
                "mean_farm_income": _div(v["farm"], v["w"]),
                "mean_total_income": _div(v["total"], v["w"]),
                "beneficiary_rate_pct": None if v["w"] <= 0 else 100.0 * v["benef"] / v["w"],
                "subsidy_outlay": v["outlay"],
            })
        rows.extend((g, k, val, UNITS[k]) for k, val in cells.items())
    return IndicatorTable(group_by, rows)


def compare(scenario: IndicatorTable, baseline: IndicatorTable) -> IndicatorTable:
    """Percent change of each cell; cells with a zero baseline are flagged ``"new"``."""
    base = {(g, i): v for g, i, v, _ in baseline.rows}
    scen = {(g, i): v for g, i, v, _ in scenario.rows}
    if set(base) != set(scen):
        diff = sorted(set(base) ^ set(scen))
        raise KeyError(f"tables do not match: {diff[0]}")
    rows = []
    for g, i, _, _ in baseline.rows:
        b, s = base[(g, i)], scen[(g, i)]
        if b is None or s is None:
            val = None
        elif b == 0:
            val = 0.0 if s == 0 else "new"
        else:
            val = 100.0 * (s - b) / abs(b)
        rows.append((g, i, val, "%"))
    return IndicatorTable(baseline.group_by, rows)


@dataclass
class DistributionCurve:
    points: list  # (cumulative weighted share, gap %)
    excluded: list  # household ids with nonpositive reference income


def income_distribution(solutions: Mapping[str, Solution], reference: Mapping[str, Solution],
                        weights: Mapping[str, float]) -> DistributionCurve:
    """Household income gaps against a reference run, sorted ascending.

    Each point carries the cumulative weighted population share reached
    after that household.  Ties are broken by household id.
    """
    if set(solutions) != set(reference):
        raise KeyError("runs cover different households")
    gaps, excluded = [], []
    for hid in sorted(solutions):
        ref = reference[hid].total_income
        if ref <= 0:
            excluded.append(hid)
            continue
        gaps.append((100.0 * (solutions[hid].total_income - ref) / ref, hid))
    gaps.sort()
    total = sum(weights[h] for _, h in sorted(gaps, key=lambda t: t[1]))
    pts, cum = [], 0.0
    for gap, hid in gaps:
        cum += weights[hid]
        pts.append((cum / total if total > 0 else 0.0, gap))
    return DistributionCurve(pts, excluded)


@dataclass(frozen=True)
class CostBenefit:
    cost: float
    benefit: float
    ratio: float | None

    def to_dict(self) -> dict:
        return {"cost": self.cost, "benefit": self.benefit, "ratio": self.ratio}


def cost_benefit_from_totals(cost: float, benefit: float) -> CostBenefit:
    return CostBenefit(cost, benefit, benefit / cost if cost != 0 else None)


def cost_benefit(solutions: Mapping[str, Solution], abolition: Mapping[str, Solution],
                 weights: Mapping[str, float], ids=None) -> CostBenefit:
    """State outlay against the income gained relative to abolition.

    ``ids`` restricts both sums to a subset of households (e.g. one group).
    """
    ids = sorted(solutions if ids is None else ids)
    missing = [i for i in ids if i not in abolition]
    if missing:
        raise KeyError(f"household {missing[0]} missing from the abolition run")
    cost = math.fsum(weights[i] * solutions[i].subsidy_outlay for i in ids)
    benefit = math.fsum(weights[i] * (solutions[i].total_income - abolition[i].total_income) for i in ids)
    return cost_benefit_from_totals(cost, benefit)


# ------------------------------------------------------------ writers

def _render(indicator: str, value, unit: str):
    """Convert internal kilograms to tonnes for production cells."""
    if indicator == "production_kg":
        return "production_t", (None if value is None else value / 1000.0), "t"
    return indicator, value, unit


def _cell(v):
    return "" if v is None else v


def write_table(table: IndicatorTable, path) -> None:
    rows = []
    for g, i, v, u in table.rows:
        name, val, unit = _render(i, v, u)
        rows.append([g, name, _cell(val), unit])
    write_csv(Path(path), [table.group_by, "indicator", "value", "unit"], rows)


def write_comparison(table: IndicatorTable, path) -> None:
    rows = [[g, _render(i, None, u)[0], _cell(v), "%"] for g, i, v, u in table.rows]
    write_csv(Path(path), [table.group_by, "indicator", "change_pct", "unit"], rows)


def write_distribution(curve: DistributionCurve, path) -> None:
    write_csv(Path(path), ["cumulative_share", "gap_pct"], curve.points)


def write_cost_benefit(results: Mapping[str, CostBenefit], path) -> None:
    data = {k: {kk: (None if vv is None else float(vv)) for kk, vv in results[k].to_dict().items()}
            for k in sorted(results)}
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_plot_data(tables: Mapping[str, IndicatorTable], comparisons: Mapping[str, IndicatorTable],
                    curves: Mapping[str, DistributionCurve], path_prefix) -> None:
    """Long-format CSVs for plotting: one for levels and changes, one for curves."""
    prefix = Path(path_prefix)
    rows = []
    for scen in sorted(tables):
        t = tables[scen]
        for g, i, v, u in t.rows:
            name, val, unit = _render(i, v, u)
            rows.append([scen, t.group_by, g, name, "level", _cell(val), unit])
    for scen in sorted(comparisons):
        t = comparisons[scen]
        for g, i, v, _ in t.rows:
            rows.append([scen, t.group_by, g, _render(i, None, "")[0], "change", _cell(v), "%"])
    write_csv(prefix.with_name(prefix.name + "indicators_long.csv"),
              ["scenario", "group_by", "group", "indicator", "measure", "value", "unit"], rows)
    write_csv(prefix.with_name(prefix.name + "distribution_long.csv"),
              ["scenario", "cumulative_share", "gap_pct"],
              ([s, x, y] for s in sorted(curves) for x, y in curves[s].points))


__all__ = ["IndicatorTable", "aggregate", "compare", "income_distribution", "cost_benefit",
           "cost_benefit_from_totals", "CostBenefit", "DistributionCurve", "write_table",
           "write_comparison", "write_distribution", "write_cost_benefit", "write_plot_data"]
