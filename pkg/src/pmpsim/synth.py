"""Synthetic survey generator shaped to published regional farm statistics.

The generator produces the same two tables the ingest stage reads.  Regional
profiles carry mean cultivated area, fertilizer use and subsidy coverage;
crop technologies carry per-ha costs, yields and prices for extensive and
semi-intensive practices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .core import COST_ITEMS, write_csv
from .ingest import DEFAULT_CROPS


@dataclass(frozen=True)
class RegionProfile:
    name: str
    sample_size: int
    mean_area: float  # ha
    users: float  # share of households using fertilizer
    beneficiaries: float  # share of households receiving subsidized fertilizer
    kg_per_ha: float  # fertilizer kg per cultivated ha, all households
    adult_equivalents: float
    # cultivated-area shares: cereals (not rice), rice, tubers, horticulture, cash crops
    crop_shares: tuple
    small_farm_share: float  # share of households with at most 5 ha


REGIONS = {
    p.name: p for p in [
        RegionProfile("Dakar", 8, 3.5, 0.625, 0.50, 31.4, 6.9, (31.0, 0.0, 10.9, 3.3, 54.8), 0.875),
        RegionProfile("Thiès", 118, 5.1, 0.381, 0.347, 9.1, 6.0, (30.8, 0.0, 8.9, 18.8, 41.5), 0.618),
        RegionProfile("Diourbel", 136, 5.6, 0.213, 0.199, 6.9, 5.5, (45.3, 0.0, 1.1, 5.7, 47.9), 0.529),
        RegionProfile("Fatick_Kaolack", 392, 4.9, 0.362, 0.313, 7.6, 5.0, (52.2, 0.7, 0.2, 4.5, 42.4), 0.574),
        RegionProfile("Kaffrine", 240, 7.6, 0.591, 0.521, 11.2, 5.0, (50.3, 0.1, 0.4, 7.0, 42.2), 0.325),
        RegionProfile("St-Louis", 141, 3.5, 0.752, 0.468, 34.1, 5.0, (15.8, 31.7, 6.4, 24.5, 21.6), 0.808),
        RegionProfile("Louga", 65, 5.2, 0.108, 0.092, 0.7, 5.1, (40.6, 0.0, 0.3, 5.8, 53.3), 0.538),
        RegionProfile("Matam", 163, 2.5, 0.104, 0.073, 2.0, 4.5, (68.2, 4.7, 1.7, 11.1, 14.3), 0.889),
        RegionProfile("Tambacounda_Kedougou", 437, 4.1, 0.295, 0.233, 3.5, 5.3, (59.3, 1.9, 0.2, 3.5, 35.1), 0.668),
        RegionProfile("Casamance", 578, 4.6, 0.434, 0.359, 6.0, 5.2, (38.2, 22.9, 1.1, 4.0, 33.8), 0.629),
    ]
}
NATIONAL = RegionProfile("Sénégal", 2278, 4.7, 0.383, 0.313, 8.7, 5.1, (43.9, 7.1, 2.0, 7.6, 39.4), 0.62)
ALIASES = {"senegal": "Sénégal", "national": "Sénégal", "thies": "Thiès", "fatick": "Fatick_Kaolack",
           "kaolack": "Fatick_Kaolack", "st-louis": "St-Louis", "saint-louis": "St-Louis",
           "tambacounda": "Tambacounda_Kedougou", "tamba": "Tambacounda_Kedougou"}

# Crops grown in each area-share block, with within-block weights.
CROP_BLOCKS = (
    {"mil": 0.55, "sorgho": 0.20, "mais": 0.25},
    {"riz": 1.0},
    {"manioc": 1.0},
    {"oignon": 0.35, "tomate": 0.25, "aubergine": 0.15, "pasteque": 0.25},
    {"arachide": 0.75, "niebe": 0.17, "coton": 0.04, "sesame": 0.04},
)
DRY_SEASON = frozenset({"oignon", "tomate", "aubergine"})
LEGUMES = {"arachide": 0.8, "niebe": 0.2}
# relative fertilizer dose by crop (national kg/ha in the reference run); tomato and
# sesame are not reported and borrow from aubergine and cowpea
CROP_DOSE = {"mil": 6.4, "sorgho": 4.5, "mais": 7.7, "riz": 10.3, "manioc": 9.5, "arachide": 9.0,
             "niebe": 2.4, "coton": 16.7, "pasteque": 14.0, "oignon": 40.8, "aubergine": 11.9,
             "tomate": 11.9, "sesame": 2.4}

# fertilizer kg/ha by crop within each farm type (same order as FARM_TYPES)
TYPE_DOSE = {
    "mil": (3.4, 10.3, 6.1, 7.0), "sorgho": (3.9, 0.6, 11.9, 4.0), "mais": (9.0, 6.8, 8.5, 7.0),
    "riz": (15.8, 10.2, 4.5, 3.3), "manioc": (22.4, 10.8, 11.3, 1.5), "arachide": (5.3, 9.0, 8.5, 9.0),
    "niebe": (1.6, 3.7, 1.8, 1.2), "coton": (6.7, 9.8, 19.5, 12.5), "pasteque": (14.0, 13.8, 26.2, 0.7),
    "oignon": (375.0, 42.4, 26.9, 12.7), "aubergine": (78.5, 11.6, 15.3, 5.0),
}

# farm types: food crops, cash crops, cereal-legume association, mixed
FARM_TYPES = ("vivrier", "rente", "cereales_legumineuses", "mixte")
# regional shares of each type (%) and mean area relative to the national mean
FARM_TYPE_MIX = {
    "Sénégal": (19.9, 14.7, 54.2, 11.2), "Dakar": (20.0, 66.67, 13.33, 0.0),
    "Thiès": (5.49, 22.54, 61.56, 10.4), "Diourbel": (8.33, 10.61, 81.06, 0.0),
    "Fatick_Kaolack": (12.35, 7.37, 77.6, 2.67), "Kaffrine": (11.92, 10.54, 74.03, 3.51),
    "St-Louis": (30.09, 56.43, 10.03, 3.45), "Louga": (8.59, 36.87, 54.55, 0.0),
    "Matam": (59.66, 11.08, 17.05, 12.22), "Tambacounda_Kedougou": (20.23, 10.87, 55.08, 13.82),
    "Casamance": (25.03, 13.49, 38.29, 23.19),
}
FARM_TYPE_AREA = np.array([2.7, 4.5, 5.8, 6.5]) / 4.7
# area-share blocks each type draws from (indices into CROP_BLOCKS)
_FOOD, _CASH = (0, 1, 2), (3, 4)


@dataclass(frozen=True)
class CropTech:
    price: float  # FCFA/kg
    yield_: tuple  # (extensive, semi-intensive) kg/ha
    seed: tuple
    phyto: tuple
    equipment: tuple
    hired_labor: tuple
    labor_days: tuple = (40.0, 60.0)


TECH = {
    "mil": CropTech(173.8, (604, 854), (3874, 23718), (369, 1317), (973, 2794), (720, 6476)),
    "sorgho": CropTech(191.4, (666, 1005), (1829, 14138), (333, 1000), (1148, 2182), (141, 7343)),
    "mais": CropTech(194.6, (752, 1110), (2528, 20428), (450, 2296), (759, 1859), (800, 7899)),
    "riz": CropTech(224.8, (1095, 2372), (3301, 20509), (535, 4974), (569, 4279), (1045, 13417), (60.0, 90.0)),
    "manioc": CropTech(273.3, (789, 1851), (4458, 27621), (562, 647), (1138, 3684), (766, 14424)),
    "arachide": CropTech(185.4, (721, 975), (4443, 27769), (555, 1213), (1105, 3312), (1232, 5462)),
    "niebe": CropTech(300.0, (500, 750), (4000, 20000), (600, 1500), (1000, 3000), (1000, 5000)),
    "oignon": CropTech(150.0, (12000, 18000), (60000, 120000), (10000, 30000), (20000, 40000),
                       (30000, 80000), (120.0, 160.0)),
    "tomate": CropTech(120.0, (9000, 15000), (40000, 90000), (10000, 30000), (15000, 35000),
                       (25000, 70000), (120.0, 160.0)),
    "aubergine": CropTech(130.0, (8000, 13000), (35000, 80000), (8000, 25000), (15000, 35000),
                          (25000, 70000), (120.0, 160.0)),
    "pasteque": CropTech(80.0, (8000, 14000), (20000, 40000), (5000, 15000), (10000, 25000),
                         (15000, 40000), (80.0, 110.0)),
    "coton": CropTech(250.0, (700, 1100), (3000, 8000), (5000, 15000), (2000, 5000), (2000, 8000)),
    "sesame": CropTech(450.0, (400, 600), (2000, 6000), (500, 1500), (1000, 3000), (1000, 4000)),
}

FERTILIZER_PRICE = 300.0
SUBSIDY_RATE = 0.5
QUOTA_KG = 150.0
SEMI_SHARE = 0.5  # share of a fertilizer user's plots under semi-intensive practice
EXTENSIVE_DOSE = 0.2  # extensive-plot dose relative to semi-intensive, for users


def profile(name: str) -> RegionProfile:
    key = ALIASES.get(name.strip().lower(), name.strip())
    if key == NATIONAL.name:
        return NATIONAL
    if key not in REGIONS:
        raise KeyError(f"unknown profile {name!r}; choose from {', '.join(profile_names())}")
    return REGIONS[key]


def profile_names() -> list[str]:
    return [NATIONAL.name] + list(REGIONS)


def lognormal_sigma(mean: float, small_share: float, threshold: float = 5.0) -> float:
    """Log-scale spread putting ``small_share`` of a lognormal with the given
    mean at or below ``threshold``; the nearest attainable share otherwise."""
    a = math.log(threshold / mean)
    z = norm.ppf(small_share)

    def f(s):
        return (a + 0.5 * s * s) / s - z

    if a > 0:
        s_min = math.sqrt(2 * a)
        if f(s_min) >= 0:
            return s_min
        return brentq(f, 1e-3, s_min)
    return brentq(f, 1e-3, 10.0)


def _draw(rng, table: dict[str, float]) -> str:
    names = sorted(table)
    w = np.array([table[x] for x in names], dtype=float)
    return names[int(rng.choice(len(names), p=w / w.sum()))]


def _block_crop(rng, r: "RegionProfile", blocks) -> str:
    w = np.array([r.crop_shares[b] for b in blocks], dtype=float) + 1e-3
    return _draw(rng, CROP_BLOCKS[blocks[int(rng.choice(len(blocks), p=w / w.sum()))]])


def _value_per_ha(crop: str) -> float:
    t = TECH[crop]
    return t.yield_[0] * t.price


def _pick_crops(rng, r: "RegionProfile", kind: int) -> tuple[list[str], np.ndarray]:
    """Crops for one farm and their area shares.

    Value shares are drawn first so that the farm's type survives the
    value-based classification, then converted to area through the
    extensive-practice value per ha.
    """
    name = FARM_TYPES[kind]
    extra = int(min(rng.poisson(0.7), 2))
    if name in ("vivrier", "rente"):
        blocks = _FOOD if name == "vivrier" else _CASH
        groups = [[_block_crop(rng, r, blocks) for _ in range(1 + extra)]]
        split = np.array([1.0])
    elif name == "cereales_legumineuses":
        groups = [[_block_crop(rng, r, (0, 1)) for _ in range(1 + extra // 2)],
                  [_draw(rng, LEGUMES) for _ in range(1 + extra - extra // 2)]]
        c = float(rng.uniform(0.4, 0.6))
        split = np.array([c, 1.0 - c])
    else:
        cash = {**CROP_BLOCKS[3], "coton": 0.5, "sesame": 0.5}
        groups = [[_block_crop(rng, r, _FOOD) for _ in range(1 + extra // 2)],
                  [_draw(rng, cash) for _ in range(1 + extra - extra // 2)]]
        c = float(rng.uniform(0.42, 0.58))
        split = np.array([c, 1.0 - c])
    crops, value = [], []
    for g, part in zip(groups, split):
        g = list(dict.fromkeys(g))
        w = rng.dirichlet(np.full(len(g), 2.0)) * part
        for crop, v in zip(g, w):
            if crop in crops:
                value[crops.index(crop)] += v
            else:
                crops.append(crop)
                value.append(v)
    area = np.array(value) / np.array([_value_per_ha(c) for c in crops])
    return crops, area / area.sum()


def _exact_flags(rng, n: int, share: float) -> np.ndarray:
    k = int(round(share * n))
    flags = np.zeros(n, dtype=bool)
    flags[rng.permutation(n)[:k]] = True
    return flags


def _allocate(n: int, weights: dict[str, float]) -> dict[str, int]:
    """Largest-remainder allocation of ``n`` units."""
    total = sum(weights.values())
    raw = {k: n * w / total for k, w in weights.items()}
    out = {k: int(math.floor(v)) for k, v in raw.items()}
    rest = n - sum(out.values())
    for k in sorted(raw, key=lambda k: (-(raw[k] - out[k]), k))[:rest]:
        out[k] += 1
    return out


def generate_survey(seed: int, n: int, profile_name: str = "Sénégal", *, fallow: tuple = (0.2, 0.1, 0.5),
                    outlier_share: float = 0.01, missing_share: float = 0.01):
    """Generate ``(households, plots)`` row lists.

    With the national profile households are spread over regions in
    proportion to the regional sample sizes.  ``fallow`` is (share of
    households without fallow, low, high) for the uniform fallow fraction
    that sets declared land above cultivated land.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    prof = profile(profile_name)
    rng = np.random.default_rng(seed)
    if prof is NATIONAL:
        counts = _allocate(n, {r.name: r.sample_size for r in REGIONS.values()})
        regions = [REGIONS[name] for name in REGIONS for _ in range(counts[name])]
    else:
        regions = [prof] * n

    households, plots = [], []
    pending = []
    by_region: dict[str, list[int]] = {}
    for i, r in enumerate(regions):
        by_region.setdefault(r.name, []).append(i)
    users = np.zeros(n, dtype=bool)
    benef = np.zeros(n, dtype=bool)
    for name, idx in by_region.items():
        r = REGIONS.get(name, prof)
        u = _exact_flags(rng, len(idx), r.users)
        users[idx] = u
        uid = [j for j, f in zip(idx, u) if f]
        b = _exact_flags(rng, len(uid), min(1.0, r.beneficiaries / r.users) if r.users else 0.0)
        benef[uid] = b

    # farm areas, rescaled so each region's mean matches its profile
    areas = np.empty(n)
    kinds = np.zeros(n, dtype=int)
    for name, idx in by_region.items():
        r = REGIONS.get(name, prof)
        sigma = lognormal_sigma(r.mean_area, r.small_farm_share)
        draw = np.maximum(rng.lognormal(math.log(r.mean_area) - 0.5 * sigma ** 2, sigma, len(idx)), 0.05)
        mix = np.array(FARM_TYPE_MIX.get(name, FARM_TYPE_MIX[NATIONAL.name]), dtype=float)
        kinds[idx] = rng.choice(len(FARM_TYPES), size=len(idx), p=mix / mix.sum())
        draw = draw * np.array([FARM_TYPE_AREA[k] for k in kinds[idx]])
        areas[idx] = draw * (r.mean_area / draw.mean())

    for i, r in enumerate(regions):
        hid = f"H{i + 1:05d}"
        area = float(areas[i])
        dose = r.kg_per_ha / (r.users * (SEMI_SHARE + (1 - SEMI_SHARE) * EXTENSIVE_DOSE)) if r.users else 0.0

        crops, shares = _pick_crops(rng, r, kinds[i])

        season_area = {"rainy": 0.0, "dry": 0.0}
        season_labor = {"rainy": 0.0, "dry": 0.0}
        hh_plots = []
        for crop, sh in zip(crops, shares):
            tech = TECH[crop]
            season = "dry" if crop in DRY_SEASON else "rainy"
            a = round(float(area * sh), 4)
            if a <= 0:
                continue
            semi = bool(users[i] and rng.random() < SEMI_SHARE)
            j = 1 if semi else 0
            noise = lambda s=0.25: float(rng.lognormal(-0.5 * s * s, s))
            y = tech.yield_[j] * noise()
            if rng.random() < outlier_share:
                y *= 8.0
            kg_ha = 0.0
            if users[i]:
                crop_dose = TYPE_DOSE[crop][kinds[i]] if crop in TYPE_DOSE else CROP_DOSE[crop]
                kg_ha = dose * crop_dose / 8.7 * (1.0 if semi else EXTENSIVE_DOSE) * noise(0.3)
            labor = tech.labor_days[j] * noise(0.2)
            row = {"plot_id": None, "household": hid, "crop": crop, "season": season, "area": a,
                   "production": round(y * a, 3),
                   "seed": tech.seed[j] * noise() * a, "phyto": tech.phyto[j] * noise() * a,
                   "equipment": tech.equipment[j] * noise() * a,
                   "hired_labor": tech.hired_labor[j] * noise() * a, "other": 0.0,
                   "fertilizer_kg": kg_ha * a, "price": tech.price * noise(0.1),
                   "labor_days": labor * a}
            season_area[season] += a
            season_labor[season] += labor * a
            hh_plots.append(row)

        pending.append((i, r, hh_plots))

        no_fallow, lo, hi = fallow
        f = 0.0 if rng.random() < no_fallow else float(rng.uniform(lo, hi))
        ae = r.adult_equivalents * float(rng.uniform(0.8, 1.2))
        households.append({
            "id": hid, "region": r.name, "weight": round(float(rng.uniform(80.0, 120.0)), 3),
            "members": int(round(ae * 1.25)), "adult_equivalents": round(ae, 3),
            "exog_income": round(float(rng.lognormal(math.log(300_000) - 0.18, 0.6)), 2),
            "declared_area": round(season_area["rainy"] * (1 + f), 6),
            "declared_area_dry": round(season_area["dry"] * (1 + f), 6),
            "labor_rainy": round(season_labor["rainy"] * float(rng.uniform(1.3, 2.0)), 3),
            "labor_dry": round(season_labor["dry"] * float(rng.uniform(1.3, 2.0)), 3),
            "beneficiary": bool(benef[i]),
        })

    # scale doses so each region's fertilizer per cultivated ha matches its profile exactly
    totals: dict[str, list[float]] = {}
    for _, r, hp in pending:
        t = totals.setdefault(r.name, [0.0, 0.0])
        t[0] += sum(row["area"] for row in hp)
        t[1] += sum(row["fertilizer_kg"] for row in hp)
    plot_no = 0
    for i, r, hp in pending:
        area_tot, kg_tot = totals[r.name]
        scale = r.kg_per_ha * area_tot / kg_tot if kg_tot > 0 else 0.0
        for row in hp:
            row["fertilizer_kg"] *= scale
        fert_used = sum(row["fertilizer_kg"] for row in hp)
        # fertilizer spending at the prices actually paid
        sub = min(fert_used, QUOTA_KG) if benef[i] else 0.0
        paid = sub * (1 - SUBSIDY_RATE) * FERTILIZER_PRICE + (fert_used - sub) * FERTILIZER_PRICE
        unit = paid / fert_used if fert_used > 0 else FERTILIZER_PRICE
        for row in hp:
            plot_no += 1
            row["plot_id"] = f"P{plot_no:06d}"
            row["fertilizer"] = row["fertilizer_kg"] * unit
            if rng.random() < missing_share:
                row["price"] = None
            plots.append(row)
    return households, plots


HOUSEHOLD_HEADER = ["id", "region", "weight", "members", "adult_equivalents", "exog_income",
                    "declared_area", "declared_area_dry", "labor_rainy", "labor_dry", "beneficiary"]
PLOT_HEADER = ["plot_id", "household", "crop", "season", "area", "production", *COST_ITEMS,
               "fertilizer_kg", "price", "labor_days"]


def _cell(v):
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return round(v, 6)
    return v


def write_survey(households, plots, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_csv(directory / "households.csv", HOUSEHOLD_HEADER,
              ([_cell(h[c]) for c in HOUSEHOLD_HEADER] for h in households))
    write_csv(directory / "plots.csv", PLOT_HEADER, ([_cell(p[c]) for c in PLOT_HEADER] for p in plots))
    write_csv(directory / "crops.csv", ["crop", "name", "category"],
              ([c, name, cat] for c, (name, cat) in sorted(DEFAULT_CROPS.items())))


def survey_summary(households, plots) -> dict[str, dict[str, float]]:
    """Per-region means comparable with the profiles (unweighted)."""
    region = {h["id"]: h["region"] for h in households}
    out: dict[str, dict[str, float]] = {}
    for name in sorted(set(region.values())):
        ids = {h["id"] for h in households if h["region"] == name}
        hs = [h for h in households if h["id"] in ids]
        ps = [p for p in plots if p["household"] in ids]
        area = sum(p["area"] for p in ps)
        fert = sum(p["fertilizer_kg"] for p in ps)
        user_ids = {p["household"] for p in ps if p["fertilizer_kg"] > 0}
        ben = [h for h in hs if h["beneficiary"]]
        out[name] = {
            "households": len(hs),
            "mean_area": area / len(hs),
            "kg_per_ha": fert / area if area else 0.0,
            "users": len(user_ids) / len(hs),
            "beneficiaries": len(ben) / len(hs),
            "beneficiaries_among_users": (len([h for h in ben if h["id"] in user_ids]) / len(user_ids)
                                          if user_ids else 0.0),
        }
    return out
