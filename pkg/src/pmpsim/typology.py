"""Practice typology (hierarchical clustering) and farm classification."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .core import Diagnostic, Household, Model, PriceSystem

SIZE_CLASSES = ("petite", "moyenne", "grande")
SPECIALIZATIONS = ("vivrier", "rente", "cereales_legumineuses", "mixte")
SMALL_MAX = 400_000.0
LARGE_MIN = 850_000.0
SPECIALIZATION_SHARE = 0.65

EXPENDITURE_ITEMS = ("seed", "fertilizer", "phyto", "equipment", "hired_labor")


@dataclass(frozen=True)
class FarmClass:
    size: str
    specialization: str
    value: float


def classify_practices(observations: Sequence[tuple[str, Sequence[float]]], n_clusters: int = 2):
    """Label plots of one crop as extensive or semi-intensive.

    ``observations`` holds ``(plot_id, per-ha expenditures)`` pairs.  Rows are
    ordered by plot id before clustering, so the result does not depend on
    input order.  Returns ``(labels, diagnostics)``.
    """
    if n_clusters != 2:
        raise ValueError("only two practice levels are supported")
    if len(observations) < n_clusters:
        raise ValueError(f"need at least {n_clusters} observations, got {len(observations)}")
    obs = sorted(observations, key=lambda o: o[0])
    ids = [o[0] for o in obs]
    X = np.array([list(o[1]) for o in obs], dtype=float)
    if np.any(X < 0):
        raise ValueError("expenditures must be >= 0")
    sd = X.std(axis=0)
    if not np.any(sd > 0):
        return {i: "extensive" for i in ids}, [Diagnostic("practices", "all observations identical; "
                                                          "every plot labeled extensive")]
    Z = np.where(sd > 0, (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0), 0.0)
    cut = fcluster(linkage(Z, method="ward", metric="euclidean"), t=n_clusters, criterion="maxclust")
    totals = X.sum(axis=1)
    means = {c: totals[cut == c].mean() for c in np.unique(cut)}
    if len(means) < 2:
        return {i: "extensive" for i in ids}, [Diagnostic("practices", "single effective cluster")]
    low = min(means, key=lambda c: (means[c], c))
    return {i: ("extensive" if c == low else "semi_intensive") for i, c in zip(ids, cut)}, []


def classify_all_practices(by_crop: Mapping[str, Sequence[tuple[str, Sequence[float]]]]):
    """Run :func:`classify_practices` crop by crop; tiny crops stay extensive."""
    labels: dict[str, str] = {}
    diags: list[Diagnostic] = []
    for crop in sorted(by_crop):
        obs = by_crop[crop]
        if len(obs) < 2:
            labels.update({pid: "extensive" for pid, _ in obs})
            diags.append(Diagnostic(crop, "too few plots to cluster; labeled extensive"))
            continue
        lab, d = classify_practices(obs)
        labels.update(lab)
        diags.extend(Diagnostic(crop, x.message) for x in d)
    return labels, diags


def size_class(value: float) -> str:
    """Economic size class; both 400 000 and 850 000 fall in the middle class."""
    if value < SMALL_MAX:
        return "petite"
    if value <= LARGE_MIN:
        return "moyenne"
    return "grande"


def production_values(household: Household, model: Model,
                      prices: PriceSystem | None = None) -> dict[str, float]:
    """Base-year production value per product at market prices."""
    prices = model.prices if prices is None else prices
    out: dict[str, float] = {}
    for aid, x in sorted(household.observed_levels.items()):
        a = model.activities[aid]
        out[a.product] = out.get(a.product, 0.0) + x * a.yield_ * prices.market_price[a.product]
    return out


def economic_size(household: Household, model: Model, prices: PriceSystem | None = None):
    value = sum(production_values(household, model, prices).values())
    return size_class(value), value


def specialization_from_shares(shares: Mapping[str, float]) -> str:
    """Apply the 65 % rule to value shares keyed by product category."""
    g = {c: shares.get(c, 0.0) for c in ("cereal", "root_tuber", "legume", "cash_horticulture",
                                         "cash_other")}
    if g["cereal"] + g["root_tuber"] >= SPECIALIZATION_SHARE:
        return "vivrier"
    if g["legume"] + g["cash_horticulture"] + g["cash_other"] >= SPECIALIZATION_SHARE:
        return "rente"
    if g["cereal"] + g["legume"] >= SPECIALIZATION_SHARE:
        return "cereales_legumineuses"
    return "mixte"


def specialization(household: Household, model: Model, prices: PriceSystem | None = None) -> str:
    values = production_values(household, model, prices)
    total = sum(values.values())
    if total <= 0:
        raise ValueError(f"household {household.id}: zero production value")
    shares: dict[str, float] = {}
    for p, v in values.items():
        cat = model.products[p].category
        shares[cat] = shares.get(cat, 0.0) + v / total
    return specialization_from_shares(shares)


def classify_farms(model: Model, prices: PriceSystem | None = None):
    """Size and specialization for every household; returns ``(classes, diagnostics)``."""
    classes: dict[str, FarmClass] = {}
    diags: list[Diagnostic] = []
    for h in sorted(model.households, key=lambda h: h.id):
        size, value = economic_size(h, model, prices)
        if value > 0:
            spec = specialization(h, model, prices)
        else:
            spec = "mixte"
            diags.append(Diagnostic(h.id, "zero production value; specialization set to mixte"))
        classes[h.id] = FarmClass(size, spec, value)
    return classes, diags
