import json
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import activity, household, model
from pmpsim.core import Solution
from pmpsim.report import (IndicatorTable, aggregate, compare, cost_benefit, cost_benefit_from_totals,
                           income_distribution, write_comparison, write_cost_benefit,
                           write_distribution, write_plot_data, write_table)
from pmpsim.typology import FarmClass


def sol(hid, levels=None, income=0.0, sub=0.0, unsub=0.0, outlay=0.0):
    return Solution(household=hid, levels=dict(levels or {}), sales={}, purchases={}, self_consumed={},
                    consumed={}, internal_price={}, fertilizer_subsidized_kg=sub,
                    fertilizer_unsubsidized_kg=unsub, duals={}, regime={}, farm_income=income,
                    total_income=income, subsidy_outlay=outlay)


def two_farm_model(w1=1.0, w2=3.0):
    acts = [activity("m", "mil", yield_=800.0, fert=50.0), activity("r", "riz", yield_=3000.0)]
    hs = [household("A", weight=w1, region="Nord"), household("B", weight=w2, region="Sud")]
    return model(acts, hs)


SOLS = {"A": sol("A", {"m": 2.0}, income=100.0, sub=50.0, unsub=50.0, outlay=7500.0),
        "B": sol("B", {"m": 1.0, "r": 1.0}, income=200.0, unsub=50.0)}


def test_weighted_mean_income():
    t = aggregate(SOLS, two_farm_model(), "national")
    assert t.value("national", "mean_total_income") == pytest.approx(175.0)
    assert t.value("national", "area_ha") == pytest.approx(2.0 + 3 * 2.0)
    assert t.value("national", "production_kg") == pytest.approx(1600.0 + 3 * 3800.0)
    assert t.value("national", "fertilizer_kg_ha") == pytest.approx((100.0 + 3 * 50.0) / 8.0)
    assert t.value("national", "beneficiary_rate_pct") == pytest.approx(25.0)
    assert t.value("national", "subsidy_outlay") == pytest.approx(7500.0)


def test_single_household_aggregates_equal_its_values():
    m = two_farm_model()
    t = aggregate({"A": SOLS["A"]}, m, "national")
    assert t.value("national", "mean_total_income") == 100.0
    assert t.value("national", "area_ha") == 2.0
    assert t.value("national", "yield_kg_ha") == 800.0
    assert t.value("national", "area_share_pct") == 100.0


def test_unit_weights_give_plain_sums():
    t = aggregate(SOLS, two_farm_model(1.0, 1.0), "national")
    assert t.value("national", "area_ha") == 4.0
    assert t.value("national", "mean_total_income") == 150.0


def test_region_and_crop_groupings():
    m = two_farm_model()
    reg = aggregate(SOLS, m, "region")
    assert reg.groups() == ["Nord", "Sud"]
    shares = [reg.value(g, "area_share_pct") for g in reg.groups()]
    assert math.fsum(shares) == pytest.approx(100.0, abs=1e-6)
    crop = aggregate(SOLS, m, "crop")
    assert crop.value("riz", "area_ha") == 3.0
    assert crop.value("mil", "yield_kg_ha") == 800.0
    with pytest.raises(KeyError):
        crop.value("mil", "mean_total_income")


def test_size_grouping_needs_classes():
    m = two_farm_model()
    with pytest.raises(ValueError):
        aggregate(SOLS, m, "size")
    classes = {"A": FarmClass("petite", "vivrier", 1.0), "B": FarmClass("grande", "rente", 2.0)}
    t = aggregate(SOLS, m, "specialization", classes)
    assert t.groups() == ["rente", "vivrier"]


def test_unknown_grouping_rejected():
    with pytest.raises(ValueError):
        aggregate(SOLS, two_farm_model(), "district")


def test_zero_area_cells_are_empty():
    t = aggregate({"A": sol("A")}, two_farm_model(), "national")
    assert t.value("national", "yield_kg_ha") is None
    assert t.value("national", "fertilizer_kg_ha") is None


def test_compare_examples():
    base = IndicatorTable("national", [("national", "x", 200.0, "u"), ("national", "z", 0.0, "u"),
                                       ("national", "y", 0.0, "u")])
    scen = IndicatorTable("national", [("national", "x", 202.0, "u"), ("national", "z", 5.0, "u"),
                                       ("national", "y", 0.0, "u")])
    out = compare(scen, base)
    assert out.value("national", "x") == pytest.approx(1.0)
    assert out.value("national", "z") == "new"
    assert out.value("national", "y") == 0.0


def test_compare_self_is_zero():
    t = aggregate(SOLS, two_farm_model(), "region")
    assert all(v in (0.0, None) for _, _, v, _ in compare(t, t).rows)


def test_compare_key_mismatch():
    a = IndicatorTable("national", [("national", "x", 1.0, "u")])
    b = IndicatorTable("national", [("national", "y", 1.0, "u")])
    with pytest.raises(KeyError):
        compare(a, b)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.one_of(st.just(0.0), st.floats(1e-6, 10.0)), st.floats(-1e5, 1e6), st.floats(0.0, 500.0),
                          st.floats(0.1, 100.0)), min_size=1, max_size=6),
       st.floats(0.5, 20.0))
def test_aggregate_linear_in_weights(rows, factor):
    acts = [activity("m", "mil", yield_=800.0)]
    hs1 = [household(f"H{i}", weight=w) for i, (_, _, _, w) in enumerate(rows)]
    hs2 = [household(f"H{i}", weight=w * factor) for i, (_, _, _, w) in enumerate(rows)]
    sols = {f"H{i}": sol(f"H{i}", {"m": x}, income=inc, unsub=f)
            for i, (x, inc, f, _) in enumerate(rows)}
    t1 = aggregate(sols, model(acts, hs1), "national")
    t2 = aggregate(sols, model(acts, hs2), "national")
    for ind in ("area_ha", "production_kg", "subsidy_outlay"):
        assert t2.value("national", ind) == pytest.approx(factor * t1.value("national", ind),
                                                          rel=1e-9, abs=1e-9)
    for ind in ("yield_kg_ha", "fertilizer_kg_ha", "mean_total_income", "area_share_pct"):
        a, b = t1.value("national", ind), t2.value("national", ind)
        assert (a is None and b is None) or b == pytest.approx(a, rel=1e-9, abs=1e-6)


# ---------------------------------------------------------------- distribution


def test_identical_runs_give_flat_curve():
    ref = {h: sol(h, income=100.0 + i) for i, h in enumerate("ABC")}
    curve = income_distribution(ref, ref, {h: 1.0 for h in "ABC"})
    assert [g for _, g in curve.points] == [0.0, 0.0, 0.0]
    assert curve.points[-1][0] == 1.0


def test_single_gain_step():
    ref = {h: sol(h, income=100.0) for h in "ABCD"}
    run = dict(ref, C=sol("C", income=110.0))
    curve = income_distribution(run, ref, {h: 1.0 for h in "ABCD"})
    assert [x for x, _ in curve.points] == [0.25, 0.5, 0.75, 1.0]
    assert [g for _, g in curve.points] == pytest.approx([0.0, 0.0, 0.0, 10.0])


def test_curve_flat_for_unconstrained_share():
    # 11 of 20 equally weighted households (55 %) gain nothing, the rest gain 1 to 9 %
    ref = {f"H{i:02d}": sol(f"H{i:02d}", income=1000.0) for i in range(20)}
    run = {h: sol(h, income=1000.0 + (10.0 * (i - 10) if i >= 11 else 0.0))
           for i, h in enumerate(sorted(ref))}
    weights = {h: 1.0 for h in ref}
    curve = income_distribution(run, ref, weights)
    flat = [x for x, g in curve.points if g == 0.0]
    assert flat[-1] == pytest.approx(0.55)
    assert all(g > 0 for x, g in curve.points if x > flat[-1])


def test_nonpositive_reference_excluded():
    ref = {"A": sol("A", income=0.0), "B": sol("B", income=50.0)}
    run = {"A": sol("A", income=10.0), "B": sol("B", income=55.0)}
    curve = income_distribution(run, ref, {"A": 1.0, "B": 1.0})
    assert curve.excluded == ["A"] and curve.points == [(1.0, pytest.approx(10.0))]


def test_distribution_needs_same_households():
    with pytest.raises(KeyError):
        income_distribution({"A": sol("A")}, {"B": sol("B")}, {"A": 1.0, "B": 1.0})


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(1.0, 1e5), st.floats(-50.0, 50.0), st.floats(0.1, 5.0)),
                min_size=1, max_size=8), st.randoms(use_true_random=False))
def test_distribution_order_invariant(rows, rnd):
    ids = [f"H{i}" for i in range(len(rows))]
    ref = {h: sol(h, income=r[0]) for h, r in zip(ids, rows)}
    run = {h: sol(h, income=r[0] * (1 + r[1] / 100)) for h, r in zip(ids, rows)}
    w = {h: r[2] for h, r in zip(ids, rows)}
    shuffled = list(ids)
    rnd.shuffle(shuffled)
    a = income_distribution(run, ref, w)
    b = income_distribution({h: run[h] for h in shuffled}, {h: ref[h] for h in reversed(shuffled)},
                            {h: w[h] for h in shuffled})
    assert a == b


# ---------------------------------------------------------------- cost-benefit


@pytest.mark.parametrize("cost,benefit,ratio", [(1.99e9, 2.39e9, 1.2010), (3.88e9, 4.08e9, 1.0515),
                                                (4.64e9, 5.17e9, 1.1142)])
def test_cost_benefit_totals(cost, benefit, ratio):
    assert cost_benefit_from_totals(cost, benefit).ratio == pytest.approx(ratio, abs=5e-5)


def test_abolition_against_itself():
    abol = {h: sol(h, income=10.0) for h in "AB"}
    cb = cost_benefit(abol, abol, {"A": 1.0, "B": 2.0})
    assert (cb.cost, cb.benefit, cb.ratio) == (0.0, 0.0, None)


def test_cost_benefit_weighted():
    abol = {"A": sol("A", income=100.0), "B": sol("B", income=100.0)}
    run = {"A": sol("A", income=130.0, outlay=20.0), "B": sol("B", income=105.0, outlay=10.0)}
    cb = cost_benefit(run, abol, {"A": 2.0, "B": 1.0})
    assert cb.cost == 50.0 and cb.benefit == 65.0 and cb.ratio == 1.3


def test_cost_benefit_missing_household():
    with pytest.raises(KeyError):
        cost_benefit({"A": sol("A")}, {}, {"A": 1.0})


def test_group_benefits_add_up(small_run):
    runs, hs = small_run.runs, small_run.projected.households
    w = {h.id: h.weight for h in hs}
    national = cost_benefit(runs["Univ"].solutions, runs["Abol"].solutions, w)
    parts = {}
    for hid, c in small_run.classes.items():
        parts.setdefault(c.size, []).append(hid)
    pieces = [cost_benefit(runs["Univ"].solutions, runs["Abol"].solutions, w, ids) for ids in parts.values()]
    assert math.fsum(p.benefit for p in pieces) == pytest.approx(national.benefit, rel=1e-9)
    assert math.fsum(p.cost for p in pieces) == pytest.approx(national.cost, rel=1e-9)


def test_report_sums_are_order_independent(small_run):
    runs, m = small_run.runs, small_run.projected
    sols = runs["Cibl"].solutions
    ids = list(sols)
    random.Random(5).shuffle(ids)
    shuffled = {h: sols[h] for h in ids}
    assert aggregate(sols, m, "size", small_run.classes) == aggregate(shuffled, m, "size", small_run.classes)


# ---------------------------------------------------------------- files


def test_writers(tmp_path):
    m = two_farm_model()
    t = aggregate(SOLS, m, "region")
    write_table(t, tmp_path / "t.csv")
    text = (tmp_path / "t.csv").read_text()
    assert "production_t" in text and "production_kg" not in text
    assert "Nord,production_t,1.6,t" in text
    write_comparison(compare(t, t), tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "region,indicator,change_pct,unit"
    curve = income_distribution(SOLS, SOLS, {"A": 1.0, "B": 3.0})
    write_distribution(curve, tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "cumulative_share,gap_pct"
    write_cost_benefit({"national": cost_benefit_from_totals(0.0, 0.0)}, tmp_path / "cb.json")
    assert json.loads((tmp_path / "cb.json").read_text()) == {"national": {"cost": 0.0, "benefit": 0.0,
                                                                            "ratio": None}}
    write_plot_data({"Univ": t}, {"Univ": compare(t, t)}, {"Univ": curve}, tmp_path / "plot_")
    assert (tmp_path / "plot_indicators_long.csv").exists()
    assert (tmp_path / "plot_distribution_long.csv").exists()
