import json
from decimal import Decimal

import pytest

from builders import activity, calib, household, model
from pmpsim.core import Eligibility, SubsidyPolicy
from pmpsim.household import solve_household
from pmpsim.scenario import (PRESETS, BaselineSpec, ScenarioSpec, eligibility_rate, load_scenarios,
                             parse_scenarios, project_baseline, read_solutions, run_scenario,
                             write_solutions)

# projected values of unit inputs, written out by hand from the shift table
UNIT_YIELD = {"arachide": 1.341, "mais": 1.332, "mil": 1.135, "oignon": 1.047, "riz": 1.133}
UNIT_PRICE = {"arachide": 1.135, "mais": 1.098, "mil": 1.24, "oignon": 1.304, "riz": 1.294}
COST_FACTOR = float(Decimal("1.027") ** 6)


def unit_model():
    acts = [activity(f"{p}_a", p, yield_=1.0, costs={"seed": 1.0, "phyto": 1.0}) for p in UNIT_YIELD]
    acts.append(activity("manioc_a", "manioc", yield_=1.0, costs={"seed": 1.0}))
    return model(acts, [household(levels={"mil_a": 1.0}, cash=1.0)],
                 prices={p: 1.0 for p in [*UNIT_YIELD, "manioc"]}, pf=1.0)


def test_cost_factor_oracle():
    assert BaselineSpec().cost_factor == pytest.approx(COST_FACTOR, rel=1e-14)
    # 1.027**6 = 1.1733367..., so 1 000 FCFA grows to 1 173.34
    assert 1000.0 * BaselineSpec().cost_factor == pytest.approx(1173.34, abs=0.005)


def test_unit_projection():
    new, _ = project_baseline(unit_model())
    for p in UNIT_YIELD:
        a = new.activities[f"{p}_a"]
        assert a.yield_ == pytest.approx(UNIT_YIELD[p], rel=1e-12)
        assert new.prices.market_price[p] == pytest.approx(UNIT_PRICE[p], rel=1e-12)
        assert a.cost("seed") == pytest.approx(COST_FACTOR, rel=1e-12)
    # products without a listed shift keep yield and price
    assert new.activities["manioc_a"].yield_ == 1.0
    assert new.prices.market_price["manioc"] == 1.0
    assert new.prices.fertilizer_market_price == pytest.approx(COST_FACTOR, rel=1e-12)
    assert new.households[0].cash_endowment == pytest.approx(COST_FACTOR, rel=1e-12)


def test_arachide_yield_example():
    m = model([activity("a", "arachide", yield_=1000.0)])
    new, _ = project_baseline(m)
    assert new.activities["a"].yield_ == pytest.approx(1341.0, rel=1e-12)


def test_zero_years_without_shifts_is_identity():
    m = unit_model()
    new, _ = project_baseline(m, BaselineSpec(years=0, yield_shift={}, price_shift={}))
    assert new == m


@pytest.mark.parametrize("kwargs", [{"years": -1}, {"cost_inflation": -1.0},
                                    {"yield_shift": {"mil": -1.0}}, {"price_shift": {"mil": -2.0}}])
def test_baseline_spec_validation(kwargs):
    with pytest.raises(ValueError):
        BaselineSpec(**kwargs)


def test_baseline_spec_dict_round_trip():
    spec = BaselineSpec(years=3, cost_inflation=0.01, yield_shift={"mil": 0.1}, price_shift={})
    assert BaselineSpec.from_dict(spec.to_dict()) == spec
    nested = BaselineSpec.from_dict({"years": 2, "inflation": 0.05, "shifts": {"yield": {"riz": 0.2}}})
    assert nested.years == 2 and nested.cost_inflation == 0.05 and nested.yield_shift == {"riz": 0.2}


# ---------------------------------------------------------------- eligibility


def _area_households(small_areas, large_areas):
    hs = [household(f"S{i}", levels={"a": a}) for i, a in enumerate(small_areas)]
    hs += [household(f"L{i}", levels={"a": a}, land=20.0) for i, a in enumerate(large_areas)]
    return hs


def test_eligibility_rate_presets():
    hs = _area_households([1.0, 4.0, 5.0], [5.5, 12.0])
    assert eligibility_rate(hs, PRESETS["Univ"].policy(hs)) == 1.0
    assert eligibility_rate(hs, PRESETS["Abol"].policy(hs)) == 0.0
    assert eligibility_rate(hs, PRESETS["Cibl"].policy(hs)) == pytest.approx(0.6)


def test_cibl_rate_constructed_weights():
    small = [household("S", levels={"a": 3.0}, weight=62.0)]
    large = [household("L", levels={"a": 8.0}, land=20.0, weight=38.0)]
    hs = small + large
    assert eligibility_rate(hs, PRESETS["Cibl"].policy(hs)) == pytest.approx(0.62, rel=1e-12)


def test_zero_weight_rejected():
    hs = [household(weight=0.0)]
    with pytest.raises(ValueError):
        eligibility_rate(hs, PRESETS["Univ"].policy(hs))


def test_cibl_nested_in_univ(small_run):
    hs = small_run.projected.households
    univ, cibl = PRESETS["Univ"].policy(hs), PRESETS["Cibl"].policy(hs)
    assert all(univ.eligible(h) for h in hs if cibl.eligible(h))


# ---------------------------------------------------------------- specs and configs


@pytest.mark.parametrize("kwargs", [
    dict(name="Abol", rate=0.5, quota_kg=75.0, eligibility={"kind": "all"}),
    dict(name="Univ", rate=0.5, quota_kg=150.0, eligibility={"kind": "all"}),
    dict(name="Univ", rate=0.5, quota_kg=75.0, eligibility={"kind": "none"}),
    dict(name="Cibl", rate=0.5, quota_kg=75.0, eligibility={"kind": "area_leq", "threshold_ha": 3}),
    dict(name="x", rate=1.5, quota_kg=75.0),
    dict(name="x", rate=0.5, quota_kg=75.0, eligibility={"kind": "regional"}),
])
def test_invalid_scenarios_rejected(kwargs):
    with pytest.raises(ValueError):
        ScenarioSpec(**kwargs)


def test_abolition_via_empty_eligibility_allowed():
    ScenarioSpec("Abol", 0.5, 75.0, {"kind": "none"})


def test_spec_dict_round_trip():
    for spec in PRESETS.values():
        assert ScenarioSpec.from_dict(spec.to_dict()) == spec


def test_parse_forms():
    assert parse_scenarios("Univ") == [PRESETS["Univ"]]
    assert parse_scenarios({"name": "Cibl"}) == [PRESETS["Cibl"]]
    got = parse_scenarios({"scenarios": ["Abol", {"name": "half", "rate": 0.25, "quota_kg": 50}]})
    assert [s.name for s in got] == ["Abol", "half"] and got[1].rate == 0.25


def test_load_json_and_toml(tmp_path):
    data = {"scenarios": [{"name": "deep", "rate": 0.8, "quota_kg": 100,
                           "eligibility": {"kind": "area_leq", "threshold_ha": 2},
                           "baseline": {"years": 4, "inflation": 0.03}}]}
    (tmp_path / "s.json").write_text(json.dumps(data))
    (tmp_path / "s.toml").write_text(
        '[[scenarios]]\nname = "deep"\nrate = 0.8\nquota_kg = 100\n'
        '[scenarios.eligibility]\nkind = "area_leq"\nthreshold_ha = 2\n'
        '[scenarios.baseline]\nyears = 4\ninflation = 0.03\n')
    a, b = load_scenarios(tmp_path / "s.json"), load_scenarios(tmp_path / "s.toml")
    assert a == b
    assert a[0].baseline.years == 4 and a[0].baseline.cost_inflation == 0.03
    assert a[0].policy([]).eligibility == Eligibility("area_leq", 2.0)


def test_missing_name_rejected():
    with pytest.raises(ValueError):
        ScenarioSpec.from_dict({"rate": 0.5})


# ---------------------------------------------------------------- runs


def _fert_household(beneficiary=True, cash=1e9):
    # 100 kg/ha of fertilizer, unconstrained optimum near 2 ha: 200 kg demand
    a = activity("a", yield_=1000.0, fert=100.0)
    m = model([a], [household(levels={"a": 2.0}, cash=cash, beneficiary=beneficiary)], pf=300.0)
    return m.households[0], calib({"a": 30000.0}, {"a": 20000.0}), m


def test_abolition_on_quota_household():
    h, c, m = _fert_household()
    base_pol = SubsidyPolicy("b", 0.5, 150.0)
    base, _ = solve_household(h, c, m, base_pol)
    abol, _ = solve_household(h, c, m, PRESETS["Abol"].policy([h]))
    assert base.fertilizer_subsidized_kg == pytest.approx(150.0)
    assert base.subsidy_outlay == pytest.approx(0.5 * 300.0 * 150.0)
    assert abol.subsidy_outlay == 0.0
    assert abol.total_income <= base.total_income
    # the household is above the quota, so the marginal price is unchanged and only a
    # lump-sum transfer of rate * price * quota disappears
    assert base.levels["a"] == pytest.approx(abol.levels["a"], rel=1e-9)
    assert base.total_income - abol.total_income == pytest.approx(0.5 * 300.0 * 150.0, rel=1e-9)


def test_universal_subsidy_raises_fertilizer_of_previously_ineligible():
    h, c, m = _fert_household(beneficiary=False)
    before, _ = solve_household(h, c, m, PRESETS["baseline"].policy([h]))
    after, _ = solve_household(h, c, m, PRESETS["Univ"].policy([h]))
    assert before.fertilizer_subsidized_kg == 0.0
    assert after.fertilizer_kg >= before.fertilizer_kg - 1e-9
    assert after.total_income >= before.total_income


def test_baseline_run_reproduces_anchor(small_run):
    res = small_run.runs["baseline"]
    assert not res.failures
    worst = 0.0
    for hid, c in small_run.projected_cal.items():
        for a, x0 in c.observed.items():
            worst = max(worst, abs(res.solutions[hid].levels[a] - x0) / x0)
    assert worst <= 1e-6


def test_policy_ordering(small_run):
    hs = small_run.projected.households
    t = {k: small_run.runs[k].totals(hs) for k in ("Abol", "Univ", "Cibl")}
    assert t["Abol"]["subsidy_outlay"] == 0.0
    assert t["Cibl"]["subsidy_outlay"] <= t["Univ"]["subsidy_outlay"]
    assert t["Univ"]["total_income"] >= t["Abol"]["total_income"]


def test_run_accepts_plain_policy(small_run):
    pol = SubsidyPolicy("custom", 0.3, 50.0)
    res = run_scenario(small_run.projected, small_run.projected_cal, pol)
    assert res.name == "custom" and len(res.solutions) == len(small_run.projected_cal)


def test_solution_files_round_trip(small_run, tmp_path):
    sols = small_run.runs["Cibl"].solutions
    write_solutions(sols, tmp_path)
    back = read_solutions(tmp_path)
    assert set(back) == set(sols)
    for hid, s in sols.items():
        b = back[hid]
        assert b.levels == s.levels
        assert b.total_income == s.total_income and b.subsidy_outlay == s.subsidy_outlay
        assert b.regime == s.regime and b.internal_price == s.internal_price
