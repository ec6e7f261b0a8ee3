import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import activity, household, model
from pmpsim.core import (Eligibility, PriceSystem, SubsidyPolicy, fmt, read_model, validate_model,
                         write_model)


def _two_household_fixture():
    acts = [activity("mil_ext_rainy", costs={"seed": 1000.0}),
            activity("ara_ext_rainy", "arachide", costs={"fertilizer": 3000.0}, fert=10.0)]
    hs = [household("H1", levels={"mil_ext_rainy": 2.0}, land=5.0),
          household("H2", levels={"ara_ext_rainy": 1.0, "mil_ext_rainy": 1.0}, land=3.0)]
    return model(acts, hs)


def test_consistent_fixture_has_no_diagnostics():
    m = _two_household_fixture()
    assert validate_model(m.households, m.activities, m.prices, m.products) == []


def test_land_overcommitted():
    m = _two_household_fixture()
    h = household("H3", levels={"mil_ext_rainy": 6.0}, land=5.0)
    diags = validate_model([h], m.activities, m.prices)
    assert len(diags) == 1
    assert "land overcommitted" in diags[0].message and diags[0].subject == "H3"


def test_buy_factor_below_one():
    m = _two_household_fixture()
    prices = PriceSystem(dict(m.prices.market_price), {"mil": 0.9})
    diags = validate_model(m.households, m.activities, prices)
    assert [d.message for d in diags] == ["buy factor below 1"]


def test_fertilizer_without_cost_flagged():
    acts = [activity("a", fert=10.0)]
    m = model(acts)
    assert any("fertilizer cost is zero" in d.message for d in validate_model([], m.activities, m.prices))


def test_validate_is_idempotent_and_pure():
    m = _two_household_fixture()
    bad = household("H3", levels={"mil_ext_rainy": 6.0}, land=5.0, weight=-1.0)
    first = validate_model([bad], m.activities, m.prices)
    assert validate_model([bad], m.activities, m.prices) == first
    assert bad.weight == -1.0 and len(first) == 2


def test_policy_invariants():
    with pytest.raises(ValueError):
        SubsidyPolicy("x", 1.5, 10)
    with pytest.raises(ValueError):
        SubsidyPolicy("x", 0.5, -1)


def test_eligibility_kinds():
    small = household("A", levels={"a": 4.0})
    big = household("B", levels={"a": 6.0}, beneficiary=True)
    assert Eligibility("area_leq", 5.0)(small) and not Eligibility("area_leq", 5.0)(big)
    ben = Eligibility.beneficiaries([small, big])
    assert not ben(small) and ben(big)
    assert Eligibility.from_dict(ben.to_dict()) == ben
    assert not Eligibility("none")(small)
    with pytest.raises(ValueError):
        Eligibility.from_dict({"kind": "regional"})


def test_zero_rate_policy_makes_nobody_eligible():
    p = SubsidyPolicy("abol", 0.0, 150.0)
    assert not p.eligible(household()) and p.effective_quota(household()) == 0.0


@settings(max_examples=200)
@given(st.floats(allow_nan=False))
def test_float_format_round_trips(x):
    assert float(fmt(x)) == x


def test_model_round_trip(tmp_path, small_run):
    m = small_run.model
    write_model(m, tmp_path / "m")
    back = read_model(tmp_path / "m")
    assert back == m


def test_model_round_trip_with_consumption_and_infinite_labor(tmp_path):
    acts = [activity("a", costs={"seed": 12.5, "fertilizer": 300.0}, fert=1.0, labor=3.0)]
    h = household("H", levels={"a": 1.0}, consumption={"mil": 250.0}, labor=math.inf)
    m = model(acts, [h], buy={"mil": 1.2}, sell={"mil": 0.8})
    write_model(m, tmp_path / "m")
    back = read_model(tmp_path / "m")
    assert back.households[0].observed_consumption == {"mil": 250.0}
    assert back.households[0].labor("rainy") == math.inf
    assert back.activities == m.activities and back.prices == m.prices
