import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idm.errors import (DimensionMismatch, DuplicateUnit, NonPositiveFactor,
                        UnknownDimension, UnknownUnit)
from idm.quantities import REL_TOL, Quantity, UnitRegistry, values_equal

import oracles


def sample_registry() -> UnitRegistry:
    reg = UnitRegistry()
    for uid, name, dim, factor, offset in oracles.UNIT_TABLE:
        reg.register_unit(uid, name, dim, factor, offset)
    return reg


def test_base_unit_creates_dimension():
    reg = UnitRegistry()
    reg.register_unit("m", "m", "length", 1.0)
    assert reg.has_dimension("length")
    assert reg.dimension("length").base_unit == "m"


def test_non_base_unit_cannot_create_dimension():
    reg = UnitRegistry()
    with pytest.raises(UnknownDimension):
        reg.register_unit("cm", "cm", "length", 0.01)
    with pytest.raises(UnknownDimension):
        reg.register_unit("degC", "°C", "temperature", 1.0, 273.15)


def test_registration_rejects_duplicates_and_bad_factors():
    reg = sample_registry()
    with pytest.raises(DuplicateUnit):
        reg.register_unit("m", "metre", "length", 1.0)
    with pytest.raises(NonPositiveFactor):
        reg.register_unit("bad", "bad", "length", 0.0)
    with pytest.raises(NonPositiveFactor):
        reg.register_unit("bad", "bad", "length", -2.0)
    with pytest.raises(NonPositiveFactor):
        reg.register_unit("bad", "bad", "length", float("nan"))


def test_lookup_errors():
    reg = sample_registry()
    with pytest.raises(UnknownUnit):
        reg.unit("furlong")
    with pytest.raises(UnknownDimension):
        reg.dimension("speed")


def test_linear_conversion_matches_hand_arithmetic():
    reg = sample_registry()
    # 180 cm -> 1.8 m -> 1.8 / 0.001 mm
    got = reg.convert(Quantity(180.0, "cm"), "mm")
    assert got.unit == "mm"
    assert got.value == pytest.approx(180.0 * 0.01 / 0.001, rel=REL_TOL)
    assert reg.base_value(Quantity(2.5, "kg")) == pytest.approx(2.5)
    assert reg.base_value(Quantity(2.5, "g")) == pytest.approx(0.0025)


def test_affine_conversion_matches_known_temperatures():
    reg = sample_registry()
    reg.register_unit("degF", "°F", "temperature",
                      5.0 / 9.0, 273.15 - 32.0 * 5.0 / 9.0)
    assert reg.convert(Quantity(0.0, "degC"), "K").value == pytest.approx(273.15)
    assert reg.convert(Quantity(100.0, "degC"), "degF").value == pytest.approx(212.0)
    assert reg.convert(Quantity(-40.0, "degF"), "degC").value == pytest.approx(-40.0)


def test_identity_conversion_returns_same_quantity():
    reg = sample_registry()
    q = Quantity(5.0, "cm")
    assert reg.convert(q, "cm") == q


def test_convert_rejects_cross_dimension():
    reg = sample_registry()
    with pytest.raises(DimensionMismatch):
        reg.convert(Quantity(1.0, "kg"), "m")
    with pytest.raises(DimensionMismatch):
        reg.compare(Quantity(1.0, "kg"), Quantity(1.0, "K"))


def test_compare_is_tolerant_near_equality():
    reg = sample_registry()
    assert reg.compare(Quantity(1.0, "m"), Quantity(100.0, "cm")) == 0
    assert reg.compare(Quantity(1.0, "m"), Quantity(1.0 + 5e-10, "m")) == 0
    assert reg.compare(Quantity(1.0, "m"), Quantity(1.0 + 5e-9, "m")) == -1
    assert reg.compare(Quantity(2.0, "m"), Quantity(1.0, "m")) == 1
    # tolerance scales with magnitude
    assert reg.compare(Quantity(1e12, "m"), Quantity(1e12 + 1.0, "m")) == 0


def test_values_equal_uses_larger_magnitude():
    assert values_equal(0.0, 5e-10)
    assert not values_equal(0.0, 5e-9)
    assert values_equal(1e12, 1e12 + 100.0)


def test_records_are_sorted_and_complete():
    reg = sample_registry()
    dims = reg.dimension_records()
    assert dims == sorted(dims, key=lambda d: d["id"])
    assert {"base_unit": "m", "id": "length"} in dims
    units = reg.unit_records()
    assert [u["id"] for u in units] == sorted(u["id"] for u in units)
    degc = next(u for u in units if u["id"] == "degC")
    assert degc == {"dimension": "temperature", "factor": 1.0, "id": "degC",
                    "name": "°C", "offset": 273.15}


_PAIRS = [(a[0], b[0]) for a in oracles.UNIT_TABLE for b in oracles.UNIT_TABLE
          if a[2] == b[2] and a[0] != b[0]]


@settings(max_examples=300)
@given(value=st.floats(min_value=-1e9, max_value=1e9,
                       allow_nan=False, allow_infinity=False),
       pair=st.sampled_from(_PAIRS))
def test_round_trip_stays_within_tolerance(value, pair):
    reg = sample_registry()
    src, dst = pair
    there = reg.convert(Quantity(value, src), dst)
    back = reg.convert(there, src)
    assert abs(back.value - value) <= REL_TOL * max(1.0, abs(value))
    # and the hop agrees with plain affine arithmetic
    table = {uid: (dim, factor, offset)
             for uid, _, dim, factor, offset in oracles.UNIT_TABLE}
    expected = oracles.convert(table, value, src, dst)
    assert math.isclose(there.value, expected, rel_tol=1e-12, abs_tol=1e-12)
