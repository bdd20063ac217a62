"""Physical quantities: units tagged with a dimension, affine conversion.

A Dimension is an opaque named tag ("length", "volume_per_bsa"); it does not
carry exponent algebra. Each dimension has exactly one base unit with
factor 1 and offset 0, and every other unit of the dimension converts
through the base: value_in_base(x) = x * factor + offset. The affine offset
exists for temperature scales; multiplicative units keep offset 0.

Quantities only compare within one dimension, on base-unit values, with a
fixed relative tolerance for equality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import (
    DimensionMismatch,
    DuplicateUnit,
    NonPositiveFactor,
    UnknownDimension,
    UnknownUnit,
)

# Relative tolerance for base-value equality (and round-trip guarantees).
REL_TOL = 1e-9


@dataclass(frozen=True)
class Dimension:
    id: str
    base_unit: str


@dataclass(frozen=True)
class Unit:
    id: str
    display_name: str
    dimension: str
    factor: float
    offset: float

    def to_base(self, value: float) -> float:
        return value * self.factor + self.offset

    def from_base(self, base_value: float) -> float:
        return (base_value - self.offset) / self.factor


@dataclass(frozen=True)
class Quantity:
    value: float
    unit: str


def values_equal(a: float, b: float) -> bool:
    """Equality within REL_TOL, relative to the larger magnitude (min 1)."""
    return abs(a - b) <= REL_TOL * max(1.0, abs(a), abs(b))


class UnitRegistry:
    """Registry of dimensions and units; immutable after schema load."""

    def __init__(self):
        self._dimensions: dict[str, Dimension] = {}
        self._units: dict[str, Unit] = {}

    # -- registration ------------------------------------------------------

    def register_unit(self, unit_id: str, display_name: str, dimension_id: str,
                      factor: float, offset: float = 0.0) -> Unit:
        """Register a unit; a base unit (factor 1, offset 0) for an unseen
        dimension creates that dimension implicitly."""
        if unit_id in self._units:
            raise DuplicateUnit(f"unit '{unit_id}' already registered")
        factor = float(factor)
        offset = float(offset)
        if not (factor > 0.0) or not math.isfinite(factor):
            raise NonPositiveFactor(f"unit '{unit_id}' has factor {factor}")
        if dimension_id not in self._dimensions:
            is_base = factor == 1.0 and offset == 0.0
            if not is_base:
                raise UnknownDimension(
                    f"unit '{unit_id}' names undefined dimension '{dimension_id}' "
                    "and is not its base (factor 1, offset 0)")
            self._dimensions[dimension_id] = Dimension(dimension_id, unit_id)
        unit = Unit(unit_id, display_name, dimension_id, factor, offset)
        self._units[unit_id] = unit
        return unit

    # -- lookup ------------------------------------------------------------

    def has_unit(self, unit_id: str) -> bool:
        return unit_id in self._units

    def unit(self, unit_id: str) -> Unit:
        try:
            return self._units[unit_id]
        except KeyError:
            raise UnknownUnit(f"unit '{unit_id}' is not registered") from None

    def has_dimension(self, dimension_id: str) -> bool:
        return dimension_id in self._dimensions

    def dimension(self, dimension_id: str) -> Dimension:
        try:
            return self._dimensions[dimension_id]
        except KeyError:
            raise UnknownDimension(f"dimension '{dimension_id}' is not defined") from None

    def units_of(self, dimension_id: str) -> list[Unit]:
        return sorted((u for u in self._units.values() if u.dimension == dimension_id),
                      key=lambda u: u.id)

    def all_units(self) -> list[Unit]:
        return sorted(self._units.values(), key=lambda u: u.id)

    def all_dimensions(self) -> list[Dimension]:
        return sorted(self._dimensions.values(), key=lambda d: d.id)

    # -- quantity operations -------------------------------------------------

    def make_quantity(self, value: float, unit_id: str) -> Quantity:
        self.unit(unit_id)
        return Quantity(float(value), unit_id)

    def dimension_of(self, q: Quantity) -> str:
        return self.unit(q.unit).dimension

    def base_value(self, q: Quantity) -> float:
        return self.unit(q.unit).to_base(q.value)

    def convert(self, q: Quantity, target_unit_id: str) -> Quantity:
        source = self.unit(q.unit)
        target = self.unit(target_unit_id)
        if source.dimension != target.dimension:
            raise DimensionMismatch(
                f"cannot convert '{source.id}' ({source.dimension}) "
                f"to '{target.id}' ({target.dimension})")
        if source.id == target.id:
            return q
        return Quantity(target.from_base(source.to_base(q.value)), target.id)

    def compare(self, q1: Quantity, q2: Quantity) -> int:
        """-1, 0 or 1 ordering q1 against q2 on base values; same dimension only."""
        u1 = self.unit(q1.unit)
        u2 = self.unit(q2.unit)
        if u1.dimension != u2.dimension:
            raise DimensionMismatch(
                f"cannot compare '{u1.id}' ({u1.dimension}) with '{u2.id}' ({u2.dimension})")
        a = u1.to_base(q1.value)
        b = u2.to_base(q2.value)
        if values_equal(a, b):
            return 0
        return -1 if a < b else 1

    # -- serialization -------------------------------------------------------

    def dimension_records(self) -> list[dict]:
        return [{"base_unit": d.base_unit, "id": d.id} for d in self.all_dimensions()]

    def unit_records(self) -> list[dict]:
        return [
            {"dimension": u.dimension, "factor": u.factor, "id": u.id,
             "name": u.display_name, "offset": u.offset}
            for u in self.all_units()
        ]
