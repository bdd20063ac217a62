"""Ingestion pipeline: protocol forms in, metadata and rows out.

A transcribed form definition is parsed, each field derived into a CVT
(numbers become measurements via their unit hint, checkbox tables become
classifications, free text becomes annotations) and the form itself into
one MET. Field-to-CVT mappings stay unconfirmed until a person signs them
off; only then may row data migrate. Concept suggestions rank candidate
semantic tags for that sign-off.
"""

from __future__ import annotations

import csv
import io
import re
import unicodedata
from dataclasses import dataclass, replace
from typing import Optional

from .errors import DuplicateFieldName, ParseError
from .quantities import Quantity, Unit, UnitRegistry
from .schema import Annotation, Category, Observation, SchemaRegistry

WIDGET_KINDS = ("number", "text", "checkbox", "date", "list")
TRANSFORMS = ("none", "enum_from_checkbox", "array_from_list")
RESERVED_COLUMNS = ("patient", "visit_date")
LIST_SEPARATOR = ";"

_FORM_RE = re.compile(r'^FORM\s+([A-Za-z_][\w-]*)\s+"([^"]*)"$')
_SECTION_RE = re.compile(r'^SECTION\s+"([^"]*)"$')
_FIELD_RE = re.compile(r'^FIELD\s+([A-Za-z_][\w-]*)\s+"([^"]*)"\s+(.+)$')
_NAME_RE = re.compile(r"^[A-Za-z_][\w-]*$")


@dataclass(frozen=True)
class Widget:
    kind: str
    unit_hint: Optional[str] = None
    items: tuple = ()
    inner: Optional["Widget"] = None


@dataclass(frozen=True)
class FormField:
    name: str
    label: str
    widget: Widget
    section: str


@dataclass(frozen=True)
class FormDefinition:
    form_id: str
    title: str
    fields: tuple


@dataclass(frozen=True)
class MappingEntry:
    form_id: str
    field_name: str
    cvt_id: str
    transform: str
    category: str  # payload category the field produces
    unit: Optional[str] = None  # unit id for bare numbers in data rows
    concept: Optional[str] = None
    confirmed: bool = False

    def to_json(self) -> dict:
        return {"category": self.category, "concept": self.concept,
                "confirmed": self.confirmed, "cvt": self.cvt_id,
                "field": self.field_name, "form": self.form_id,
                "transform": self.transform, "unit": self.unit}

    @staticmethod
    def from_json(obj: dict) -> "MappingEntry":
        return MappingEntry(obj["form"], obj["field"], obj["cvt"], obj["transform"],
                            obj["category"], obj.get("unit"), obj.get("concept"),
                            obj.get("confirmed", False))


@dataclass(frozen=True)
class Proposal:
    form: FormDefinition
    classifications: tuple  # (id, name, items) triples
    cvts: tuple  # kwargs dicts for SchemaRegistry.define_cvt
    met_id: str
    met_name: str
    met_members: tuple
    mappings: tuple
    warnings: tuple


# --- form parsing ----------------------------------------------------------------

def _parse_widget(spec: str, line_no: int) -> Widget:
    head, _, rest = spec.strip().partition(" ")
    rest = rest.strip()
    if head == "number":
        hint = None
        if rest:
            if not rest.startswith("unit=") or " " in rest:
                raise ParseError(line_no, f"expected 'unit=<hint>', got {rest!r}")
            hint = rest[len("unit="):]
            if not hint:
                raise ParseError(line_no, "empty unit hint")
        return Widget("number", unit_hint=hint)
    if head == "checkbox":
        items = tuple(part.strip() for part in rest.split("|"))
        if len(items) < 2 or any(not i for i in items) or len(set(items)) != len(items):
            raise ParseError(line_no, "checkbox needs two or more distinct items")
        return Widget("checkbox", items=items)
    if head in ("text", "date"):
        if rest:
            raise ParseError(line_no, f"{head} takes no arguments")
        return Widget(head)
    if head == "list":
        if not rest:
            raise ParseError(line_no, "list needs an element widget")
        inner = _parse_widget(rest, line_no)
        if inner.kind == "list":
            raise ParseError(line_no, "lists do not nest")
        return Widget("list", inner=inner)
    raise ParseError(line_no, f"unknown widget '{head}'")


def parse_form(text: str) -> FormDefinition:
    """Line format: `FORM <id> "title"`, then `SECTION "name"` and
    `FIELD <name> "label" <widget-spec>` lines; `#` comments."""
    form_id = title = None
    section = ""
    fields: list[FormField] = []
    names: set[str] = set()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("FORM"):
            m = _FORM_RE.match(line)
            if not m:
                raise ParseError(line_no, 'expected: FORM <id> "title"')
            if form_id is not None:
                raise ParseError(line_no, "only one FORM line per file")
            form_id, title = m.groups()
        elif line.startswith("SECTION"):
            m = _SECTION_RE.match(line)
            if not m:
                raise ParseError(line_no, 'expected: SECTION "name"')
            section = m.group(1)
        elif line.startswith("FIELD"):
            m = _FIELD_RE.match(line)
            if not m:
                raise ParseError(line_no, 'expected: FIELD <name> "label" <widget-spec>')
            if form_id is None:
                raise ParseError(line_no, "FIELD before FORM")
            name, label, spec = m.groups()
            if name in names:
                raise DuplicateFieldName(f"field '{name}' appears twice")
            if name in RESERVED_COLUMNS:
                raise ParseError(line_no, f"field name '{name}' is reserved")
            names.add(name)
            fields.append(FormField(name, label, _parse_widget(spec, line_no), section))
        else:
            raise ParseError(line_no, f"unrecognized line: {line!r}")
    if form_id is None:
        raise ParseError(0, "no FORM line found")
    if not fields:
        raise ParseError(0, f"form '{form_id}' has no fields")
    return FormDefinition(form_id, title, tuple(fields))


# --- metadata derivation ------------------------------------------------------------

def _norm_unit_token(text: str) -> str:
    text = unicodedata.normalize("NFKC", text).casefold()
    return re.sub(r"[^0-9a-z]+", "", text)


def resolve_unit_hint(units: UnitRegistry, hint: str) -> Optional[Unit]:
    """Match a hint against unit ids, then display names, then a normalized
    form that ignores case, punctuation and unicode spellings (m² vs m2)."""
    if units.has_unit(hint):
        return units.unit(hint)
    by_name = [u for u in units.all_units() if u.display_name == hint]
    if len(by_name) == 1:
        return by_name[0]
    norm = _norm_unit_token(hint)
    loose = [u for u in units.all_units()
             if _norm_unit_token(u.id) == norm or _norm_unit_token(u.display_name) == norm]
    return loose[0] if len(loose) == 1 else None


_PAREN_TAIL_RE = re.compile(r"\s*\(([^()]*)\)\s*$")


def clean_label(label: str, unit_hint: Optional[str] = None) -> str:
    """Strip paper artifacts: trailing ':' or '*', and a trailing
    parenthetical when it is just the unit hint."""
    text = " ".join(label.split()).rstrip(":* ").strip()
    m = _PAREN_TAIL_RE.search(text)
    if m and unit_hint is not None \
            and _norm_unit_token(m.group(1)) == _norm_unit_token(unit_hint):
        text = text[:m.start()].rstrip(":* ").strip()
    return text


def _field_hint(field: FormField, widget: Widget) -> Optional[str]:
    if widget.unit_hint is not None:
        return widget.unit_hint
    m = _PAREN_TAIL_RE.search(field.label)  # "Height (cm)" style fallback
    return m.group(1) if m else None


def derive_metadata(form: FormDefinition, units: UnitRegistry) -> Proposal:
    """Pure derivation of CVT/MET proposals plus unconfirmed mappings."""
    classifications = []
    cvts = []
    members = []
    mappings = []
    warnings = []
    for field in form.fields:
        widget = field.widget
        transform = "none"
        if widget.kind == "list":
            widget = widget.inner
            transform = "array_from_list"
        cvt_id = f"{form.form_id}_{field.name}"
        unit_id = None
        if widget.kind == "number":
            hint = _field_hint(field, widget)
            name = clean_label(field.label, hint)
            unit = resolve_unit_hint(units, hint) if hint else None
            if unit is None:
                warnings.append(
                    f"UnknownUnitHint: field '{field.name}' hint "
                    f"{hint!r} matches no registered unit; CVT not derived")
                mappings.append(MappingEntry(form.form_id, field.name, cvt_id,
                                             transform, Category.MEASUREMENT.value))
                continue
            unit_id = unit.id
            cvts.append({"cvt_id": cvt_id, "name": name,
                         "category": Category.MEASUREMENT.value,
                         "dimension": unit.dimension})
            category = Category.MEASUREMENT.value
        elif widget.kind == "checkbox":
            name = clean_label(field.label)
            cls_id = f"{cvt_id}_choices"
            classifications.append((cls_id, f"{name} choices", widget.items))
            cvts.append({"cvt_id": cvt_id, "name": name,
                         "category": Category.OBSERVATION_BY_CLASSIFICATION.value,
                         "classification": cls_id})
            category = Category.OBSERVATION_BY_CLASSIFICATION.value
            if transform == "none":
                transform = "enum_from_checkbox"
        else:  # text and date both land as free-text annotations
            name = clean_label(field.label)
            cvts.append({"cvt_id": cvt_id, "name": name,
                         "category": Category.ANNOTATION.value})
            category = Category.ANNOTATION.value
        members.append(cvt_id)
        mappings.append(MappingEntry(form.form_id, field.name, cvt_id, transform,
                                     category, unit_id))
    return Proposal(form, tuple(classifications), tuple(cvts), form.form_id,
                    form.title, tuple(members), tuple(mappings), tuple(warnings))


# --- concept suggestion ------------------------------------------------------------

def normalize_label(text: str) -> str:
    text = unicodedata.normalize("NFKC", text).casefold()
    return " ".join(re.sub(r"[^0-9a-z]+", " ", text).split())


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1,
                               previous[j - 1] + (ca != cb)))
        previous = current
    return previous[-1]


def levenshtein_similarity(a: str, b: str) -> float:
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    return 1.0 - levenshtein(a, b) / max(len(a), len(b))


def token_jaccard(a: str, b: str) -> float:
    ta, tb = set(a.split()), set(b.split())
    if not ta and not tb:
        return 1.0
    if not ta or not tb:
        return 0.0
    return len(ta & tb) / len(ta | tb)


def label_score(a: str, b: str) -> float:
    na, nb = normalize_label(a), normalize_label(b)
    return max(levenshtein_similarity(na, nb), token_jaccard(na, nb))


def suggest_concepts(label: str, concepts, k: int = 5,
                     threshold: float = 0.5) -> list[dict]:
    """Ranked concept candidates: score desc, uri asc, at most k, all with
    score >= threshold."""
    scored = [{"label": c.label, "score": label_score(label, c.label), "uri": c.uri}
              for c in concepts]
    scored = [row for row in scored if row["score"] >= threshold]
    scored.sort(key=lambda row: (-row["score"], row["uri"]))
    return scored[:k]


# --- row data -------------------------------------------------------------------

def parse_csv(text: str, mapped_fields: set) -> tuple[list, list]:
    """Header-checked CSV: reserved columns patient and visit_date, every
    other column must be a mapped form field. Returns (field columns, rows)."""
    from .errors import BadRequest
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise BadRequest("CSV file is empty") from None
    header = [h.strip() for h in header]
    for reserved in RESERVED_COLUMNS:
        if reserved not in header:
            raise BadRequest(f"CSV header misses reserved column '{reserved}'")
    if len(set(header)) != len(header):
        raise BadRequest("CSV header repeats a column")
    unknown = [h for h in header if h not in RESERVED_COLUMNS and h not in mapped_fields]
    if unknown:
        raise BadRequest(f"CSV columns {unknown} match no form field")
    rows = [dict(zip(header, row)) for row in reader if any(cell.strip() for cell in row)]
    return [h for h in header if h not in RESERVED_COLUMNS], rows


def normalize_item(cell: str, items) -> Optional[str]:
    """Exact classification item, else a unique case-insensitive match."""
    cell = cell.strip()
    if cell in items:
        return cell
    loose = [i for i in items if i.casefold() == cell.casefold()]
    return loose[0] if len(loose) == 1 else None


def payloads_for_cell(schema: SchemaRegistry, entry: MappingEntry, cell: str):
    """Build the payloads one data cell produces; empty parts emit nothing.

    Returns (payloads, reasons); any reason rejects the whole row.
    """
    cvt = schema.cvt(entry.cvt_id)
    parts = cell.split(LIST_SEPARATOR) if entry.transform == "array_from_list" else [cell]
    parts = [p.strip() for p in parts]
    parts = [p for p in parts if p]
    payloads = []
    reasons = []
    for part in parts:
        if cvt.category is Category.MEASUREMENT:
            try:
                value = float(part)
            except ValueError:
                reasons.append(f"{entry.field_name}: '{part}' is not a number")
                continue
            unit = entry.unit or schema.units.dimension(cvt.dimension).base_unit
            payloads.append(Quantity(value, unit))
        elif cvt.category is Category.OBSERVATION_BY_CLASSIFICATION:
            items = schema.classification(cvt.classification).items
            item = normalize_item(part, items)
            if item is None:
                reasons.append(
                    f"{entry.field_name}: '{part}' is not one of {list(items)}")
                continue
            payloads.append(Observation(item))
        elif cvt.category is Category.ANNOTATION:
            payloads.append(Annotation(part))
        else:
            reasons.append(
                f"{entry.field_name}: cannot migrate into {cvt.category.value}")
    return payloads, reasons


def confirmed(entry: MappingEntry) -> MappingEntry:
    return replace(entry, confirmed=True)
