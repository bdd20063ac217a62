"""Metadata layer: type definitions stored as data.

Classifications, clinical-variable types (CVTs) and medical-event types
(METs) are plain records that say what the data layer may hold. A CVT's
category decides its constraint: Measurement CVTs name a dimension,
ObservationByClassification CVTs name a classification, the rest carry
none. validate_cv() is the single admission check every stored value must
pass.

The registry is append-only: definitions are never deleted or migrated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Union

from .errors import (
    BadRequest,
    DuplicateId,
    EmptyOrDuplicateItems,
    MissingConstraint,
    UnknownCVT,
    UnknownReference,
)
from .quantities import Quantity, UnitRegistry


class Category(str, Enum):
    MEASUREMENT = "Measurement"
    ANNOTATION = "Annotation"
    OBSERVATION_BY_CLASSIFICATION = "ObservationByClassification"
    DICOM_IMAGE = "DICOMImage"
    DICOM_SERIES = "DICOMSeries"
    EXTERNAL_RESOURCE = "ExternalResource"
    MEDICAL_CONCEPT_INSTANCE = "MedicalConceptInstance"


def as_category(value: Union[str, Category]) -> Category:
    try:
        return Category(value)
    except ValueError:
        raise BadRequest(f"unknown CVT category '{value}'") from None


# --- payloads -------------------------------------------------------------
# One payload shape per category; Measurement reuses Quantity directly.

@dataclass(frozen=True)
class Annotation:
    text: str
    target: Optional[str] = None  # CV id the note is about, if any


@dataclass(frozen=True)
class Observation:
    item: str


@dataclass(frozen=True)
class DicomImage:
    tags: dict


@dataclass(frozen=True)
class DicomSeries:
    images: tuple
    purpose: str


@dataclass(frozen=True)
class ExternalResource:
    uri: str


@dataclass(frozen=True)
class ConceptInstance:
    concept: str


Payload = Union[Quantity, Annotation, Observation, DicomImage, DicomSeries,
                ExternalResource, ConceptInstance]

PAYLOAD_CATEGORY = {
    Quantity: Category.MEASUREMENT,
    Annotation: Category.ANNOTATION,
    Observation: Category.OBSERVATION_BY_CLASSIFICATION,
    DicomImage: Category.DICOM_IMAGE,
    DicomSeries: Category.DICOM_SERIES,
    ExternalResource: Category.EXTERNAL_RESOURCE,
    ConceptInstance: Category.MEDICAL_CONCEPT_INSTANCE,
}

REQUIRED_DICOM_UIDS = ("SOPInstanceUID", "StudyInstanceUID", "SeriesInstanceUID")


def payload_to_json(payload: Payload) -> dict:
    if isinstance(payload, Quantity):
        return {"unit": payload.unit, "value": payload.value}
    if isinstance(payload, Annotation):
        return {"target": payload.target, "text": payload.text}
    if isinstance(payload, Observation):
        return {"item": payload.item}
    if isinstance(payload, DicomImage):
        return {"tags": dict(payload.tags)}
    if isinstance(payload, DicomSeries):
        return {"images": list(payload.images), "purpose": payload.purpose}
    if isinstance(payload, ExternalResource):
        return {"uri": payload.uri}
    if isinstance(payload, ConceptInstance):
        return {"concept": payload.concept}
    raise BadRequest(f"not a payload: {payload!r}")


def payload_from_json(category: Category, obj: dict) -> Payload:
    if category is Category.MEASUREMENT:
        return Quantity(float(obj["value"]), obj["unit"])
    if category is Category.ANNOTATION:
        return Annotation(obj["text"], obj.get("target"))
    if category is Category.OBSERVATION_BY_CLASSIFICATION:
        return Observation(obj["item"])
    if category is Category.DICOM_IMAGE:
        return DicomImage(dict(obj["tags"]))
    if category is Category.DICOM_SERIES:
        return DicomSeries(tuple(obj["images"]), obj["purpose"])
    if category is Category.EXTERNAL_RESOURCE:
        return ExternalResource(obj["uri"])
    if category is Category.MEDICAL_CONCEPT_INSTANCE:
        return ConceptInstance(obj["concept"])
    raise BadRequest(f"unknown category '{category}'")


# --- metadata records -------------------------------------------------------

@dataclass(frozen=True)
class Classification:
    id: str
    name: str
    items: tuple


@dataclass(frozen=True)
class ClinicalVariableType:
    id: str
    name: str
    category: Category
    dimension: Optional[str] = None
    classification: Optional[str] = None


@dataclass(frozen=True)
class Relationship:
    name: str
    source: str  # CVT or MET id; serialized as "from"
    target: str  # CVT or MET id; serialized as "to"


@dataclass(frozen=True)
class MedicalEventType:
    id: str
    name: str
    members: tuple  # sorted CVT ids
    relationships: tuple


@dataclass(frozen=True)
class Violation:
    rule: str
    detail: str

    def __str__(self):
        return f"{self.rule}: {self.detail}"


class SchemaRegistry:
    """Holds classifications, CVTs and METs; validates stored values.

    ``concept_resolver`` (uri -> bool) is injected so MedicalConceptInstance
    payloads can be checked against the concept store; when absent, URI
    existence is not checked.
    """

    def __init__(self, units: UnitRegistry,
                 concept_resolver: Optional[Callable[[str], bool]] = None):
        self.units = units
        self.concept_resolver = concept_resolver
        self._classifications: dict[str, Classification] = {}
        self._cvts: dict[str, ClinicalVariableType] = {}
        self._mets: dict[str, MedicalEventType] = {}

    # -- definitions --------------------------------------------------------

    def define_classification(self, cid: str, name: str, items) -> Classification:
        if cid in self._classifications:
            raise DuplicateId(f"classification '{cid}' already defined")
        items = tuple(items)
        if not items or len(set(items)) != len(items) or any(not i for i in items):
            raise EmptyOrDuplicateItems(
                f"classification '{cid}' needs non-empty, distinct items")
        record = Classification(cid, name, items)
        self._classifications[cid] = record
        return record

    def define_cvt(self, cvt_id: str, name: str, category,
                   dimension: Optional[str] = None,
                   classification: Optional[str] = None) -> ClinicalVariableType:
        if cvt_id in self._cvts:
            raise DuplicateId(f"CVT '{cvt_id}' already defined")
        if not name:
            raise BadRequest(f"CVT '{cvt_id}' needs a non-empty name")
        category = as_category(category)
        if category is Category.MEASUREMENT:
            if not dimension:
                raise MissingConstraint(f"Measurement CVT '{cvt_id}' needs a dimension")
            if not self.units.has_dimension(dimension):
                raise UnknownReference(
                    f"CVT '{cvt_id}' references undefined dimension '{dimension}'")
        elif dimension:
            raise BadRequest(f"category {category.value} takes no dimension")
        if category is Category.OBSERVATION_BY_CLASSIFICATION:
            if not classification:
                raise MissingConstraint(
                    f"classification CVT '{cvt_id}' needs a classification")
            if classification not in self._classifications:
                raise UnknownReference(
                    f"CVT '{cvt_id}' references undefined classification '{classification}'")
        elif classification:
            raise BadRequest(f"category {category.value} takes no classification")
        record = ClinicalVariableType(cvt_id, name, category, dimension, classification)
        self._cvts[cvt_id] = record
        return record

    def define_met(self, met_id: str, name: str, member_cvts,
                   relationships=()) -> MedicalEventType:
        if met_id in self._mets:
            raise DuplicateId(f"MET '{met_id}' already defined")
        members = tuple(sorted(set(member_cvts)))
        for cvt_id in members:
            if cvt_id not in self._cvts:
                raise UnknownReference(f"MET '{met_id}' references undefined CVT '{cvt_id}'")
        rels = []
        for rel in relationships:
            rel = rel if isinstance(rel, Relationship) else Relationship(*rel)
            for endpoint in (rel.source, rel.target):
                if not (endpoint in self._cvts or endpoint in self._mets
                        or endpoint == met_id):
                    raise UnknownReference(
                        f"relationship '{rel.name}' endpoint '{endpoint}' is undefined")
            rels.append(rel)
        record = MedicalEventType(met_id, name, members, tuple(rels))
        self._mets[met_id] = record
        return record

    def extend_met(self, met_id: str, cvt_id: str) -> MedicalEventType:
        """Append one member CVT to an existing MET (schema grows, never shrinks)."""
        met = self.met(met_id)
        if cvt_id not in self._cvts:
            raise UnknownReference(f"MET '{met_id}' cannot add undefined CVT '{cvt_id}'")
        if cvt_id in met.members:
            return met
        updated = MedicalEventType(met.id, met.name,
                                   tuple(sorted(set(met.members) | {cvt_id})),
                                   met.relationships)
        self._mets[met_id] = updated
        return updated

    # -- lookup --------------------------------------------------------------

    def has_cvt(self, cvt_id: str) -> bool:
        return cvt_id in self._cvts

    def cvt(self, cvt_id: str) -> ClinicalVariableType:
        try:
            return self._cvts[cvt_id]
        except KeyError:
            raise UnknownCVT(f"CVT '{cvt_id}' is not defined") from None

    def has_met(self, met_id: str) -> bool:
        return met_id in self._mets

    def met(self, met_id: str) -> MedicalEventType:
        try:
            return self._mets[met_id]
        except KeyError:
            from .errors import UnknownMET
            raise UnknownMET(f"MET '{met_id}' is not defined") from None

    def classification(self, cid: str) -> Classification:
        try:
            return self._classifications[cid]
        except KeyError:
            raise UnknownReference(f"classification '{cid}' is not defined") from None

    def all_cvts(self) -> list[ClinicalVariableType]:
        return sorted(self._cvts.values(), key=lambda c: c.id)

    def all_mets(self) -> list[MedicalEventType]:
        return sorted(self._mets.values(), key=lambda m: m.id)

    def all_classifications(self) -> list[Classification]:
        return sorted(self._classifications.values(), key=lambda c: c.id)

    # -- discovery -----------------------------------------------------------

    def list_schema(self, category: Optional[str] = None,
                    name_contains: Optional[str] = None) -> list[dict]:
        """CVT and MET descriptors, sorted by id. A category filter keeps only
        CVTs of that category; a name filter is a case-insensitive substring."""
        rows = [self.cvt_descriptor(c) for c in self.all_cvts()]
        if category is not None:
            wanted = as_category(category)
            rows = [r for r in rows if r["category"] == wanted.value]
        else:
            rows += [self.met_descriptor(m) for m in self.all_mets()]
        if name_contains is not None:
            needle = name_contains.lower()
            rows = [r for r in rows if needle in r["name"].lower()]
        return sorted(rows, key=lambda r: r["id"])

    @staticmethod
    def cvt_descriptor(c: ClinicalVariableType) -> dict:
        return {"category": c.category.value, "classification": c.classification,
                "dimension": c.dimension, "id": c.id, "kind": "cvt", "name": c.name}

    @staticmethod
    def met_descriptor(m: MedicalEventType) -> dict:
        return {"id": m.id, "kind": "met", "members": list(m.members), "name": m.name,
                "relationships": [{"from": r.source, "name": r.name, "to": r.target}
                                  for r in m.relationships]}

    # -- validation ------------------------------------------------------------

    def validate_cv(self, cvt_id: str, payload: Payload) -> list[Violation]:
        """Check payload against its CVT; empty list means admissible."""
        cvt = self.cvt(cvt_id)
        expected = PAYLOAD_CATEGORY.get(type(payload))
        if expected is None:
            return [Violation("payload-kind-mismatch", f"not a payload: {payload!r}")]
        if expected is not cvt.category:
            return [Violation("payload-kind-mismatch",
                              f"CVT '{cvt_id}' is {cvt.category.value}, "
                              f"payload is {expected.value}")]
        checker = {
            Category.MEASUREMENT: self._check_measurement,
            Category.ANNOTATION: self._check_annotation,
            Category.OBSERVATION_BY_CLASSIFICATION: self._check_observation,
            Category.DICOM_IMAGE: self._check_dicom_image,
            Category.DICOM_SERIES: self._check_dicom_series,
            Category.EXTERNAL_RESOURCE: self._check_external_resource,
            Category.MEDICAL_CONCEPT_INSTANCE: self._check_concept_instance,
        }[cvt.category]
        return checker(cvt, payload)

    def _check_measurement(self, cvt, q: Quantity) -> list[Violation]:
        out = []
        if not isinstance(q.value, (int, float)) or not math.isfinite(q.value):
            out.append(Violation("bad-value", f"value {q.value!r} is not a finite number"))
        if not self.units.has_unit(q.unit):
            out.append(Violation("unknown-unit", f"unit '{q.unit}' is not registered"))
        elif self.units.unit(q.unit).dimension != cvt.dimension:
            out.append(Violation(
                "dimension-mismatch",
                f"CVT '{cvt.id}' expects dimension '{cvt.dimension}', "
                f"unit '{q.unit}' has '{self.units.unit(q.unit).dimension}'"))
        return out

    def _check_annotation(self, cvt, a: Annotation) -> list[Violation]:
        out = []
        if not isinstance(a.text, str):
            out.append(Violation("bad-text", "annotation text must be a string"))
        if a.target is not None and not isinstance(a.target, str):
            out.append(Violation("bad-target", "annotation target must be a CV id"))
        return out

    def _check_observation(self, cvt, o: Observation) -> list[Violation]:
        items = self.classification(cvt.classification).items
        if o.item not in items:
            return [Violation("not-in-classification",
                              f"'{o.item}' is not one of {list(items)}")]
        return []

    def _check_dicom_image(self, cvt, d: DicomImage) -> list[Violation]:
        out = []
        if not isinstance(d.tags, dict) or not all(
                isinstance(k, str) and isinstance(v, str) for k, v in d.tags.items()):
            return [Violation("bad-tags", "DICOM tags must map keyword strings to strings")]
        for uid in REQUIRED_DICOM_UIDS:
            if not d.tags.get(uid):
                out.append(Violation("missing-dicom-uid", f"tag '{uid}' absent or empty"))
        return out

    def _check_dicom_series(self, cvt, s: DicomSeries) -> list[Violation]:
        out = []
        if not all(isinstance(i, str) and i for i in s.images):
            out.append(Violation("bad-series", "image references must be CV ids"))
        if not isinstance(s.purpose, str):
            out.append(Violation("bad-series", "series purpose must be a string"))
        return out

    def _check_external_resource(self, cvt, r: ExternalResource) -> list[Violation]:
        if not isinstance(r.uri, str) or not r.uri or any(c.isspace() for c in r.uri):
            return [Violation("bad-uri", f"'{r.uri}' is not a usable URI")]
        return []

    def _check_concept_instance(self, cvt, c: ConceptInstance) -> list[Violation]:
        if not isinstance(c.concept, str) or not c.concept:
            return [Violation("bad-concept", "concept URI must be a non-empty string")]
        if self.concept_resolver is not None and not self.concept_resolver(c.concept):
            return [Violation("unknown-concept",
                              f"concept '{c.concept}' is not in the concept store")]
        return []

    # -- serialization -----------------------------------------------------------

    def classification_records(self) -> list[dict]:
        return [{"id": c.id, "items": list(c.items), "name": c.name}
                for c in self.all_classifications()]

    def cvt_records(self) -> list[dict]:
        out = []
        for c in self.all_cvts():
            rec = {"category": c.category.value, "id": c.id, "name": c.name}
            if c.dimension is not None:
                rec["dimension"] = c.dimension
            if c.classification is not None:
                rec["classification"] = c.classification
            out.append(rec)
        return out

    def met_records(self) -> list[dict]:
        return [{"id": m.id, "members": list(m.members), "name": m.name,
                 "relationships": [{"from": r.source, "name": r.name, "to": r.target}
                                   for r in m.relationships]}
                for m in self.all_mets()]
