import pytest

from idm.errors import (BadRequest, DuplicateId, EmptyOrDuplicateItems,
                        MissingConstraint, UnknownCVT, UnknownReference)
from idm.quantities import Quantity, UnitRegistry
from idm.schema import (Annotation, Category, ConceptInstance, DicomImage,
                        DicomSeries, ExternalResource, Observation,
                        SchemaRegistry, payload_from_json, payload_to_json)


@pytest.fixture
def schema():
    units = UnitRegistry()
    units.register_unit("m", "m", "length", 1.0)
    units.register_unit("cm", "cm", "length", 0.01)
    units.register_unit("kg", "kg", "mass", 1.0)
    reg = SchemaRegistry(units, concept_resolver=lambda uri: uri.startswith("urn:ok:"))
    reg.define_classification("severity", "Severity", ["Low", "High"])
    reg.define_cvt("height", "Height", "Measurement", dimension="length")
    reg.define_cvt("sev", "Severity finding", "ObservationByClassification",
                   classification="severity")
    reg.define_cvt("note", "Note", "Annotation")
    reg.define_cvt("img", "Image", "DICOMImage")
    reg.define_cvt("series", "Series", "DICOMSeries")
    reg.define_cvt("doc", "Document", "ExternalResource")
    reg.define_cvt("finding", "Finding", "MedicalConceptInstance")
    return reg


def test_classification_rules(schema):
    with pytest.raises(DuplicateId):
        schema.define_classification("severity", "Again", ["X"])
    with pytest.raises(EmptyOrDuplicateItems):
        schema.define_classification("empty", "Empty", [])
    with pytest.raises(EmptyOrDuplicateItems):
        schema.define_classification("dup", "Dup", ["A", "A"])


def test_cvt_constraint_rules(schema):
    with pytest.raises(DuplicateId):
        schema.define_cvt("height", "Height", "Measurement", dimension="length")
    with pytest.raises(MissingConstraint):
        schema.define_cvt("w", "Weight", "Measurement")
    with pytest.raises(UnknownReference):
        schema.define_cvt("s", "Speed", "Measurement", dimension="speed")
    with pytest.raises(MissingConstraint):
        schema.define_cvt("o", "Obs", "ObservationByClassification")
    with pytest.raises(UnknownReference):
        schema.define_cvt("o", "Obs", "ObservationByClassification",
                          classification="missing")
    # constraints that do not belong to the category are rejected
    with pytest.raises(BadRequest):
        schema.define_cvt("n2", "Note2", "Annotation", dimension="length")
    with pytest.raises(BadRequest):
        schema.define_cvt("h2", "Height2", "Measurement", dimension="length",
                          classification="severity")
    with pytest.raises(BadRequest):
        schema.define_cvt("x", "X", "NoSuchCategory")


def test_met_membership(schema):
    met = schema.define_met("exam", "Exam", ["height", "note", "height"])
    assert met.members == ("height", "note")
    with pytest.raises(UnknownReference):
        schema.define_met("bad", "Bad", ["missing"])
    extended = schema.extend_met("exam", "sev")
    assert "sev" in extended.members
    # relationship endpoints must name existing CVTs or METs
    rel = schema.define_met("echo", "Echo", ["height"],
                            [("measures", "echo", "height")])
    assert rel.relationships[0].name == "measures"
    with pytest.raises(UnknownReference):
        schema.define_met("echo2", "Echo2", ["height"],
                          [("measures", "echo2", "ghost")])


def test_list_schema_filters(schema):
    all_rows = schema.list_schema()
    assert [r["id"] for r in all_rows] == sorted(r["id"] for r in all_rows)
    meas = schema.list_schema(category="Measurement")
    assert {r["id"] for r in meas} == {"height"}
    named = schema.list_schema(name_contains="sEvErIty")
    assert {r["id"] for r in named} == {"sev"}


def test_validate_measurement(schema):
    assert schema.validate_cv("height", Quantity(1.8, "m")) == []
    rules = [v.rule for v in schema.validate_cv("height", Quantity(1.8, "kg"))]
    assert rules == ["dimension-mismatch"]
    rules = [v.rule for v in schema.validate_cv("height", Quantity(1.8, "furlong"))]
    assert rules == ["unknown-unit"]
    rules = [v.rule for v in schema.validate_cv("height",
                                                Quantity(float("inf"), "m"))]
    assert rules == ["bad-value"]


def test_validate_payload_kind(schema):
    rules = [v.rule for v in schema.validate_cv("height", Observation("Low"))]
    assert rules == ["payload-kind-mismatch"]
    rules = [v.rule for v in schema.validate_cv("note", Quantity(1.0, "m"))]
    assert rules == ["payload-kind-mismatch"]


def test_validate_observation(schema):
    assert schema.validate_cv("sev", Observation("High")) == []
    violations = schema.validate_cv("sev", Observation("Medium"))
    assert [v.rule for v in violations] == ["not-in-classification"]
    assert "Medium" in str(violations[0])


def test_validate_dicom(schema):
    tags = {"SOPInstanceUID": "1.2", "StudyInstanceUID": "1.3",
            "SeriesInstanceUID": "1.4"}
    assert schema.validate_cv("img", DicomImage(tags)) == []
    partial = {"SOPInstanceUID": "1.2"}
    rules = [v.rule for v in schema.validate_cv("img", DicomImage(partial))]
    assert rules == ["missing-dicom-uid", "missing-dicom-uid"]
    assert schema.validate_cv("series", DicomSeries(("cv-1",), "axial")) == []
    rules = [v.rule for v in schema.validate_cv("series", DicomSeries(("",), "x"))]
    assert rules == ["bad-series"]


def test_validate_resource_and_concept(schema):
    assert schema.validate_cv("doc", ExternalResource("urn:doc:1")) == []
    rules = [v.rule for v in schema.validate_cv("doc", ExternalResource("a b"))]
    assert rules == ["bad-uri"]
    assert schema.validate_cv("finding", ConceptInstance("urn:ok:thing")) == []
    rules = [v.rule for v in schema.validate_cv("finding",
                                                ConceptInstance("urn:no:thing"))]
    assert rules == ["unknown-concept"]


def test_validate_unknown_cvt(schema):
    with pytest.raises(UnknownCVT):
        schema.validate_cv("missing", Observation("Low"))


@pytest.mark.parametrize("category,payload", [
    (Category.MEASUREMENT, Quantity(1.5, "m")),
    (Category.ANNOTATION, Annotation("hello", "cv-1")),
    (Category.ANNOTATION, Annotation("hello")),
    (Category.OBSERVATION_BY_CLASSIFICATION, Observation("Low")),
    (Category.DICOM_IMAGE, DicomImage({"SOPInstanceUID": "1"})),
    (Category.DICOM_SERIES, DicomSeries(("cv-1", "cv-2"), "axial")),
    (Category.EXTERNAL_RESOURCE, ExternalResource("urn:x:1")),
    (Category.MEDICAL_CONCEPT_INSTANCE, ConceptInstance("urn:ok:1")),
])
def test_payload_json_round_trip(category, payload):
    assert payload_from_json(category, payload_to_json(payload)) == payload


def test_descriptors(schema):
    height = schema.cvt_descriptor(schema.cvt("height"))
    assert height == {"category": "Measurement", "classification": None,
                      "dimension": "length", "id": "height", "kind": "cvt",
                      "name": "Height"}
    schema.define_met("exam", "Exam", ["height"],
                      [("measures", "exam", "height")])
    met = schema.met_descriptor(schema.met("exam"))
    assert met == {"id": "exam", "kind": "met", "members": ["height"],
                   "name": "Exam",
                   "relationships": [{"from": "exam", "name": "measures",
                                      "to": "height"}]}
