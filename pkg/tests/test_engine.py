import json
from pathlib import Path

import pytest

from idm import demo
from idm.engine import Engine
from idm.errors import (BadRequest, UnconfirmedMapping, UnknownConcept,
                        UnknownCVT, UnknownProposal)
from idm.jsonutil import canonical
from idm.quantities import Quantity
from idm.schema import Annotation, DicomImage, DicomSeries, ExternalResource
from idm.store import Instant


def test_engine_config_bounds(tmp_path):
    with pytest.raises(BadRequest):
        Engine(tmp_path / "a", similarity_threshold=1.5)
    with pytest.raises(BadRequest):
        Engine(tmp_path / "b", suggestion_k=0)


def exercise_every_record_kind(eng: Engine) -> None:
    eng.register_unit("m", "m", "length", 1.0)
    eng.register_unit("cm", "cm", "length", 0.01)
    eng.define_classification("sev", "Severity", ["Low", "High"])
    eng.define_cvt("height", "Height", "Measurement", dimension="length")
    eng.define_cvt("note", "Note", "Annotation")
    eng.define_cvt("img", "Image", "DICOMImage")
    eng.define_cvt("series", "Series", "DICOMSeries")
    eng.define_cvt("doc", "Document", "ExternalResource")
    eng.define_met("exam", "Exam", ["height", "note"],
                   [("measures", "exam", "height")])
    eng.define_met("imaging", "Imaging", ["img", "series", "doc"])
    eng.extend_met("exam", "doc")
    eng.import_fragment_text('@prefix a: <urn:a:>\n'
                             'C a:x Anatomical "x part"\n'
                             'C a:y Anatomical "y part"\n'
                             'T a:y regional_part_of a:x\n')
    eng.create_patient("p1", {"gender": "F"})
    eng.create_patient("p2")
    eng.add_family_link("p1", "sister", "p2")
    visit = eng.record_visit("p1", "2007-03-01T09:00:00Z", "baseline")
    event = eng.record_event(visit.id, "exam", Instant("2007-03-01T09:05:00Z"))
    height = eng.record_cv(event.id, "height", Quantity(152.0, "cm"))
    eng.attach_annotation(event.id, "note", "growing fine", height.id)
    scan = eng.record_event(visit.id, "imaging", Instant("2007-03-01T10:00:00Z"))
    a = eng.record_cv(scan.id, "img", DicomImage(
        {"SOPInstanceUID": "1", "StudyInstanceUID": "s", "SeriesInstanceUID": "r"}))
    b = eng.record_cv(scan.id, "img", DicomImage(
        {"SOPInstanceUID": "2", "StudyInstanceUID": "s", "SeriesInstanceUID": "r"}))
    eng.record_cv(scan.id, "series", DicomSeries((a.id, b.id), "axial"))
    eng.record_cv(scan.id, "doc", ExternalResource("urn:report:1"))
    eng.link_concept("a:x", "height", "MetadataAnnotation")
    eng.link_concept("a:y", height.id, "DataInstance")


def test_reopen_replays_every_record_kind(tmp_path):
    first = Engine(tmp_path / "d")
    exercise_every_record_kind(first)
    before = canonical(first.get_patient_record("p1"))
    schema_before = canonical(first.schema_document())

    second = Engine(tmp_path / "d")
    assert canonical(second.get_patient_record("p1")) == before
    assert canonical(second.schema_document()) == schema_before
    assert [str(l) for l in second.concepts.all_links()] == \
        [str(l) for l in first.concepts.all_links()]
    assert second.audit() == []
    # ids keep counting after the replayed ones
    visit = second.record_visit("p2", "2007-03-02T09:00:00Z", "baseline")
    event = second.record_event(visit.id, "exam", Instant("2007-03-02"))
    fresh = second.record_cv(event.id, "height", Quantity(1.0, "m"))
    assert fresh.id not in {cv.id for cv in first.store.all_cvs()}


def test_log_lines_are_sequenced_compact_json(tmp_path):
    eng = Engine(tmp_path / "d")
    eng.register_unit("m", "m", "length", 1.0)
    eng.create_patient("p1")
    lines = (tmp_path / "d" / "engine.log").read_text().splitlines()
    records = [json.loads(line) for line in lines]
    assert [r["seq"] for r in records] == [1, 2]
    assert set(records[0]) == {"body", "kind", "seq"}
    for line, record in zip(lines, records):
        assert line == json.dumps(record, sort_keys=True,
                                  separators=(",", ":"), ensure_ascii=False)


def test_corrupt_log_line_is_reported_with_its_number(tmp_path):
    eng = Engine(tmp_path / "d")
    eng.register_unit("m", "m", "length", 1.0)
    with open(tmp_path / "d" / "engine.log", "a", encoding="utf-8") as fh:
        fh.write("{broken\n")
    with pytest.raises(BadRequest) as err:
        Engine(tmp_path / "d")
    assert "log line 2" in err.value.detail


def test_schema_document_round_trip_and_idempotence(tmp_path, seeded):
    doc = seeded.schema_document()
    fresh = Engine(tmp_path / "fresh")
    # the seeded document includes the ingested echo form's metadata
    counts = fresh.load_schema_document(doc)
    assert counts == {"classifications": 2, "cvts": 8, "dimensions": 5,
                      "mets": 4, "units": 15}
    assert fresh.schema_document() == doc
    again = fresh.load_schema_document(doc)
    assert again == {"classifications": 0, "cvts": 0, "dimensions": 0,
                     "mets": 0, "units": 0}


def test_schema_document_conflicts_are_rejected(tmp_path, seeded):
    doc = seeded.schema_document()
    fresh = Engine(tmp_path / "fresh")
    fresh.load_schema_document(doc)
    conflicting = json.loads(json.dumps(doc))
    cm = next(u for u in conflicting["units"] if u["id"] == "cm")
    cm["factor"] = 42.0
    with pytest.raises(BadRequest) as err:
        fresh.load_schema_document(conflicting)
    assert "already registered differently" in err.value.detail
    # a base unit redefined as non-base trips the dimension guard instead
    broken = json.loads(json.dumps(doc))
    base = next(u for u in broken["units"] if u["id"] == "K")
    base["factor"] = 2.0
    with pytest.raises(BadRequest):
        fresh.load_schema_document(broken)


def test_ingest_form_registers_schema_and_mappings(engine):
    engine.register_unit("mL_per_m2", "mL/m²", "volume_per_bsa", 1.0)
    report = engine.ingest_form_text(demo.ECHO_FORM)
    assert report["form"] == "EchoForm"
    assert report["met"] == "EchoForm"
    assert report["cvts"] == ["EchoForm_SysVol", "EchoForm_RVDil",
                              "EchoForm_Comment"]  # form field order
    assert report["classifications"] == ["EchoForm_RVDil_choices"]
    assert report["warnings"] == []
    met = engine.schema.met("EchoForm")
    assert met.members == ("EchoForm_Comment", "EchoForm_RVDil",
                           "EchoForm_SysVol")
    mappings = engine.list_mappings("EchoForm")
    assert {m["field"] for m in mappings} == {"SysVol", "RVDil", "Comment"}
    assert not any(m["confirmed"] for m in mappings)
    # mapping file is canonical JSON on disk
    raw = (engine.data_dir / "mappings.json").read_text()
    assert raw == canonical(mappings)


def test_reingesting_same_form_changes_nothing(engine):
    engine.register_unit("mL_per_m2", "mL/m²", "volume_per_bsa", 1.0)
    engine.ingest_form_text(demo.ECHO_FORM)
    engine.confirm_mapping("EchoForm", "SysVol", "EchoForm_SysVol")
    engine.ingest_form_text(demo.ECHO_FORM)
    assert engine.mappings[("EchoForm", "SysVol")].confirmed
    conflicting = demo.ECHO_FORM.replace("No|Mild|Moderate|Severe",
                                         "Yes|No")
    with pytest.raises(BadRequest) as err:
        engine.ingest_form_text(conflicting)
    assert "already defined differently" in err.value.detail


def confirmed_echo_engine(engine):
    engine.register_unit("mL_per_m2", "mL/m²", "volume_per_bsa", 1.0)
    engine.ingest_form_text(demo.ECHO_FORM)
    for field, cvt in (("SysVol", "EchoForm_SysVol"),
                       ("RVDil", "EchoForm_RVDil"),
                       ("Comment", "EchoForm_Comment")):
        engine.confirm_mapping("EchoForm", field, cvt)
    return engine


def test_confirm_mapping_rules(engine):
    engine.register_unit("mL_per_m2", "mL/m²", "volume_per_bsa", 1.0)
    engine.register_unit("m", "m", "length", 1.0)
    engine.define_cvt("Other", "Pre-existing volume", "Measurement",
                      dimension="volume_per_bsa")
    engine.define_cvt("Short", "Pre-existing length", "Measurement",
                      dimension="length")
    engine.import_fragment_text('@prefix a: <urn:a:>\nC a:vol Symptom "volume"\n')
    engine.ingest_form_text(demo.ECHO_FORM)

    with pytest.raises(UnknownProposal):
        engine.confirm_mapping("EchoForm", "Ghost", "EchoForm_SysVol")
    with pytest.raises(UnknownCVT):
        engine.confirm_mapping("EchoForm", "SysVol", "Ghost")
    with pytest.raises(UnknownConcept):
        engine.confirm_mapping("EchoForm", "SysVol", "EchoForm_SysVol",
                               concept_uri="a:ghost")
    with pytest.raises(BadRequest):  # annotation field into measurement CVT
        engine.confirm_mapping("EchoForm", "Comment", "EchoForm_SysVol")
    with pytest.raises(BadRequest):  # unit dimension clashes with CVT
        engine.confirm_mapping("EchoForm", "SysVol", "Short")

    # redirecting to a compatible existing CVT joins the MET and links the concept
    result = engine.confirm_mapping("EchoForm", "SysVol", "Other",
                                    concept_uri="a:vol")
    assert result["confirmed"] is True
    assert result["cvt"] == "Other"
    assert result["unit"] == "mL_per_m2"
    assert "Other" in engine.schema.met("EchoForm").members
    assert engine.concepts.cvts_for_concept("a:vol") == ["Other"]


def test_migrate_requires_confirmation(engine):
    engine.register_unit("mL_per_m2", "mL/m²", "volume_per_bsa", 1.0)
    with pytest.raises(UnknownProposal):
        engine.migrate_text(demo.ECHO_ROWS, "EchoForm")
    engine.ingest_form_text(demo.ECHO_FORM)
    with pytest.raises(UnconfirmedMapping) as err:
        engine.migrate_text(demo.ECHO_ROWS, "EchoForm")
    assert "SysVol" in err.value.detail


def test_migrate_is_row_atomic_and_reuses_visits(engine):
    confirmed_echo_engine(engine)
    report = engine.migrate_text(demo.ECHO_ROWS, "EchoForm")
    assert report["rows"] == 20
    assert report["created"] == {"cvs": 45, "events": 19, "patients": 14,
                                 "visits": 19}
    assert len(report["rejected"]) == 1
    reject = report["rejected"][0]
    assert reject["row"] == 13
    assert any("Catastrophic" in r for r in reject["reasons"])
    # the offending row created nothing at all
    assert not engine.store.has_patient("Q-09")
    # case-normalized classification cell landed as its canonical item
    severe = engine.run_query('FIND patients WHERE cv(EchoForm_RVDil) IS "Severe"')
    assert [r["id"] for r in severe["rows"]] == ["Q-03", "Q-07", "Q-14"]
    assert engine.audit() == []


def test_migrate_shares_visits_on_identical_timestamps(engine):
    confirmed_echo_engine(engine)
    csv_text = ("patient,visit_date,SysVol,RVDil\n"
                "R-01,2008-01-01T09:00:00Z,30.5,No\n"
                "R-01,2008-01-01T09:00:00Z,,Severe\n")
    report = engine.migrate_text(csv_text, "EchoForm")
    assert report["created"] == {"cvs": 3, "events": 2, "patients": 1,
                                 "visits": 1}
    visits = engine.store.visits_of("R-01")
    assert len(visits) == 1
    assert visits[0].purpose == "imported"
    assert len(engine.store.events_of(visits[0].id)) == 2


def test_migrated_data_round_trips_through_reopen(tmp_path, engine):
    confirmed_echo_engine(engine)
    engine.migrate_text(demo.ECHO_ROWS, "EchoForm")
    records = {p.id: canonical(engine.get_patient_record(p.id))
               for p in engine.store.all_patients()}
    reopened = Engine(engine.data_dir)
    for pid, body in records.items():
        assert canonical(reopened.get_patient_record(pid)) == body
    assert reopened.audit() == []


def test_suggest_uses_engine_thresholds(tmp_path):
    eng = Engine(tmp_path / "d")
    eng.import_fragment_text('@prefix a: <urn:a:>\n'
                             'C a:rv Symptom "RV dilatation"\n'
                             'C a:lv Symptom "left ventricle"\n')
    got = eng.suggest("RV dilation")
    assert [row["uri"] for row in got] == ["a:rv"]
    loose = Engine(tmp_path / "d", similarity_threshold=0.1)
    assert [row["uri"] for row in loose.suggest("RV dilation")] == ["a:rv", "a:lv"]
    assert [row["uri"] for row in loose.suggest("RV dilation", k=1)] == ["a:rv"]


def test_demo_seed_is_reproducible_and_guarded(tmp_path):
    eng = Engine(tmp_path / "d")
    summary = demo.seed(eng)
    assert summary["patients"] == ["P-W", "P-X", "P-Y"]
    with pytest.raises(BadRequest):
        demo.seed(eng)
    assert eng.audit() == []


def test_sampledata_files_match_demo_constants():
    # the CLI walkthrough files are copies of the demo constants
    root = Path(__file__).resolve().parent.parent / "sampledata"
    assert (root / "schema.json").read_text() == canonical(demo.SCHEMA_DOC)
    assert (root / "concepts.frag").read_text() == demo.CONCEPTS_FRAGMENT
    assert (root / "echo.form").read_text() == demo.ECHO_FORM
    assert (root / "echo_rows.csv").read_text() == demo.ECHO_ROWS
