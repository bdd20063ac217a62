"""Seed a data directory with the sample dataset.

Three patients: P-W carries a systolic LV volume measurement, P-X a severe
RV dilation observation, P-Y a cerebellar tumour location tagged with an
anatomy concept. The concept fragment wires Cerebellum under Brain so the
bridging query finds P-Y from "Brain". Copies of these definitions live as
plain files under sampledata/ for the CLI walkthrough; a test keeps the
two in sync.

Usage: python -m idm.demo <data_dir>
"""

from __future__ import annotations

import argparse
import sys

from .engine import Engine
from .errors import BadRequest, EngineError
from .jsonutil import canonical
from .quantities import Quantity
from .schema import ConceptInstance, Observation
from .store import Instant, Relative

SCHEMA_DOC = {
    "classifications": [
        {"id": "Severity", "items": ["No", "Mild", "Moderate", "Severe"],
         "name": "Severity grades"},
    ],
    "cvts": [
        {"category": "Measurement", "dimension": "length", "id": "Height",
         "name": "Standing height"},
        {"category": "Annotation", "id": "Note", "name": "Clinical note"},
        {"category": "ObservationByClassification", "classification": "Severity",
         "id": "RVDilation", "name": "RV dilation"},
        {"category": "Measurement", "dimension": "volume_per_bsa",
         "id": "SysLVPVol", "name": "Systolic LV volume"},
        {"category": "MedicalConceptInstance", "id": "TumourLoc",
         "name": "Tumour location"},
    ],
    "dimensions": [
        {"base_unit": "m", "id": "length"},
        {"base_unit": "kg", "id": "mass"},
        {"base_unit": "K", "id": "temperature"},
        {"base_unit": "s", "id": "time_duration"},
        {"base_unit": "mL_per_m2", "id": "volume_per_bsa"},
    ],
    "mets": [
        {"id": "Echo", "members": ["Note", "RVDilation", "SysLVPVol"],
         "name": "Echocardiography",
         "relationships": [{"from": "Echo", "name": "measures", "to": "SysLVPVol"}]},
        {"id": "Onco", "members": ["Note", "TumourLoc"],
         "name": "Oncology assessment", "relationships": []},
        {"id": "PhysExam", "members": ["Height", "Note"],
         "name": "Physical examination", "relationships": []},
    ],
    "units": [
        {"dimension": "temperature", "factor": 1.0, "id": "K", "name": "K",
         "offset": 0.0},
        {"dimension": "volume_per_bsa", "factor": 1000.0, "id": "L_per_m2",
         "name": "L/m²", "offset": 0.0},
        {"dimension": "length", "factor": 0.01, "id": "cm", "name": "cm",
         "offset": 0.0},
        {"dimension": "temperature", "factor": 1.0, "id": "degC", "name": "°C",
         "offset": 273.15},
        {"dimension": "temperature", "factor": 0.5555555555555556, "id": "degF",
         "name": "°F", "offset": 255.37222222222223},
        {"dimension": "mass", "factor": 0.001, "id": "g", "name": "g",
         "offset": 0.0},
        {"dimension": "time_duration", "factor": 3600.0, "id": "h", "name": "h",
         "offset": 0.0},
        {"dimension": "length", "factor": 0.0254, "id": "in", "name": "in",
         "offset": 0.0},
        {"dimension": "mass", "factor": 1.0, "id": "kg", "name": "kg",
         "offset": 0.0},
        {"dimension": "mass", "factor": 0.45359237, "id": "lb", "name": "lb",
         "offset": 0.0},
        {"dimension": "length", "factor": 1.0, "id": "m", "name": "m",
         "offset": 0.0},
        {"dimension": "volume_per_bsa", "factor": 1.0, "id": "mL_per_m2",
         "name": "mL/m²", "offset": 0.0},
        {"dimension": "time_duration", "factor": 60.0, "id": "min", "name": "min",
         "offset": 0.0},
        {"dimension": "length", "factor": 0.001, "id": "mm", "name": "mm",
         "offset": 0.0},
        {"dimension": "time_duration", "factor": 1.0, "id": "s", "name": "s",
         "offset": 0.0},
    ],
}

CONCEPTS_FRAGMENT = """\
# Anatomy and finding concepts used by the sample records
@prefix fma: <urn:fma:>
@prefix med: <urn:sample-med:>
C fma:Brain Anatomical "Brain"
C fma:Cerebellum Anatomical "Cerebellum"
C fma:Heart Anatomical "Heart"
C fma:LeftVentricle Anatomical "Left ventricle"
C med:SysLVVolume Symptom "systolic left ventricle volume"
C med:RVDilation Symptom "RV dilatation"
C med:HeartRate Symptom "heart rate"
C med:HeartMurmur Symptom "heart murmur"
C med:Tumour Disease "Tumour"
C med:BrainTumour Disease "Brain tumour"
T fma:Cerebellum regional_part_of fma:Brain
T fma:LeftVentricle regional_part_of fma:Heart
T med:BrainTumour is_a med:Tumour
"""

ECHO_FORM = """\
# Transcribed echo protocol sheet
FORM EchoForm "Echocardiography protocol"
SECTION "Ventricles"
FIELD SysVol "Systolic LV volume (mL/m2)" number unit=mL/m2
FIELD RVDil "RV dilation" checkbox No|Mild|Moderate|Severe
SECTION "Findings"
FIELD Comment "Comments" text
"""

ECHO_ROWS = """\
patient,visit_date,SysVol,RVDil,Comment
Q-01,2008-01-10T09:00:00Z,28.1,No,
Q-01,2008-04-12T09:30:00Z,31.4,Mild,gradual dilation
Q-02,2008-01-11T10:00:00Z,24.9,No,
Q-02,2008-05-02T09:15:00Z,26.3,No,stable
Q-03,2008-01-15T08:45:00Z,35.2,Severe,urgent review
Q-03,2008-02-20T08:45:00Z,33.0,Moderate,responding to treatment
Q-04,2008-01-18T11:00:00Z,,Mild,image quality poor
Q-05,2008-01-21T09:00:00Z,27.7,,
Q-06,2008-01-22T14:00:00Z,29.0,No,
Q-06,2008-06-30T14:30:00Z,30.2,Mild,
Q-07,2008-02-01T09:00:00Z,41.5,Severe,marked dilation
Q-08,2008-02-03T10:10:00Z,22.4,No,
Q-09,2008-02-05T10:00:00Z,30.5,Catastrophic,transcription error
Q-10,2008-02-07T13:20:00Z,25.1,No,
Q-10,2008-07-15T13:00:00Z,24.8,No,unchanged
Q-11,2008-02-11T09:40:00Z,33.9,Moderate,
Q-12,2008-02-14T15:00:00Z,,No,echo window limited
Q-13,2008-02-19T09:05:00Z,28.8,Mild,mild symptoms reported
Q-14,2008-02-25T11:30:00Z,36.6,severe,lower-case entry on sheet
Q-15,2008-03-01T08:30:00Z,26.0,No,
"""


def seed(engine: Engine) -> dict:
    if engine.store.has_patient("P-W"):
        raise BadRequest("data directory already holds the sample dataset")
    schema_counts = engine.load_schema_document(SCHEMA_DOC)
    concept_counts = engine.import_fragment_text(CONCEPTS_FRAGMENT)

    engine.create_patient("P-W", {"gender": "M", "year_of_birth": "1999"})
    visit = engine.record_visit("P-W", "2007-03-01T09:00:00Z", "baseline")
    event = engine.record_event(visit.id, "Echo", Instant("2007-03-01T09:00:00Z"))
    volume = engine.record_cv(event.id, "SysLVPVol", Quantity(30.5, "mL_per_m2"))
    engine.attach_annotation(event.id, "Note", "routine echo, good image quality",
                             volume.id)

    engine.create_patient("P-X", {"gender": "F", "year_of_birth": "1971"})
    visit = engine.record_visit("P-X", "2007-03-02T10:30:00Z", "baseline")
    event = engine.record_event(visit.id, "Echo", Instant("2007-03-02T10:30:00Z"))
    engine.record_cv(event.id, "RVDilation", Observation("Severe"))

    engine.create_patient("P-Y", {"gender": "M", "year_of_birth": "2001"})
    engine.add_family_link("P-Y", "mother", "P-X")
    visit = engine.record_visit("P-Y", "2007-03-03T11:00:00Z", "baseline")
    event = engine.record_event(visit.id, "Onco", Instant("2007-03-03T11:00:00Z"))
    location = engine.record_cv(event.id, "TumourLoc",
                                ConceptInstance("fma:Cerebellum"))
    plan = engine.record_event(visit.id, "Onco", Relative(event.id, "after"))
    engine.attach_annotation(plan.id, "Note",
                             "resection planned; chemotherapy to follow")

    engine.link_concept("med:SysLVVolume", "SysLVPVol", "MetadataAnnotation")
    engine.link_concept("med:RVDilation", "RVDilation", "MetadataAnnotation")
    engine.link_concept("fma:LeftVentricle", "SysLVPVol", "MetadataAnnotation")
    engine.link_concept("fma:Cerebellum", location.id, "DataInstance")

    form_report = engine.ingest_form_text(ECHO_FORM)
    return {
        "concepts": concept_counts,
        "form": form_report["form"],
        "patients": [p.id for p in engine.store.all_patients()],
        "schema": schema_counts,
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="idm-demo", description="seed a data directory with sample records")
    parser.add_argument("data_dir", help="directory for the engine's files")
    args = parser.parse_args(argv)
    try:
        engine = Engine(args.data_dir)
        summary = seed(engine)
    except EngineError as exc:
        print(f"ERROR {exc.code}: {exc.detail}", file=sys.stderr)
        return 1
    sys.stdout.write(canonical(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
