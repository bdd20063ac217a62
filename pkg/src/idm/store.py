"""Data layer: patients, visits, medical events and clinical variables.

Every stored value hangs off the chain patient -> visit -> event -> CV and
must pass the schema admission check before it is accepted. Events carry a
time specification: an instant, an interval, or a position relative to
another event of the same patient. The store is in-memory only; durability
is layered on top by the engine.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional, Union

from .errors import (
    BadRequest,
    BadTimestamp,
    CrossPatientLink,
    CVTNotInMET,
    CyclicRelativeTime,
    DuplicateId,
    UnknownAnchor,
    UnknownEvent,
    UnknownPatient,
    UnknownTarget,
    UnknownVisit,
    ValidationFailed,
)
from .schema import (
    Annotation,
    DicomImage,
    DicomSeries,
    Payload,
    SchemaRegistry,
    Violation,
    payload_from_json,
    payload_to_json,
)
from .quantities import Quantity

RELATIVE_RELATIONS = ("before", "after", "during", "overlaps")


def parse_instant(text: str) -> datetime:
    """ISO-8601 timestamp or date; a trailing Z means UTC."""
    if not isinstance(text, str) or not text:
        raise BadTimestamp(f"timestamp {text!r} is not ISO-8601")
    raw = text[:-1] + "+00:00" if text.endswith("Z") else text
    try:
        parsed = datetime.fromisoformat(raw)
    except ValueError:
        raise BadTimestamp(f"timestamp '{text}' is not ISO-8601") from None
    # naive timestamps sort and compare as UTC
    return parsed if parsed.tzinfo else parsed.replace(tzinfo=timezone.utc)


# --- time specifications -----------------------------------------------------

@dataclass(frozen=True)
class Instant:
    at: str

    def to_json(self):
        return {"at": self.at, "kind": "instant"}


@dataclass(frozen=True)
class Interval:
    start: str
    end: Optional[str] = None  # open-ended while the episode lasts

    def to_json(self):
        return {"end": self.end, "kind": "interval", "start": self.start}


@dataclass(frozen=True)
class Relative:
    anchor: str  # event id
    relation: str

    def to_json(self):
        return {"anchor": self.anchor, "kind": "relative", "relation": self.relation}


TimeSpec = Union[Instant, Interval, Relative]


def timespec_from_json(obj: dict) -> TimeSpec:
    kind = obj.get("kind")
    if kind == "instant":
        return Instant(obj["at"])
    if kind == "interval":
        return Interval(obj["start"], obj.get("end"))
    if kind == "relative":
        return Relative(obj["anchor"], obj["relation"])
    raise BadRequest(f"unknown time kind {kind!r}")


# --- records ----------------------------------------------------------------

@dataclass
class Patient:
    id: str
    attributes: dict
    links: list = field(default_factory=list)  # (relation, patient id) pairs


@dataclass(frozen=True)
class Visit:
    id: str
    patient: str
    timestamp: str
    purpose: str


@dataclass(frozen=True)
class MedicalEvent:
    id: str
    visit: str
    met: str
    time: TimeSpec


@dataclass(frozen=True)
class ClinicalVariable:
    id: str
    event: str
    cvt: str
    payload: Payload


def display_value(value: float) -> str:
    s = repr(float(value))
    return s[:-2] if s.endswith(".0") else s


class DataStore:
    def __init__(self, schema: SchemaRegistry):
        self.schema = schema
        self._patients: dict[str, Patient] = {}
        self._visits: dict[str, Visit] = {}
        self._events: dict[str, MedicalEvent] = {}
        self._cvs: dict[str, ClinicalVariable] = {}
        self._visits_of: dict[str, list] = {}
        self._events_of: dict[str, list] = {}
        self._cvs_of: dict[str, list] = {}
        self._counters = {"v": 0, "e": 0, "cv": 0}

    # -- id generation ----------------------------------------------------------

    def _next_id(self, prefix: str, explicit: Optional[str]) -> str:
        if explicit is not None:
            head = prefix + "-"
            if explicit.startswith(head) and explicit[len(head):].isdigit():
                self._counters[prefix] = max(self._counters[prefix],
                                             int(explicit[len(head):]))
            return explicit
        self._counters[prefix] += 1
        return f"{prefix}-{self._counters[prefix]}"

    # -- patients ----------------------------------------------------------------

    def create_patient(self, pid: str, attributes: Optional[dict] = None) -> Patient:
        if not pid:
            raise BadRequest("patient id must be non-empty")
        if pid in self._patients:
            raise DuplicateId(f"patient '{pid}' already exists")
        record = Patient(pid, dict(attributes or {}))
        self._patients[pid] = record
        self._visits_of[pid] = []
        return record

    def has_patient(self, pid: str) -> bool:
        return pid in self._patients

    def patient(self, pid: str) -> Patient:
        try:
            return self._patients[pid]
        except KeyError:
            raise UnknownPatient(f"patient '{pid}' does not exist") from None

    def add_family_link(self, pid: str, relation: str, relative: str) -> None:
        patient = self.patient(pid)
        self.patient(relative)
        if not relation:
            raise BadRequest("family link needs a relation label")
        if (relation, relative) not in patient.links:
            patient.links.append((relation, relative))

    def all_patients(self) -> list[Patient]:
        return sorted(self._patients.values(), key=lambda p: p.id)

    def all_visits(self) -> list[Visit]:
        return list(self._visits.values())

    def all_events(self) -> list[MedicalEvent]:
        return list(self._events.values())

    def all_cvs(self) -> list[ClinicalVariable]:
        return list(self._cvs.values())

    # -- visits ----------------------------------------------------------------

    def create_visit(self, pid: str, timestamp: str, purpose: str,
                     visit_id: Optional[str] = None) -> Visit:
        self.patient(pid)
        parse_instant(timestamp)
        vid = self._next_id("v", visit_id)
        if vid in self._visits:
            raise DuplicateId(f"visit '{vid}' already exists")
        record = Visit(vid, pid, timestamp, purpose)
        self._visits[vid] = record
        self._visits_of[pid].append(vid)
        self._events_of[vid] = []
        return record

    def has_visit(self, vid: str) -> bool:
        return vid in self._visits

    def visit(self, vid: str) -> Visit:
        try:
            return self._visits[vid]
        except KeyError:
            raise UnknownVisit(f"visit '{vid}' does not exist") from None

    def visits_of(self, pid: str) -> list[Visit]:
        self.patient(pid)
        return [self._visits[v] for v in self._visits_of[pid]]

    def find_visit(self, pid: str, timestamp: str) -> Optional[Visit]:
        for visit in self.visits_of(pid):
            if visit.timestamp == timestamp:
                return visit
        return None

    # -- events ----------------------------------------------------------------

    def record_event(self, vid: str, met_id: str, time: TimeSpec,
                     event_id: Optional[str] = None) -> MedicalEvent:
        visit = self.visit(vid)
        self.schema.met(met_id)
        self._check_time(visit, time)
        eid = self._next_id("e", event_id)
        if eid in self._events:
            raise DuplicateId(f"event '{eid}' already exists")
        record = MedicalEvent(eid, vid, met_id, time)
        self._events[eid] = record
        self._events_of[vid].append(eid)
        self._cvs_of[eid] = []
        self._assert_acyclic(eid)
        return record

    def _check_time(self, visit: Visit, time: TimeSpec) -> None:
        if isinstance(time, Instant):
            parse_instant(time.at)
        elif isinstance(time, Interval):
            start = parse_instant(time.start)
            if time.end is not None and parse_instant(time.end) < start:
                raise BadTimestamp(f"interval ends before it starts: {time}")
        elif isinstance(time, Relative):
            if time.relation not in RELATIVE_RELATIONS:
                raise BadRequest(f"unknown time relation '{time.relation}'")
            if time.anchor not in self._events:
                raise UnknownAnchor(f"anchor event '{time.anchor}' does not exist")
            anchor_visit = self.visit(self._events[time.anchor].visit)
            if anchor_visit.patient != visit.patient:
                raise CrossPatientLink(
                    f"anchor '{time.anchor}' belongs to patient "
                    f"'{anchor_visit.patient}', not '{visit.patient}'")
        else:
            raise BadRequest(f"not a time specification: {time!r}")

    def _assert_acyclic(self, start: str) -> None:
        # anchors always point at pre-existing events, so a cycle can only
        # come from a corrupted log; the walk is cheap insurance
        seen = set()
        eid = start
        while True:
            event = self._events.get(eid)
            if event is None or not isinstance(event.time, Relative):
                return
            if eid in seen:
                raise CyclicRelativeTime(f"relative-time cycle through '{start}'")
            seen.add(eid)
            eid = event.time.anchor

    def has_event(self, eid: str) -> bool:
        return eid in self._events

    def event(self, eid: str) -> MedicalEvent:
        try:
            return self._events[eid]
        except KeyError:
            raise UnknownEvent(f"event '{eid}' does not exist") from None

    def events_of(self, vid: str) -> list[MedicalEvent]:
        self.visit(vid)
        return [self._events[e] for e in self._events_of[vid]]

    # -- clinical variables -------------------------------------------------------

    def record_cv(self, eid: str, cvt_id: str, payload: Payload,
                  cv_id: Optional[str] = None) -> ClinicalVariable:
        event = self.event(eid)
        met = self.schema.met(event.met)
        cvt = self.schema.cvt(cvt_id)
        if cvt_id not in met.members:
            raise CVTNotInMET(f"CVT '{cvt_id}' is not a member of MET '{met.id}'")
        violations = self.schema.validate_cv(cvt_id, payload)
        violations += self._check_references(event, cvt, payload)
        if violations:
            raise ValidationFailed(violations)
        cid = self._next_id("cv", cv_id)
        if cid in self._cvs:
            raise DuplicateId(f"CV '{cid}' already exists")
        record = ClinicalVariable(cid, eid, cvt_id, payload)
        self._cvs[cid] = record
        self._cvs_of[eid].append(cid)
        return record

    def _check_references(self, event, cvt, payload) -> list[Violation]:
        patient = self.visit(event.visit).patient
        if isinstance(payload, Annotation) and payload.target is not None:
            if payload.target not in self._cvs:
                raise UnknownTarget(f"annotated CV '{payload.target}' does not exist")
            if self.patient_of_cv(payload.target) != patient:
                raise CrossPatientLink(
                    f"annotated CV '{payload.target}' belongs to another patient")
        if isinstance(payload, DicomImage):
            sop = payload.tags.get("SOPInstanceUID")
            if sop and any(
                    isinstance(cv.payload, DicomImage)
                    and cv.payload.tags.get("SOPInstanceUID") == sop
                    for cv in self.cvs_of_patient(patient)):
                return [Violation("duplicate-sop",
                                  f"SOPInstanceUID '{sop}' already stored for '{patient}'")]
        if isinstance(payload, DicomSeries):
            return self._check_series(patient, payload)
        return []

    def _check_series(self, patient: str, series: DicomSeries) -> list[Violation]:
        out = []
        studies = set()
        for ref in series.images:
            cv = self._cvs.get(ref)
            if cv is None or self.patient_of_cv(ref) != patient:
                out.append(Violation("missing-image",
                                     f"series references unknown image '{ref}'"))
                continue
            if not isinstance(cv.payload, DicomImage):
                out.append(Violation("not-an-image", f"'{ref}' is not a DICOM image"))
                continue
            studies.add(cv.payload.tags.get("StudyInstanceUID"))
        if len(studies) > 1:
            out.append(Violation("mixed-studies",
                                 f"images span studies {sorted(studies)}"))
        return out

    def has_cv(self, cid: str) -> bool:
        return cid in self._cvs

    def cv(self, cid: str) -> ClinicalVariable:
        try:
            return self._cvs[cid]
        except KeyError:
            raise UnknownTarget(f"CV '{cid}' does not exist") from None

    def cvs_of(self, eid: str) -> list[ClinicalVariable]:
        self.event(eid)
        return [self._cvs[c] for c in self._cvs_of[eid]]

    def cvs_of_patient(self, pid: str) -> list[ClinicalVariable]:
        return [cv for visit in self.visits_of(pid)
                for event in self.events_of(visit.id)
                for cv in self.cvs_of(event.id)]

    def patient_of_cv(self, cid: str) -> str:
        return self.visit(self.event(self.cv(cid).event).visit).patient

    def patient_of_event(self, eid: str) -> str:
        return self.visit(self.event(eid).visit).patient

    # -- record rendering -----------------------------------------------------------

    def render_cv(self, cv: ClinicalVariable) -> dict:
        cvt = self.schema.cvt(cv.cvt)
        return {"category": cvt.category.value, "cvt": cvt.id, "cvt_name": cvt.name,
                "id": cv.id, "value": self.render_payload(cv.payload)}

    def render_payload(self, payload: Payload) -> dict:
        body = payload_to_json(payload)
        if isinstance(payload, Quantity):
            body["unit_name"] = self.schema.units.unit(payload.unit).display_name
        return body

    def display_cv(self, cv: ClinicalVariable) -> str:
        p = cv.payload
        if isinstance(p, Quantity):
            unit = self.schema.units.unit(p.unit)
            return f"{display_value(p.value)} {unit.display_name}"
        if isinstance(p, Annotation):
            return p.text
        body = payload_to_json(p)
        for key in ("item", "uri", "concept"):
            if key in body:
                return str(body[key])
        return f"[{self.schema.cvt(cv.cvt).category.value}]"

    def get_patient_record(self, pid: str) -> dict:
        """Whole record as one canonical tree: visits sorted by time then id,
        events and CVs in insertion order."""
        patient = self.patient(pid)
        visits = sorted(self.visits_of(pid),
                        key=lambda v: (parse_instant(v.timestamp), v.id))
        return {
            "attributes": dict(sorted(patient.attributes.items())),
            "id": patient.id,
            "links": [{"relation": rel, "to": other} for rel, other in patient.links],
            "visits": [self._render_visit(v) for v in visits],
        }

    def _render_visit(self, visit: Visit) -> dict:
        return {
            "events": [self._render_event(e) for e in self.events_of(visit.id)],
            "id": visit.id,
            "purpose": visit.purpose,
            "timestamp": visit.timestamp,
        }

    def _render_event(self, event: MedicalEvent) -> dict:
        met = self.schema.met(event.met)
        return {
            "cvs": [self.render_cv(cv) for cv in self.cvs_of(event.id)],
            "id": event.id,
            "met": met.id,
            "met_name": met.name,
            "time": event.time.to_json(),
        }

    # -- journaling helpers -----------------------------------------------------------

    @staticmethod
    def cv_body(cv: ClinicalVariable) -> dict:
        return {"cvt": cv.cvt, "event": cv.event, "id": cv.id,
                "payload": payload_to_json(cv.payload)}

    def cv_from_body(self, body: dict) -> ClinicalVariable:
        category = self.schema.cvt(body["cvt"]).category
        return self.record_cv(body["event"], body["cvt"],
                              payload_from_json(category, body["payload"]),
                              cv_id=body["id"])
