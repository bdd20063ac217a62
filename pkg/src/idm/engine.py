"""Engine: one object owning all layers plus durability.

Every mutation is appended to a JSONL log under the data directory and
replayed on startup, so reopening a data_dir reproduces the exact store.
Field mappings live in a separate canonical-JSON file because they are
upserted (confirmation flips them in place) rather than appended.
"""

from __future__ import annotations

import json
import os
from dataclasses import replace
from pathlib import Path
from typing import Optional

from . import ingest
from .errors import (
    BadRequest,
    UnconfirmedMapping,
    UnknownProposal,
)
from .jsonutil import canonical, canonical_line
from .quantities import UnitRegistry
from .schema import Annotation, Category, Relationship, SchemaRegistry
from .semantics import ConceptStore, parse_fragment
from .store import DataStore, Instant, TimeSpec, parse_instant, timespec_from_json
from .query import QueryEngine, parse_query

LOG_NAME = "engine.log"
MAPPINGS_NAME = "mappings.json"
DEFAULT_THRESHOLD = 0.5
DEFAULT_K = 5


class Engine:
    def __init__(self, data_dir, similarity_threshold: float = DEFAULT_THRESHOLD,
                 suggestion_k: int = DEFAULT_K):
        if not 0.0 <= similarity_threshold <= 1.0:
            raise BadRequest("similarity threshold must be within [0, 1]")
        if suggestion_k < 1:
            raise BadRequest("suggestion count must be at least 1")
        self.similarity_threshold = similarity_threshold
        self.suggestion_k = suggestion_k
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.units = UnitRegistry()
        self.concepts = ConceptStore(cvt_exists=lambda t: self.schema.has_cvt(t),
                                     cv_exists=lambda t: self.store.has_cv(t))
        self.schema = SchemaRegistry(
            self.units, concept_resolver=self.concepts.has_concept)
        self.store = DataStore(self.schema)
        self.queries = QueryEngine(self.store, self.concepts)
        self.mappings: dict[tuple, ingest.MappingEntry] = {}
        self._log_path = self.data_dir / LOG_NAME
        self._mappings_path = self.data_dir / MAPPINGS_NAME
        self._seq = 0
        self._replay()
        self._load_mappings()

    # -- persistence -------------------------------------------------------------

    def _journal(self, kind: str, body: dict) -> None:
        self._seq += 1
        line = canonical_line({"body": body, "kind": kind, "seq": self._seq})
        with open(self._log_path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _replay(self) -> None:
        if not self._log_path.exists():
            return
        with open(self._log_path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    self._apply(record["kind"], record["body"])
                    self._seq = max(self._seq, record["seq"])
                except (KeyError, ValueError) as exc:
                    raise BadRequest(f"log line {line_no} is corrupt: {exc}") from None

    def _apply(self, kind: str, body: dict) -> None:
        if kind == "unit":
            self.units.register_unit(body["id"], body["name"], body["dimension"],
                                     body["factor"], body["offset"])
        elif kind == "classification":
            self.schema.define_classification(body["id"], body["name"], body["items"])
        elif kind == "cvt":
            self.schema.define_cvt(body["id"], body["name"], body["category"],
                                   body.get("dimension"), body.get("classification"))
        elif kind == "met":
            self.schema.define_met(
                body["id"], body["name"], body["members"],
                [Relationship(r["name"], r["from"], r["to"])
                 for r in body["relationships"]])
        elif kind == "met_extend":
            self.schema.extend_met(body["met"], body["cvt"])
        elif kind == "patient":
            self.store.create_patient(body["id"], body["attributes"])
        elif kind == "family_link":
            self.store.add_family_link(body["patient"], body["relation"],
                                       body["relative"])
        elif kind == "visit":
            self.store.create_visit(body["patient"], body["timestamp"],
                                    body["purpose"], visit_id=body["id"])
        elif kind == "event":
            self.store.record_event(body["visit"], body["met"],
                                    timespec_from_json(body["time"]),
                                    event_id=body["id"])
        elif kind == "cv":
            self.store.cv_from_body(body)
        elif kind == "concept":
            self.concepts.add_concept(body["uri"], body["label"], body["type"],
                                      body["source"])
        elif kind == "triple":
            self.concepts.add_triple(body["subject"], body["predicate"],
                                     body["object"])
        elif kind == "link":
            self.concepts.add_link(body["concept"], body["target"], body["kind"])
        else:
            raise BadRequest(f"unknown log record kind '{kind}'")

    def _load_mappings(self) -> None:
        if not self._mappings_path.exists():
            return
        with open(self._mappings_path, encoding="utf-8") as fh:
            for obj in json.load(fh):
                entry = ingest.MappingEntry.from_json(obj)
                self.mappings[(entry.form_id, entry.field_name)] = entry

    def _save_mappings(self) -> None:
        rows = [e.to_json() for e in sorted(self.mappings.values(),
                                            key=lambda e: (e.form_id, e.field_name))]
        self._mappings_path.write_text(canonical(rows), encoding="utf-8")

    # -- quantities and schema ------------------------------------------------------

    def register_unit(self, unit_id: str, display_name: str, dimension: str,
                      factor: float, offset: float = 0.0):
        unit = self.units.register_unit(unit_id, display_name, dimension,
                                        factor, offset)
        self._journal("unit", {"dimension": unit.dimension, "factor": unit.factor,
                               "id": unit.id, "name": unit.display_name,
                               "offset": unit.offset})
        return unit

    def define_classification(self, cid: str, name: str, items):
        record = self.schema.define_classification(cid, name, items)
        self._journal("classification",
                      {"id": record.id, "items": list(record.items),
                       "name": record.name})
        return record

    def define_cvt(self, cvt_id: str, name: str, category,
                   dimension: Optional[str] = None,
                   classification: Optional[str] = None):
        record = self.schema.define_cvt(cvt_id, name, category, dimension,
                                        classification)
        body = {"category": record.category.value, "id": record.id,
                "name": record.name}
        if record.dimension is not None:
            body["dimension"] = record.dimension
        if record.classification is not None:
            body["classification"] = record.classification
        self._journal("cvt", body)
        return record

    def define_met(self, met_id: str, name: str, member_cvts, relationships=()):
        record = self.schema.define_met(met_id, name, member_cvts, relationships)
        self._journal("met", {
            "id": record.id, "members": list(record.members), "name": record.name,
            "relationships": [{"from": r.source, "name": r.name, "to": r.target}
                              for r in record.relationships]})
        return record

    def extend_met(self, met_id: str, cvt_id: str):
        met = self.schema.met(met_id)
        if cvt_id in met.members:
            return met
        record = self.schema.extend_met(met_id, cvt_id)
        self._journal("met_extend", {"cvt": cvt_id, "met": met_id})
        return record

    def schema_document(self) -> dict:
        return {"classifications": self.schema.classification_records(),
                "cvts": self.schema.cvt_records(),
                "dimensions": self.units.dimension_records(),
                "mets": self.schema.met_records(),
                "units": self.units.unit_records()}

    def load_schema_document(self, doc: dict) -> dict:
        """Register a schema file's contents; identical re-loads add nothing."""
        if not isinstance(doc, dict):
            raise BadRequest("schema document must be a JSON object")
        counts = {"classifications": 0, "cvts": 0, "dimensions": 0, "mets": 0,
                  "units": 0}
        units = {u["id"]: u for u in doc.get("units", [])}
        base_ids = []
        for dim in doc.get("dimensions", []):
            base = units.get(dim["base_unit"])
            if base is None or base["dimension"] != dim["id"] \
                    or base["factor"] != 1.0 or base["offset"] != 0.0:
                raise BadRequest(
                    f"dimension '{dim['id']}' needs base unit "
                    f"'{dim['base_unit']}' with factor 1 and offset 0")
            base_ids.append(dim["base_unit"])
        dims_before = {d.id for d in self.units.all_dimensions()}
        # base units first so their dimensions exist for the rest
        for uid in base_ids + [u for u in units if u not in base_ids]:
            rec = units[uid]
            if self.units.has_unit(uid):
                existing = self.units.unit(uid)
                if (existing.display_name, existing.dimension, existing.factor,
                        existing.offset) != (rec["name"], rec["dimension"],
                                             float(rec["factor"]), float(rec["offset"])):
                    raise BadRequest(f"unit '{uid}' already registered differently")
                continue
            self.register_unit(uid, rec["name"], rec["dimension"], rec["factor"],
                               rec["offset"])
            counts["units"] += 1
        counts["dimensions"] = len(
            {d.id for d in self.units.all_dimensions()} - dims_before)
        existing_cls = {c["id"]: c for c in self.schema.classification_records()}
        for rec in doc.get("classifications", []):
            if rec["id"] in existing_cls:
                if existing_cls[rec["id"]] != rec:
                    raise BadRequest(
                        f"classification '{rec['id']}' already defined differently")
                continue
            self.define_classification(rec["id"], rec["name"], rec["items"])
            counts["classifications"] += 1
        existing_cvts = {c["id"]: c for c in self.schema.cvt_records()}
        for rec in doc.get("cvts", []):
            if rec["id"] in existing_cvts:
                if existing_cvts[rec["id"]] != rec:
                    raise BadRequest(f"CVT '{rec['id']}' already defined differently")
                continue
            self.define_cvt(rec["id"], rec["name"], rec["category"],
                            rec.get("dimension"), rec.get("classification"))
            counts["cvts"] += 1
        existing_mets = {m["id"]: m for m in self.schema.met_records()}
        for rec in doc.get("mets", []):
            rec = {"relationships": [], **rec}
            if rec["id"] in existing_mets:
                if existing_mets[rec["id"]] != rec:
                    raise BadRequest(f"MET '{rec['id']}' already defined differently")
                continue
            self.define_met(rec["id"], rec["name"], rec["members"],
                            [Relationship(r["name"], r["from"], r["to"])
                             for r in rec["relationships"]])
            counts["mets"] += 1
        return counts

    def load_schema_file(self, path) -> dict:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise BadRequest(f"cannot read schema file: {exc}") from None
        try:
            doc = json.loads(text)
        except ValueError as exc:
            raise BadRequest(f"schema file is not valid JSON: {exc}") from None
        return self.load_schema_document(doc)

    def list_schema(self, category: Optional[str] = None,
                    name_contains: Optional[str] = None) -> list[dict]:
        return self.schema.list_schema(category, name_contains)

    # -- store ----------------------------------------------------------------------

    def create_patient(self, pid: str, attributes: Optional[dict] = None,
                       family_links=()):
        patient = self.store.create_patient(pid, attributes)
        self._journal("patient", {"attributes": dict(patient.attributes),
                                  "id": patient.id})
        for relation, relative in family_links:
            self.add_family_link(pid, relation, relative)
        return patient

    def add_family_link(self, pid: str, relation: str, relative: str) -> None:
        self.store.add_family_link(pid, relation, relative)
        self._journal("family_link", {"patient": pid, "relation": relation,
                                      "relative": relative})

    def record_visit(self, pid: str, timestamp: str, purpose: str):
        visit = self.store.create_visit(pid, timestamp, purpose)
        self._journal("visit", {"id": visit.id, "patient": visit.patient,
                                "purpose": visit.purpose,
                                "timestamp": visit.timestamp})
        return visit

    def record_event(self, visit_id: str, met_id: str, time: TimeSpec):
        event = self.store.record_event(visit_id, met_id, time)
        self._journal("event", {"id": event.id, "met": event.met,
                                "time": event.time.to_json(),
                                "visit": event.visit})
        return event

    def record_cv(self, event_id: str, cvt_id: str, payload):
        cv = self.store.record_cv(event_id, cvt_id, payload)
        self._journal("cv", DataStore.cv_body(cv))
        return cv

    def attach_annotation(self, event_id: str, annotation_cvt_id: str, text: str,
                          target_cv_id: Optional[str] = None):
        return self.record_cv(event_id, annotation_cvt_id,
                              Annotation(text, target_cv_id))

    def get_patient_record(self, pid: str) -> dict:
        return self.store.get_patient_record(pid)

    # -- semantics ---------------------------------------------------------------------

    def import_fragment_text(self, text: str) -> dict:
        concepts, triples = parse_fragment(text)
        new_concepts, new_triples = self.concepts.import_parsed(concepts, triples)
        for c in new_concepts:
            self._journal("concept", ConceptStore.concept_body(c))
        for t in new_triples:
            self._journal("triple", ConceptStore.triple_body(t))
        return {"concepts": len(new_concepts), "triples": len(new_triples)}

    def import_concepts(self, path) -> dict:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise BadRequest(f"cannot read fragment file: {exc}") from None
        return self.import_fragment_text(text)

    def link_concept(self, concept_uri: str, target_id: str, kind: str):
        before = len(self.concepts.all_links())
        link = self.concepts.add_link(concept_uri, target_id, kind)
        if len(self.concepts.all_links()) > before:  # journal only fresh links
            self._journal("link", ConceptStore.link_body(link))
        return link

    def expand_concept(self, uri: str, predicate: str,
                       direction: str = "forward") -> dict:
        uris, unknown = self.concepts.expand(uri, predicate, direction)
        return {"concepts": sorted(uris), "direction": direction,
                "predicate": predicate, "start": uri,
                "unknown_predicate": unknown}

    # -- ingestion ---------------------------------------------------------------------

    def suggest(self, label: str, k: Optional[int] = None) -> list[dict]:
        return ingest.suggest_concepts(label, self.concepts.all_concepts(),
                                       k or self.suggestion_k,
                                       self.similarity_threshold)

    def ingest_form_text(self, text: str) -> dict:
        form = ingest.parse_form(text)
        proposal = ingest.derive_metadata(form, self.units)
        existing_cls = {c["id"]: c for c in self.schema.classification_records()}
        for cid, name, items in proposal.classifications:
            rec = {"id": cid, "items": list(items), "name": name}
            if cid in existing_cls:
                if existing_cls[cid] != rec:
                    raise BadRequest(
                        f"classification '{cid}' already defined differently")
                continue
            self.define_classification(cid, name, items)
        cvt_records = {c["id"]: c for c in self.schema.cvt_records()}
        for kwargs in proposal.cvts:
            rec = {"category": kwargs["category"], "id": kwargs["cvt_id"],
                   "name": kwargs["name"]}
            for key in ("dimension", "classification"):
                if kwargs.get(key) is not None:
                    rec[key] = kwargs[key]
            if rec["id"] in cvt_records:
                if cvt_records[rec["id"]] != rec:
                    raise BadRequest(f"CVT '{rec['id']}' already defined differently")
                continue
            self.define_cvt(**kwargs)
        if self.schema.has_met(proposal.met_id):
            for member in proposal.met_members:
                self.extend_met(proposal.met_id, member)
        elif proposal.met_members:
            self.define_met(proposal.met_id, proposal.met_name, proposal.met_members)
        added = 0
        for entry in proposal.mappings:
            key = (entry.form_id, entry.field_name)
            if key in self.mappings:  # never clobber a human-confirmed mapping
                continue
            self.mappings[key] = entry
            added += 1
        if added:
            self._save_mappings()
        return {"classifications": [c[0] for c in proposal.classifications],
                "cvts": [c["cvt_id"] for c in proposal.cvts],
                "form": proposal.met_id, "mappings": added,
                "met": proposal.met_id if proposal.met_members else None,
                "warnings": list(proposal.warnings)}

    def ingest_form(self, path) -> dict:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise BadRequest(f"cannot read form file: {exc}") from None
        return self.ingest_form_text(text)

    def list_mappings(self, form_id: Optional[str] = None) -> list[dict]:
        entries = sorted(self.mappings.values(),
                         key=lambda e: (e.form_id, e.field_name))
        if form_id is not None:
            entries = [e for e in entries if e.form_id == form_id]
        return [e.to_json() for e in entries]

    def confirm_mapping(self, form_id: str, field_name: str, cvt_id: str,
                        concept_uri: Optional[str] = None) -> dict:
        entry = self.mappings.get((form_id, field_name))
        if entry is None:
            raise UnknownProposal(
                f"no mapping proposal for form '{form_id}' field '{field_name}'")
        cvt = self.schema.cvt(cvt_id)
        if concept_uri is not None:
            self.concepts.concept(concept_uri)
        if cvt.category.value != entry.category:
            raise BadRequest(
                f"field '{field_name}' produces {entry.category} payloads, "
                f"CVT '{cvt_id}' is {cvt.category.value}")
        unit = entry.unit
        if cvt.category is Category.MEASUREMENT:
            if unit is not None and self.units.unit(unit).dimension != cvt.dimension:
                raise BadRequest(
                    f"field '{field_name}' reports unit '{unit}' of dimension "
                    f"'{self.units.unit(unit).dimension}', CVT '{cvt_id}' expects "
                    f"'{cvt.dimension}'")
            if unit is None:
                unit = self.units.dimension(cvt.dimension).base_unit
        updated = replace(entry, cvt_id=cvt_id, unit=unit, concept=concept_uri,
                          confirmed=True)
        self.mappings[(form_id, field_name)] = updated
        self._save_mappings()
        if self.schema.has_met(form_id):
            self.extend_met(form_id, cvt_id)
        if concept_uri is not None:
            self.link_concept(concept_uri, cvt_id, "MetadataAnnotation")
        return updated.to_json()

    def migrate_records(self, path, form_id: str) -> dict:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise BadRequest(f"cannot read data file: {exc}") from None
        return self.migrate_text(text, form_id)

    def migrate_text(self, text: str, form_id: str) -> dict:
        entries = {e.field_name: e for e in self.mappings.values()
                   if e.form_id == form_id}
        if not entries:
            raise UnknownProposal(f"no mappings exist for form '{form_id}'")
        unconfirmed = sorted(f for f, e in entries.items() if not e.confirmed)
        if unconfirmed:
            raise UnconfirmedMapping(
                f"fields {unconfirmed} of form '{form_id}' await confirmation")
        met = self.schema.met(form_id)
        columns, rows = ingest.parse_csv(text, set(entries))
        created = {"cvs": 0, "events": 0, "patients": 0, "visits": 0}
        touched = set()
        rejected = []
        for index, row in enumerate(rows, start=1):
            pid = row.get("patient", "").strip()
            timestamp = row.get("visit_date", "").strip()
            reasons = []
            if not pid:
                reasons.append("patient: missing id")
            try:
                parse_instant(timestamp)
            except Exception as exc:
                reasons.append(f"visit_date: {getattr(exc, 'detail', exc)}")
            writes = []
            for column in columns:
                entry = entries[column]
                payloads, cell_reasons = ingest.payloads_for_cell(
                    self.schema, entry, row.get(column, ""))
                reasons.extend(cell_reasons)
                for payload in payloads:
                    if entry.cvt_id not in met.members:
                        reasons.append(
                            f"{column}: CVT '{entry.cvt_id}' is outside MET "
                            f"'{met.id}'")
                        continue
                    for violation in self.schema.validate_cv(entry.cvt_id, payload):
                        reasons.append(f"{column}: {violation}")
                    writes.append((entry.cvt_id, payload))
            if reasons:
                rejected.append({"reasons": reasons, "row": index})
                continue
            if not self.store.has_patient(pid):
                self.create_patient(pid)
                created["patients"] += 1
            touched.add(pid)
            visit = self.store.find_visit(pid, timestamp)
            if visit is None:
                visit = self.record_visit(pid, timestamp, "imported")
                created["visits"] += 1
            event = self.record_event(visit.id, form_id, Instant(timestamp))
            created["events"] += 1
            for cvt_id, payload in writes:
                self.record_cv(event.id, cvt_id, payload)
                created["cvs"] += 1
        return {"created": created, "patients": sorted(touched),
                "rejected": rejected, "rows": len(rows)}

    # -- queries ----------------------------------------------------------------------

    def run_query(self, text: str) -> dict:
        return self.queries.run(text)

    def explain_query(self, text: str) -> dict:
        return self.queries.explain(parse_query(text))

    # -- integrity -----------------------------------------------------------------------

    def audit(self) -> list[str]:
        """Full-store referential integrity walk; empty list means clean."""
        problems = []
        for patient in self.store.all_patients():
            for relation, relative in patient.links:
                if not self.store.has_patient(relative):
                    problems.append(
                        f"patient '{patient.id}' links to missing '{relative}'")
        for visit in self.store.all_visits():
            if not self.store.has_patient(visit.patient):
                problems.append(f"visit '{visit.id}' has no patient")
        for event in self.store.all_events():
            if not self.store.has_visit(event.visit):
                problems.append(f"event '{event.id}' has no visit")
            if not self.schema.has_met(event.met):
                problems.append(f"event '{event.id}' has unknown MET '{event.met}'")
        for cv in self.store.all_cvs():
            if not self.store.has_event(cv.event):
                problems.append(f"CV '{cv.id}' has no event")
                continue
            met = self.schema.met(self.store.event(cv.event).met)
            if cv.cvt not in met.members:
                problems.append(f"CV '{cv.id}' is outside MET '{met.id}'")
            for violation in self.schema.validate_cv(cv.cvt, cv.payload):
                problems.append(f"CV '{cv.id}': {violation}")
        for link in self.concepts.all_links():
            if link.kind == "MetadataAnnotation" and not self.schema.has_cvt(link.target):
                problems.append(f"link to missing CVT '{link.target}'")
            if link.kind == "DataInstance" and not self.store.has_cv(link.target):
                problems.append(f"link to missing CV '{link.target}'")
        for triple in self.concepts.all_triples():
            for endpoint in (triple.subject, triple.object):
                if not self.concepts.has_concept(endpoint):
                    problems.append(f"triple endpoint '{endpoint}' missing")
        return problems
