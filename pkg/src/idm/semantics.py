"""Semantics layer: URI-identified concepts, triples, and annotation links.

Concepts arrive as fragments of external terminologies and are wired to the
metadata layer (concept -> CVT, "MetadataAnnotation") or to single stored
values (concept -> CV, "DataInstance"). Queries bridge related concepts via
expand(): the reflexive-transitive closure over one predicate's edges.

The graph is append-only; links stay resolvable forever.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Optional

from .errors import (
    BadRequest,
    DanglingTripleEndpoint,
    DuplicateId,
    ParseError,
    UnknownConcept,
    UnknownCVT,
    UnknownTarget,
)

CONCEPT_TYPES = ("Anatomical", "Symptom", "Disease", "TreatmentDrug")
LINK_KINDS = ("MetadataAnnotation", "DataInstance")
BUILTIN_PREDICATES = ("is_a", "regional_part_of")

_PREFIX_RE = re.compile(r"^@prefix\s+([A-Za-z][\w-]*):\s+<([^<>\s]+)>$")
_CONCEPT_RE = re.compile(r'^C\s+(\S+)\s+(\S+)\s+"([^"]*)"$')
_TRIPLE_RE = re.compile(r"^T\s+(\S+)\s+(\S+)\s+(\S+)$")


@dataclass(frozen=True)
class MedicalConcept:
    uri: str
    label: str
    concept_type: str
    source: str


@dataclass(frozen=True)
class ConceptTriple:
    subject: str
    predicate: str
    object: str


@dataclass(frozen=True)
class ConceptLink:
    concept: str
    target: str
    kind: str


def parse_fragment(text: str):
    """Parse a terminology fragment into (concepts, triples).

    Line format: `@prefix p: <iri>` declares a prefix, `C <uri> <type>
    "label"` a concept, `T <s> <p> <o>` a triple, `#` a comment. Concept
    URIs are CURIEs whose prefix must be declared earlier in the file.
    """
    prefixes: dict[str, str] = {}
    concepts: list[MedicalConcept] = []
    triples: list[ConceptTriple] = []
    seen: dict[str, MedicalConcept] = {}

    def resolve(token: str, line_no: int) -> str:
        prefix, _, local = token.partition(":")
        if not local or not prefix:
            raise ParseError(line_no, f"'{token}' is not a prefix:localname URI")
        if prefix not in prefixes:
            raise ParseError(line_no, f"prefix '{prefix}' is not declared")
        return token

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("@prefix"):
            m = _PREFIX_RE.match(line)
            if not m:
                raise ParseError(line_no, "malformed @prefix declaration")
            prefixes[m.group(1)] = m.group(2)
        elif line.startswith("C "):
            m = _CONCEPT_RE.match(line)
            if not m:
                raise ParseError(line_no, 'expected: C <uri> <type> "label"')
            uri, ctype, label = m.groups()
            uri = resolve(uri, line_no)
            if ctype not in CONCEPT_TYPES:
                raise ParseError(
                    line_no, f"concept type '{ctype}' not one of {list(CONCEPT_TYPES)}")
            if not label:
                raise ParseError(line_no, f"concept '{uri}' needs a non-empty label")
            source = prefixes[uri.partition(":")[0]]
            record = MedicalConcept(uri, label, ctype, source)
            if uri in seen:
                if seen[uri] != record:
                    raise ParseError(line_no, f"conflicting redefinition of '{uri}'")
                continue
            seen[uri] = record
            concepts.append(record)
        elif line.startswith("T "):
            m = _TRIPLE_RE.match(line)
            if not m:
                raise ParseError(line_no, "expected: T <subject> <predicate> <object>")
            s, p, o = m.groups()
            triples.append(ConceptTriple(resolve(s, line_no), p, resolve(o, line_no)))
        else:
            raise ParseError(line_no, f"unrecognized line: {line!r}")
    return concepts, triples


class ConceptStore:
    """Concept graph plus links into the metadata and data layers.

    Target existence is checked through injected resolvers so this module
    stays independent of the schema and store modules.
    """

    def __init__(self, cvt_exists: Optional[Callable[[str], bool]] = None,
                 cv_exists: Optional[Callable[[str], bool]] = None):
        self.cvt_exists = cvt_exists
        self.cv_exists = cv_exists
        self._concepts: dict[str, MedicalConcept] = {}
        self._triples: set[ConceptTriple] = set()
        self._out: dict[tuple, set] = {}
        self._in: dict[tuple, set] = {}
        self._predicates: set[str] = set(BUILTIN_PREDICATES)
        self._links: set[ConceptLink] = set()

    # -- concepts and triples ---------------------------------------------------

    def has_concept(self, uri: str) -> bool:
        return uri in self._concepts

    def concept(self, uri: str) -> MedicalConcept:
        try:
            return self._concepts[uri]
        except KeyError:
            raise UnknownConcept(f"concept '{uri}' does not exist") from None

    def all_concepts(self) -> list[MedicalConcept]:
        return sorted(self._concepts.values(), key=lambda c: c.uri)

    def all_triples(self) -> list[ConceptTriple]:
        return sorted(self._triples,
                      key=lambda t: (t.subject, t.predicate, t.object))

    def all_links(self) -> list[ConceptLink]:
        return sorted(self._links, key=lambda l: (l.concept, l.kind, l.target))

    def add_concept(self, uri: str, label: str, concept_type: str,
                    source: str) -> MedicalConcept:
        record = MedicalConcept(uri, label, concept_type, source)
        existing = self._concepts.get(uri)
        if existing is not None:
            if existing != record:
                raise DuplicateId(f"concept '{uri}' already defined differently")
            return existing
        if not label:
            raise BadRequest(f"concept '{uri}' needs a non-empty label")
        if concept_type not in CONCEPT_TYPES:
            raise BadRequest(f"concept type '{concept_type}' is unknown")
        self._concepts[uri] = record
        return record

    def add_triple(self, subject: str, predicate: str, object_: str) -> Optional[ConceptTriple]:
        """Returns the new triple, or None when it was already present."""
        for endpoint in (subject, object_):
            if endpoint not in self._concepts:
                raise DanglingTripleEndpoint(
                    f"triple endpoint '{endpoint}' is not a known concept")
        if not predicate:
            raise BadRequest("triple needs a predicate")
        triple = ConceptTriple(subject, predicate, object_)
        if triple in self._triples:
            return None
        self._triples.add(triple)
        self._out.setdefault((subject, predicate), set()).add(object_)
        self._in.setdefault((object_, predicate), set()).add(subject)
        self._predicates.add(predicate)
        return triple

    def import_parsed(self, concepts, triples):
        """Apply a parsed fragment atomically; returns what was actually new."""
        for c in concepts:  # validate everything before touching state
            existing = self._concepts.get(c.uri)
            if existing is not None and existing != c:
                raise DuplicateId(f"concept '{c.uri}' already defined differently")
        known = set(self._concepts) | {c.uri for c in concepts}
        for t in triples:
            for endpoint in (t.subject, t.object):
                if endpoint not in known:
                    raise DanglingTripleEndpoint(
                        f"triple endpoint '{endpoint}' is not a known concept")
        new_concepts = [self.add_concept(c.uri, c.label, c.concept_type, c.source)
                        for c in concepts if c.uri not in self._concepts]
        new_triples = [added for t in triples
                       if (added := self.add_triple(t.subject, t.predicate, t.object))]
        return new_concepts, new_triples

    # -- links -------------------------------------------------------------------

    def add_link(self, concept_uri: str, target: str, kind: str) -> ConceptLink:
        self.concept(concept_uri)
        if kind not in LINK_KINDS:
            raise BadRequest(f"link kind '{kind}' not one of {list(LINK_KINDS)}")
        if kind == "MetadataAnnotation":
            if self.cvt_exists is not None and not self.cvt_exists(target):
                raise UnknownCVT(f"CVT '{target}' does not exist")
        else:
            if self.cv_exists is not None and not self.cv_exists(target):
                raise UnknownTarget(f"CV '{target}' does not exist")
        link = ConceptLink(concept_uri, target, kind)
        self._links.add(link)  # duplicates collapse by value
        return link

    def cvts_for_concept(self, uri: str, include_expansion: bool = False,
                         predicate: Optional[str] = None,
                         direction: str = "inverse") -> list[str]:
        """CVT ids reachable via MetadataAnnotation links, optionally from
        the whole expansion of the concept."""
        uris = {self.concept(uri).uri}
        if include_expansion:
            uris, _ = self.expand(uri, predicate or "is_a", direction)
        return sorted({l.target for l in self._links
                       if l.kind == "MetadataAnnotation" and l.concept in uris})

    def concepts_for_cvt(self, cvt_id: str) -> list[str]:
        if self.cvt_exists is not None and not self.cvt_exists(cvt_id):
            raise UnknownCVT(f"CVT '{cvt_id}' does not exist")
        return sorted({l.concept for l in self._links
                       if l.kind == "MetadataAnnotation" and l.target == cvt_id})

    def cvs_linked_to(self, uris) -> set:
        """CV ids carrying a DataInstance link to any of the given concepts."""
        wanted = set(uris)
        return {l.target for l in self._links
                if l.kind == "DataInstance" and l.concept in wanted}

    # -- expansion ------------------------------------------------------------------

    def expand(self, start_uri: str, predicate: str, direction: str = "forward"):
        """Reflexive-transitive closure along one predicate.

        Returns (frozenset of uris, unknown_predicate flag). An unknown
        predicate is a warning, not an error: the closure is just {start}.
        """
        self.concept(start_uri)
        if direction not in ("forward", "inverse"):
            raise BadRequest(f"direction '{direction}' not one of forward, inverse")
        if predicate not in self._predicates:
            return frozenset({start_uri}), True
        index = self._out if direction == "forward" else self._in
        seen = {start_uri}
        frontier = [start_uri]
        while frontier:
            nxt = []
            for uri in frontier:
                for neighbor in index.get((uri, predicate), ()):
                    if neighbor not in seen:
                        seen.add(neighbor)
                        nxt.append(neighbor)
            frontier = nxt
        return frozenset(seen), False

    # -- serialization ------------------------------------------------------------------

    @staticmethod
    def concept_body(c: MedicalConcept) -> dict:
        return {"label": c.label, "source": c.source, "type": c.concept_type,
                "uri": c.uri}

    @staticmethod
    def triple_body(t: ConceptTriple) -> dict:
        return {"object": t.object, "predicate": t.predicate, "subject": t.subject}

    @staticmethod
    def link_body(l: ConceptLink) -> dict:
        return {"concept": l.concept, "kind": l.kind, "target": l.target}
