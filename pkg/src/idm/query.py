"""Query DSL: parse, evaluate and explain.

Grammar (keywords case-insensitive, identifiers case-sensitive):

    query  := "FIND" target "WHERE" expr
    target := "patients" | "visits" | "events" | "cvs"
    expr   := term ("OR" term)*
    term   := factor ("AND" factor)*
    factor := "NOT" factor | "(" expr ")" | atom
    atom   := "cv" "(" ID ")" op NUMBER QUOTED        -- measurement vs quantity
            | "cv" "(" ID ")" "IS" QUOTED             -- classification item
            | "concept" "(" ID? ")" "IN" setspec      -- concept membership
            | "event" "IS" ID                         -- event of a MET
            | "time" op QUOTED                        -- ISO instant
            | "purpose" "IS" QUOTED
    setspec := "expand" "(" QUOTED "," QUOTED "," ("forward"|"inverse") ")"
            | QUOTED
    op     := "<" | "<=" | "=" | "!=" | ">=" | ">"

The predicate tree is evaluated once per target unit, each atom
existentially over the unit's scope: a patient's scope is everything it
contains, a CV's scope is itself plus its owning event and visit. This
keeps Boolean laws exact at any target level while "has a severe RV
dilation" still means what a clinician expects.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Union

from .errors import BadRequest, DimensionMismatch, QuerySyntaxError, UnknownCVT
from .quantities import Quantity
from .schema import Category, ConceptInstance, Observation
from .semantics import ConceptStore
from .store import DataStore, Instant, display_value, parse_instant

TARGETS = ("patients", "visits", "events", "cvs")
OPS = ("<", "<=", "=", "!=", ">=", ">")


# --- AST ---------------------------------------------------------------------

@dataclass(frozen=True)
class MeasurementCmp:
    cvt: str
    op: str
    value: float
    unit: str


@dataclass(frozen=True)
class ClassificationIs:
    cvt: str
    item: str


@dataclass(frozen=True)
class ConceptIn:
    cvt: Optional[str]
    root: str
    predicate: Optional[str] = None
    direction: Optional[str] = None


@dataclass(frozen=True)
class EventIs:
    met: str


@dataclass(frozen=True)
class TimeCmp:
    op: str
    instant: str


@dataclass(frozen=True)
class PurposeIs:
    purpose: str


Atom = Union[MeasurementCmp, ClassificationIs, ConceptIn, EventIs, TimeCmp, PurposeIs]


@dataclass(frozen=True)
class Not:
    child: "Node"


@dataclass(frozen=True)
class And:
    children: tuple


@dataclass(frozen=True)
class Or:
    children: tuple


Node = Union[Atom, Not, And, Or]


@dataclass(frozen=True)
class Query:
    target: str
    where: Node


# --- tokenizer ------------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<number>-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_-]*)
  | (?P<string>"[^"]*")
  | (?P<op><=|>=|!=|<|>|=)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<comma>,)
""", re.VERBOSE)


@dataclass(frozen=True)
class _Token:
    kind: str
    value: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise QuerySyntaxError(pos, {"a token"}, repr(text[pos]))
        kind = m.lastgroup
        if kind != "ws":
            out.append(_Token(kind, m.group(), pos))
        pos = m.end()
    out.append(_Token("eof", "", len(text)))
    return out


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def take(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, expected) -> None:
        tok = self.peek()
        found = tok.value if tok.kind != "eof" else "end of query"
        raise QuerySyntaxError(tok.pos, set(expected), found)

    def keyword(self) -> Optional[str]:
        tok = self.peek()
        return tok.value.lower() if tok.kind == "ident" else None

    def expect_keyword(self, word: str) -> None:
        if self.keyword() != word:
            self.fail({word.upper()})
        self.take()

    def expect(self, kind: str, what: str) -> _Token:
        if self.peek().kind != kind:
            self.fail({what})
        return self.take()

    def string(self, what: str) -> str:
        return self.expect("string", what).value[1:-1]

    # -- grammar --------------------------------------------------------------

    def query(self) -> Query:
        self.expect_keyword("find")
        if self.keyword() not in TARGETS:
            self.fail(TARGETS)
        target = self.take().value.lower()
        self.expect_keyword("where")
        where = self.expr()
        if self.peek().kind != "eof":
            self.fail({"AND", "OR", "end of query"})
        return Query(target, where)

    def expr(self) -> Node:
        terms = [self.term()]
        while self.keyword() == "or":
            self.take()
            terms.append(self.term())
        return terms[0] if len(terms) == 1 else Or(tuple(terms))

    def term(self) -> Node:
        factors = [self.factor()]
        while self.keyword() == "and":
            self.take()
            factors.append(self.factor())
        return factors[0] if len(factors) == 1 else And(tuple(factors))

    def factor(self) -> Node:
        if self.keyword() == "not":
            self.take()
            return Not(self.factor())
        if self.peek().kind == "lparen":
            self.take()
            inner = self.expr()
            self.expect("rparen", ")")
            return inner
        return self.atom()

    def atom(self) -> Atom:
        head = self.keyword()
        if head == "cv":
            return self.cv_atom()
        if head == "concept":
            return self.concept_atom()
        if head == "event":
            self.take()
            self.expect_keyword("is")
            return EventIs(self.expect("ident", "MET id").value)
        if head == "time":
            self.take()
            op = self.expect("op", "comparison operator").value
            return TimeCmp(op, self.string("quoted instant"))
        if head == "purpose":
            self.take()
            self.expect_keyword("is")
            return PurposeIs(self.string("quoted purpose"))
        self.fail({"cv", "concept", "event", "time", "purpose", "NOT", "("})

    def cv_atom(self) -> Atom:
        self.take()
        self.expect("lparen", "(")
        cvt = self.expect("ident", "CVT id").value
        self.expect("rparen", ")")
        if self.peek().kind == "op":
            op = self.take().value
            number = float(self.expect("number", "number").value)
            return MeasurementCmp(cvt, op, number, self.string("quoted unit id"))
        if self.keyword() == "is":
            self.take()
            return ClassificationIs(cvt, self.string("quoted item"))
        self.fail({"comparison operator", "IS"})

    def concept_atom(self) -> Atom:
        self.take()
        self.expect("lparen", "(")
        cvt = None
        if self.peek().kind == "ident":
            cvt = self.take().value
        self.expect("rparen", ")")
        self.expect_keyword("in")
        if self.keyword() == "expand":
            self.take()
            self.expect("lparen", "(")
            root = self.string("quoted concept uri")
            self.expect("comma", ",")
            predicate = self.string("quoted predicate")
            self.expect("comma", ",")
            if self.keyword() not in ("forward", "inverse"):
                self.fail({"forward", "inverse"})
            direction = self.take().value.lower()
            self.expect("rparen", ")")
            return ConceptIn(cvt, root, predicate, direction)
        if self.peek().kind == "string":
            return ConceptIn(cvt, self.string("quoted concept uri"))
        self.fail({"expand", "quoted concept uri"})


def parse_query(text: str) -> Query:
    return _Parser(text).query()


# --- serialization ----------------------------------------------------------------

def atom_to_text(atom: Atom) -> str:
    if isinstance(atom, MeasurementCmp):
        return f'cv({atom.cvt}) {atom.op} {display_value(atom.value)} "{atom.unit}"'
    if isinstance(atom, ClassificationIs):
        return f'cv({atom.cvt}) IS "{atom.item}"'
    if isinstance(atom, ConceptIn):
        head = f"concept({atom.cvt or ''}) IN"
        if atom.predicate is None:
            return f'{head} "{atom.root}"'
        return f'{head} expand("{atom.root}", "{atom.predicate}", {atom.direction})'
    if isinstance(atom, EventIs):
        return f"event IS {atom.met}"
    if isinstance(atom, TimeCmp):
        return f'time {atom.op} "{atom.instant}"'
    if isinstance(atom, PurposeIs):
        return f'purpose IS "{atom.purpose}"'
    raise BadRequest(f"not an atom: {atom!r}")


def node_to_text(node: Node) -> str:
    if isinstance(node, Or):
        return " OR ".join(node_to_text(c) for c in node.children)
    if isinstance(node, And):
        parts = []
        for c in node.children:
            text = node_to_text(c)
            parts.append(f"({text})" if isinstance(c, Or) else text)
        return " AND ".join(parts)
    if isinstance(node, Not):
        text = node_to_text(node.child)
        if isinstance(node.child, (And, Or)):
            text = f"({text})"
        return f"NOT {text}"
    return atom_to_text(node)


def to_text(query: Query) -> str:
    return f"FIND {query.target} WHERE {node_to_text(query.where)}"


def collect_atoms(node: Node) -> list[Atom]:
    if isinstance(node, (And, Or)):
        return [a for c in node.children for a in collect_atoms(c)]
    if isinstance(node, Not):
        return collect_atoms(node.child)
    return [node]


# --- evaluation ----------------------------------------------------------------

def _op_matches(op: str, cmp: int) -> bool:
    return {"<": cmp < 0, "<=": cmp <= 0, "=": cmp == 0,
            "!=": cmp != 0, ">=": cmp >= 0, ">": cmp > 0}[op]


def _cmp3(a, b) -> int:
    return -1 if a < b else (1 if a > b else 0)


@dataclass
class _Scope:
    visits: list
    events: list
    cvs: list


class QueryEngine:
    """Evaluates parsed queries over one store snapshot."""

    def __init__(self, store: DataStore, concepts: ConceptStore):
        self.store = store
        self.schema = store.schema
        self.concepts = concepts

    # -- resolution (shared by execute and explain) ------------------------------

    def _resolve(self, query: Query) -> dict:
        resolved = {}
        for atom in collect_atoms(query.where):
            if atom in resolved:
                continue
            resolved[atom] = self._resolve_atom(atom)
        return resolved

    def _resolve_atom(self, atom: Atom) -> dict:
        if isinstance(atom, MeasurementCmp):
            cvt = self.schema.cvt(atom.cvt)
            unit = self.schema.units.unit(atom.unit)
            if cvt.category is not Category.MEASUREMENT:
                raise DimensionMismatch(
                    f"CVT '{cvt.id}' is {cvt.category.value}, not a Measurement")
            if cvt.dimension != unit.dimension:
                raise DimensionMismatch(
                    f"CVT '{cvt.id}' has dimension '{cvt.dimension}', "
                    f"unit '{unit.id}' has '{unit.dimension}'")
            return {"cvt": cvt, "literal": Quantity(atom.value, atom.unit)}
        if isinstance(atom, ClassificationIs):
            return {"cvt": self.schema.cvt(atom.cvt)}
        if isinstance(atom, ConceptIn):
            if atom.cvt is not None and not self.schema.has_cvt(atom.cvt):
                raise UnknownCVT(f"CVT '{atom.cvt}' is not defined")
            if atom.predicate is None:
                self.concepts.concept(atom.root)
                uris, unknown = frozenset({atom.root}), False
            else:
                uris, unknown = self.concepts.expand(
                    atom.root, atom.predicate, atom.direction)
            return {"uris": uris, "unknown_predicate": unknown,
                    "linked_cvs": self.concepts.cvs_linked_to(uris)}
        if isinstance(atom, EventIs):
            return {"met": self.schema.met(atom.met)}
        if isinstance(atom, TimeCmp):
            return {"instant": parse_instant(atom.instant)}
        return {}

    # -- atom truth over one scope ---------------------------------------------------

    def _matching_cvs(self, atom: Atom, info: dict, scope: _Scope) -> list:
        out = []
        if isinstance(atom, MeasurementCmp):
            literal = info["literal"]
            for cv in scope.cvs:
                if cv.cvt == atom.cvt and isinstance(cv.payload, Quantity) \
                        and _op_matches(atom.op,
                                        self.schema.units.compare(cv.payload, literal)):
                    out.append(cv)
        elif isinstance(atom, ClassificationIs):
            for cv in scope.cvs:
                if cv.cvt == atom.cvt and isinstance(cv.payload, Observation) \
                        and cv.payload.item == atom.item:
                    out.append(cv)
        elif isinstance(atom, ConceptIn):
            uris, linked = info["uris"], info["linked_cvs"]
            for cv in scope.cvs:
                if atom.cvt is not None and cv.cvt != atom.cvt:
                    continue
                by_payload = isinstance(cv.payload, ConceptInstance) \
                    and cv.payload.concept in uris
                if by_payload or cv.id in linked:
                    out.append(cv)
        return out

    def _atom_truth(self, atom: Atom, info: dict, scope: _Scope):
        if isinstance(atom, (MeasurementCmp, ClassificationIs, ConceptIn)):
            matched = self._matching_cvs(atom, info, scope)
            return bool(matched), matched
        if isinstance(atom, EventIs):
            return any(e.met == atom.met for e in scope.events), []
        if isinstance(atom, TimeCmp):
            literal = info["instant"]
            for visit in scope.visits:
                if _op_matches(atom.op, _cmp3(parse_instant(visit.timestamp), literal)):
                    return True, []
            for event in scope.events:
                if isinstance(event.time, Instant) and _op_matches(
                        atom.op, _cmp3(parse_instant(event.time.at), literal)):
                    return True, []
            return False, []
        if isinstance(atom, PurposeIs):
            return any(v.purpose == atom.purpose for v in scope.visits), []
        raise BadRequest(f"not an atom: {atom!r}")

    def _eval(self, node: Node, resolved: dict, scope: _Scope):
        if isinstance(node, And):
            matched = []
            for child in node.children:
                ok, cvs = self._eval(child, resolved, scope)
                if not ok:
                    return False, []
                matched.extend(cvs)
            return True, matched
        if isinstance(node, Or):
            truth, matched = False, []
            for child in node.children:
                ok, cvs = self._eval(child, resolved, scope)
                if ok:
                    truth = True
                    matched.extend(cvs)
            return truth, matched
        if isinstance(node, Not):
            ok, _ = self._eval(node.child, resolved, scope)
            return not ok, []
        return self._atom_truth(node, resolved[node], scope)

    # -- scopes ------------------------------------------------------------------

    def _patient_scope(self, pid: str) -> _Scope:
        visits = self.store.visits_of(pid)
        events = [e for v in visits for e in self.store.events_of(v.id)]
        cvs = [c for e in events for c in self.store.cvs_of(e.id)]
        return _Scope(visits, events, cvs)

    def _visit_scope(self, visit) -> _Scope:
        events = self.store.events_of(visit.id)
        cvs = [c for e in events for c in self.store.cvs_of(e.id)]
        return _Scope([visit], events, cvs)

    def _event_scope(self, event) -> _Scope:
        return _Scope([self.store.visit(event.visit)], [event],
                      self.store.cvs_of(event.id))

    def _cv_scope(self, cv) -> _Scope:
        event = self.store.event(cv.event)
        return _Scope([self.store.visit(event.visit)], [event], [cv])

    def _units(self, target: str):
        if target == "patients":
            return [(p.id, p, self._patient_scope(p.id)) for p in self.store.all_patients()]
        if target == "visits":
            return [(v.id, v, self._visit_scope(v)) for v in self.store.all_visits()]
        if target == "events":
            return [(e.id, e, self._event_scope(e)) for e in self.store.all_events()]
        if target == "cvs":
            return [(c.id, c, self._cv_scope(c)) for c in self.store.all_cvs()]
        raise BadRequest(f"unknown query target '{target}'")

    # -- execution -------------------------------------------------------------------

    def execute(self, query: Query) -> list[dict]:
        resolved = self._resolve(query)
        rows = []
        for unit_id, unit, scope in self._units(query.target):
            ok, matched = self._eval(query.where, resolved, scope)
            if ok:
                rows.append(self._row(query.target, unit, scope, matched))
        return sorted(rows, key=lambda r: r["id"])

    def _matched_entries(self, scope: _Scope, matched) -> list[dict]:
        wanted = {cv.id for cv in matched}
        out = []
        for cv in scope.cvs:  # scope order keeps rendering deterministic
            if cv.id not in wanted:
                continue
            wanted.discard(cv.id)
            event = self.store.event(cv.event)
            visit = self.store.visit(event.visit)
            out.append({"cv": cv.id, "cvt": cv.cvt,
                        "display": self.store.display_cv(cv),
                        "event": event.id,
                        "met_name": self.schema.met(event.met).name,
                        "timestamp": visit.timestamp, "visit": visit.id})
        return out

    def _row(self, target: str, unit, scope: _Scope, matched) -> dict:
        if target == "patients":
            return {"id": unit.id, "kind": "patient",
                    "matched": self._matched_entries(scope, matched)}
        if target == "visits":
            return {"id": unit.id, "kind": "visit", "patient": unit.patient,
                    "purpose": unit.purpose, "timestamp": unit.timestamp,
                    "matched": self._matched_entries(scope, matched)}
        if target == "events":
            visit = self.store.visit(unit.visit)
            return {"id": unit.id, "kind": "event", "met": unit.met,
                    "met_name": self.schema.met(unit.met).name,
                    "patient": visit.patient, "time": unit.time.to_json(),
                    "timestamp": visit.timestamp, "visit": visit.id,
                    "matched": self._matched_entries(scope, matched)}
        event = self.store.event(unit.event)
        visit = self.store.visit(event.visit)
        row = self.store.render_cv(unit)
        row.update({"display": self.store.display_cv(unit), "event": event.id,
                    "kind": "cv", "met_name": self.schema.met(event.met).name,
                    "patient": visit.patient, "timestamp": visit.timestamp,
                    "visit": visit.id})
        return row

    def run(self, text: str) -> dict:
        query = parse_query(text)
        rows = self.execute(query)
        return {"count": len(rows), "rows": rows, "target": query.target}

    # -- explain -------------------------------------------------------------------

    def explain(self, query: Query) -> dict:
        resolved = self._resolve(query)
        store_scope = _Scope(self.store.all_visits(), self.store.all_events(),
                             self.store.all_cvs())
        atoms = []
        for atom in collect_atoms(query.where):
            info = resolved[atom]
            entry = {"candidates": self._candidates(atom, info, store_scope),
                     "kind": type(atom).__name__, "text": atom_to_text(atom)}
            if isinstance(atom, (MeasurementCmp, ClassificationIs)):
                entry["cvt"] = atom.cvt
                entry["cvt_name"] = info["cvt"].name
            if isinstance(atom, MeasurementCmp):
                entry["base_value"] = self.schema.units.base_value(info["literal"])
            if isinstance(atom, ConceptIn):
                entry["concepts"] = sorted(info["uris"])
                entry["concept_count"] = len(info["uris"])
                entry["unknown_predicate"] = info["unknown_predicate"]
            if isinstance(atom, EventIs):
                entry["met_name"] = info["met"].name
            atoms.append(entry)
        return {"atoms": atoms, "query": to_text(query), "target": query.target}

    def _candidates(self, atom: Atom, info: dict, scope: _Scope) -> int:
        if isinstance(atom, (MeasurementCmp, ClassificationIs, ConceptIn)):
            return len(self._matching_cvs(atom, info, scope))
        if isinstance(atom, EventIs):
            return sum(1 for e in scope.events if e.met == atom.met)
        if isinstance(atom, TimeCmp):
            literal = info["instant"]
            visits = sum(1 for v in scope.visits if _op_matches(
                atom.op, _cmp3(parse_instant(v.timestamp), literal)))
            events = sum(1 for e in scope.events
                         if isinstance(e.time, Instant) and _op_matches(
                             atom.op, _cmp3(parse_instant(e.time.at), literal)))
            return visits + events
        return sum(1 for v in scope.visits if v.purpose == atom.purpose)


# --- CLI table rendering -----------------------------------------------------------

_TABLE_COLUMNS = {
    "patients": ("id", "matched"),
    "visits": ("id", "patient", "timestamp", "purpose", "matched"),
    "events": ("id", "patient", "visit", "met_name", "matched"),
    "cvs": ("id", "patient", "event", "cvt", "display"),
}


def render_table(target: str, rows: list[dict]) -> str:
    columns = _TABLE_COLUMNS[target]

    def cell(row, col):
        if col == "matched":
            return "; ".join(f"{m['cvt']}={m['display']}" for m in row["matched"]) or "-"
        return str(row.get(col, "-"))

    grid = [list(columns)] + [[cell(r, c) for c in columns] for r in rows]
    widths = [max(len(line[i]) for line in grid) for i in range(len(columns))]
    lines = ["  ".join(val.ljust(w) for val, w in zip(line, widths)).rstrip()
             for line in grid]
    lines.insert(1, "  ".join("-" * w for w in widths))
    lines.append(f"({len(rows)} row{'s' if len(rows) != 1 else ''})")
    return "\n".join(lines)
