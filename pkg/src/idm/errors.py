"""Domain error types with stable machine-readable codes.

Every error the engine raises on purpose derives from EngineError and
carries a ``code`` string. The CLI prints these as ``ERROR <code>: <detail>``
and the HTTP layer maps ``not_found`` errors to 404, the rest to 400.
"""

from __future__ import annotations


class EngineError(Exception):
    code = "EngineError"
    not_found = False

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class BadRequest(EngineError):
    code = "BadRequest"


# --- quantities ---

class DuplicateUnit(EngineError):
    code = "DuplicateUnit"


class UnknownDimension(EngineError):
    code = "UnknownDimension"
    not_found = True


class NonPositiveFactor(EngineError):
    code = "NonPositiveFactor"


class UnknownUnit(EngineError):
    code = "UnknownUnit"
    not_found = True


class DimensionMismatch(EngineError):
    code = "DimensionMismatch"


# --- schema ---

class DuplicateId(EngineError):
    code = "DuplicateId"


class EmptyOrDuplicateItems(EngineError):
    code = "EmptyOrDuplicateItems"


class MissingConstraint(EngineError):
    code = "MissingConstraint"


class UnknownReference(EngineError):
    code = "UnknownReference"
    not_found = True


class UnknownCVT(EngineError):
    code = "UnknownCVT"
    not_found = True


# --- store ---

class UnknownPatient(EngineError):
    code = "UnknownPatient"
    not_found = True


class BadTimestamp(EngineError):
    code = "BadTimestamp"


class UnknownVisit(EngineError):
    code = "UnknownVisit"
    not_found = True


class UnknownMET(EngineError):
    code = "UnknownMET"
    not_found = True


class UnknownEvent(EngineError):
    code = "UnknownEvent"
    not_found = True


class UnknownAnchor(EngineError):
    code = "UnknownAnchor"
    not_found = True


class CyclicRelativeTime(EngineError):
    code = "CyclicRelativeTime"


class CVTNotInMET(EngineError):
    code = "CVTNotInMET"


class ValidationFailed(EngineError):
    code = "ValidationFailed"

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class UnknownTarget(EngineError):
    code = "UnknownTarget"
    not_found = True


class CrossPatientLink(EngineError):
    code = "CrossPatientLink"


# --- semantics ---

class ParseError(EngineError):
    code = "ParseError"

    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


class DanglingTripleEndpoint(EngineError):
    code = "DanglingTripleEndpoint"


class UnknownConcept(EngineError):
    code = "UnknownConcept"
    not_found = True


# --- ingest ---

class DuplicateFieldName(EngineError):
    code = "DuplicateFieldName"


class UnknownProposal(EngineError):
    code = "UnknownProposal"
    not_found = True


class UnconfirmedMapping(EngineError):
    code = "UnconfirmedMapping"


# --- query ---

class QuerySyntaxError(EngineError):
    """Raised by the query parser; code kept distinct from Python's SyntaxError."""

    code = "SyntaxError"

    def __init__(self, position: int, expected: set[str], found: str):
        self.position = position
        self.expected = sorted(expected)
        self.found = found
        detail = "at offset %d: expected %s, found %s" % (
            position, " | ".join(self.expected), found)
        super().__init__(detail)
