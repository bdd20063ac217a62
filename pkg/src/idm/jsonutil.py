"""Canonical JSON forms used across files, CLI output and the HTTP API.

Two fixed encodings:
  * canonical()      — key-sorted, 2-space indent, trailing newline; the byte
                       format of schema files and all API/CLI JSON payloads.
  * canonical_line() — key-sorted, compact; one log record per line.

Both keep non-ASCII text (unit names like "mL/m²") as UTF-8.
"""

from __future__ import annotations

import json
from typing import Any


def canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def canonical_line(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
