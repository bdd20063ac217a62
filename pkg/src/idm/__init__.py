"""Metadata-driven clinical data engine.

Type definitions (CVTs, METs, classifications) are stored as data, values
validate against them at admission, and a concept graph links both to
external terminologies so queries can bridge related concepts.
"""

from .engine import Engine

__all__ = ["Engine"]
__version__ = "0.1.0"
