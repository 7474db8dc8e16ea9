"""Sliding-window super point detection and cardinality estimation.

The two sketches are :class:`Rsra` (finds candidate hosts) and :class:`Slea`
(estimates their opposite-host cardinality). :class:`WindowEngine` drives
both over a time-ordered stream.
"""

__version__ = "0.1.0"

from .config import SketchParams
from .errors import (
    ConfigError,
    IncompatibleSketchError,
    ParseError,
    ResourceError,
    SlidecardError,
)
from .hashing import HashSeeds, ReversibleHashGroup
from .sketch_arrays import Rsra, Slea, merge_structures, reconstruct_candidates
from .window_engine import DetectionReport, WindowConfig, WindowEngine, detect, process_stream

__all__ = [
    "ConfigError", "DetectionReport", "HashSeeds", "IncompatibleSketchError", "ParseError",
    "ResourceError", "ReversibleHashGroup", "Rsra", "SketchParams", "Slea", "SlidecardError",
    "WindowConfig", "WindowEngine", "detect", "merge_structures", "process_stream",
    "reconstruct_candidates",
]
