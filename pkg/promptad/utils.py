"""
promptad.utils
--------------
Small helpers for deterministic serialization, hashing, and seeded randomness.
Every random draw in the pipeline goes through `seeded_rng` so that runs are
reproducible bit-for-bit given their seeds.
"""

from __future__ import annotations
import hashlib, json, re
from typing import Any, Dict

import numpy as np


def canonical_json(obj: Dict[str, Any]) -> bytes:
    # Deterministic, minimal JSON for sidecars and fingerprints
    return json.dumps(obj, separators=(",", ":"), sort_keys=True, ensure_ascii=False).encode("utf-8")


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def seeded_rng(*entropy: int) -> np.random.Generator:
    """Generator keyed by a tuple of non-negative ints, e.g. (seed, epoch)."""
    return np.random.default_rng([int(e) for e in entropy])


def safe_name(system_id: str) -> str:
    """Filesystem-safe rendering of a system id ("bert:prompt:back" -> "bert__prompt__back")."""
    return re.sub(r"[^A-Za-z0-9+._-]", "_", system_id.replace(":", "__"))


def format_float(x: float) -> str:
    # repr round-trips exactly through float()
    return repr(float(x))
