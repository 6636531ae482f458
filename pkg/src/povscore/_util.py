"""Shared small helpers: seed derivation and canonical JSON output."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np


def derive_seed(*parts: int) -> int:
    """Derive a child seed from an integer path, deterministically.

    Uses numpy's SeedSequence so that (seed, 3, 1) and (seed, 31) land in
    unrelated streams. Returns a plain int usable with default_rng.
    """
    ss = np.random.SeedSequence([int(p) for p in parts])
    return int(ss.generate_state(2, np.uint64)[0])


def jsonable(obj: Any) -> Any:
    """Recursively convert numpy scalars/arrays, tuples, sets and Paths into
    plain JSON-serializable Python objects."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(jsonable(v) for v in obj)
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)) and not isinstance(obj, bool):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def canonical_json(obj: Any) -> str:
    """Serialize with sorted keys and a fixed layout so identical inputs give
    byte-identical files."""
    return json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path: Path | str, obj: Any) -> None:
    Path(path).write_text(canonical_json(obj), encoding="utf-8")
