"""Deterministic JSON reports.

Floats are written with 17 significant digits so every number round-trips
exactly; non-finite values become the strings ``"inf"``, ``"-inf"`` and
``"nan"``.  Keys keep insertion order, so identical inputs give identical
bytes.
"""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np

SCHEMA_VERSION = 1
CSV_COLUMNS_VERSION = 1


def _float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    s = format(x, ".17g")
    # keep floats recognisable as floats
    if not any(c in s for c in ".eEn"):
        s += ".0"
    return s


def to_plain(obj):
    """Convert numpy scalars/arrays, tuples and value objects to plain JSON types."""
    if hasattr(obj, "to_dict") and not isinstance(obj, dict):
        return to_plain(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def _emit(obj, indent: int, level: int, out: list) -> None:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        for i, (k, v) in enumerate(obj.items()):
            out.append(f"{pad}{json.dumps(k)}: ")
            _emit(v, indent, level + 1, out)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(end + "}")
    elif isinstance(obj, list):
        if not obj:
            out.append("[]")
            return
        if all(not isinstance(v, (dict, list)) for v in obj):
            out.append("[")
            for i, v in enumerate(obj):
                _emit(v, indent, level + 1, out)
                if i < len(obj) - 1:
                    out.append(", ")
            out.append("]")
            return
        out.append("[\n")
        for i, v in enumerate(obj):
            out.append(pad)
            _emit(v, indent, level + 1, out)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(end + "]")
    elif isinstance(obj, bool):
        out.append("true" if obj else "false")
    elif isinstance(obj, float):
        out.append(_float(obj))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif obj is None:
        out.append("null")
    else:
        out.append(json.dumps(obj, ensure_ascii=False))


def dumps(obj, indent: int = 2) -> str:
    out: list = []
    _emit(to_plain(obj), indent, 0, out)
    return "".join(out) + "\n"


def digest_bytes(data: bytes) -> str:
    return "sha256:" + hashlib.sha256(data).hexdigest()


def digest_file(path) -> str:
    with open(path, "rb") as fh:
        return digest_bytes(fh.read())


def build_report(command: str, input_digest, parameters: dict, results, *, timing=None,
                 version: str = "") -> dict:
    rep = {
        "tool": "ltv-certify",
        "version": version,
        "schema": SCHEMA_VERSION,
        "command": command,
        "input_digest": input_digest,
        "parameters": parameters,
        "results": results,
    }
    if timing is not None:
        rep["timing"] = timing
    return rep


def body(report: dict) -> dict:
    """The report without its timing field."""
    return {k: v for k, v in report.items() if k != "timing"}
