"""Deterministic CSV/JSON writers with a metadata header."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .config import format_float


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(float(v))
    return str(v)


def write_csv(path, meta: dict, columns, rows) -> Path:
    """Header lines ``# key: value``, then a column line, then the rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {k}: {v}" for k, v in meta.items()]
    lines.append(",".join(columns))
    lines.extend(",".join(_cell(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path):
    """``(meta, columns, rows as float arrays)`` of a file written by :func:`write_csv`."""
    meta, body = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# "):
            k, _, v = line[2:].partition(": ")
            meta[k] = v
        else:
            body.append(line)
    columns = body[0].split(",") if body else []
    rows = np.array([[float(x) for x in r.split(",")] for r in body[1:]]).reshape(
        -1, len(columns))
    return meta, columns, rows


def _dump(v, indent=0) -> str:
    """JSON text with floats at 17 significant digits and sorted keys."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(v, dict):
        if not v:
            return "{}"
        items = sorted((str(k), x) for k, x in v.items())
        body = ",\n".join(f"{inner}{json.dumps(k)}: {_dump(x, indent + 1)}" for k, x in items)
        return "{\n" + body + "\n" + pad + "}"
    if isinstance(v, (list, tuple, np.ndarray)):
        if len(v) == 0:
            return "[]"
        body = ",\n".join(inner + _dump(x, indent + 1) for x in v)
        return "[\n" + body + "\n" + pad + "]"
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        # non-finite values are not valid JSON numbers
        return format_float(v) if math.isfinite(v) else json.dumps(format_float(v))
    return json.dumps(str(v))


def write_json(path, meta: dict, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_dump({"meta": meta, **payload}) + "\n")
    return path


def format_table(columns, rows) -> str:
    """Plain aligned text table for terminal output."""
    cells = [[str(c) for c in columns]] + [[_short(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(columns))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells)


def _short(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)
