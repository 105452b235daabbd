"""Deterministic result files: CSV tables, gnuplot .dat blocks, JSON.

Every float is rendered with '%.17g' (round-trip exact for IEEE doubles),
'.' as the decimal separator regardless of locale, and every line is
newline-terminated, so identical data produces identical bytes.
"""

from __future__ import annotations

import json

__all__ = ["format_value", "sanitize", "write_csv", "write_dat", "write_json"]


def format_value(v):
    """Render a single cell."""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return "%.17g" % v
    if v is None:
        return "nan"
    if hasattr(v, "item"):          # numpy scalar
        return format_value(v.item())
    return str(v)


def write_csv(path, header, rows):
    """Comma-separated table with a header line."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def write_dat(path, header, rows):
    """Whitespace-separated table with a '#' header, for gnuplot."""
    lines = ["# " + " ".join(header)]
    for row in rows:
        lines.append(" ".join(format_value(v) for v in row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def sanitize(obj):
    """Make an object JSON-serializable without losing float precision."""
    if isinstance(obj, dict):
        return {str(k): sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if isinstance(obj, bool) or obj is None:
        return obj
    if isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, float):
        # json emits repr (shortest round-trip); non-finite values become
        # strings so strict parsers can read the file back
        if obj != obj:
            return "nan"
        if obj == float("inf"):
            return "inf"
        if obj == float("-inf"):
            return "-inf"
        return obj
    if hasattr(obj, "tolist"):
        return sanitize(obj.tolist())
    if hasattr(obj, "item"):
        return sanitize(obj.item())
    return str(obj)


def write_json(path, obj):
    """Sorted-key, indented JSON with a trailing newline."""
    with open(path, "w", newline="\n") as fh:
        json.dump(sanitize(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
