"""CSV files with a schema-version header and ``# key=value`` metadata lines."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

from .exceptions import ParameterError

SCHEMA_PREFIX = "# schema: "


def format_float(x) -> str:
    """Shortest round-trip repr; keeps output byte-stable across runs."""
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, str)):
        return str(x)
    return repr(float(x))


def dumps(schema: str, columns, rows, meta: dict | None = None) -> str:
    buf = io.StringIO()
    buf.write(f"{SCHEMA_PREFIX}{schema}\n")
    for key, value in (meta or {}).items():
        buf.write(f"# {key}={json.dumps(value, sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_float(v) for v in row])
    return buf.getvalue()


def write(path, schema: str, columns, rows, meta: dict | None = None) -> Path:
    """Write atomically (temp file in the same directory, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = dumps(schema, columns, rows, meta)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read(path, schema: str | None = None) -> tuple[dict, list[dict]]:
    """Return ``(meta, rows)``; rows are dicts of raw strings."""
    with open(path, newline="") as fh:
        return loads(fh.read(), schema, source=str(path))


def loads(text: str, schema: str | None = None, source: str = "<text>") -> tuple[dict, list[dict]]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(SCHEMA_PREFIX):
        raise ParameterError(f"{source}: missing schema header")
    found = lines[0][len(SCHEMA_PREFIX):].strip()
    if schema is not None and found.split("/")[0] != schema.split("/")[0]:
        raise ParameterError(f"{source}: expected schema {schema}, found {found}")
    meta = {"schema": found}
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        key, _, value = lines[i][1:].strip().partition("=")
        meta[key.strip()] = json.loads(value) if value else None
        i += 1
    rows = list(csv.DictReader(lines[i:]))
    return meta, rows
