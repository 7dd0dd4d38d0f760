"""File formats.  Every file carries the resolved run config and seed.

CSV files start with a single ``#`` line holding that metadata as JSON, so
``pandas.read_csv(path, comment="#")`` reads the table directly.  All
writes go to a temporary file in the target directory and are renamed into
place, so a failed run never leaves a partial file behind.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .envelope import EnvelopeField


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
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


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n"


def write_json(path, payload: dict, meta: dict) -> Path:
    return atomic_write_text(path, dumps({"meta": meta, **payload}))


def table_csv(header, rows, meta: dict) -> str:
    buf = io.StringIO()
    buf.write("# " + json.dumps(meta, sort_keys=True, default=_default) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def write_csv(path, header, rows, meta: dict) -> Path:
    return atomic_write_text(path, table_csv(header, rows, meta))


def envelope_rows(field: EnvelopeField):
    """Header and rows ``node_coords..., fbar, value, contact``."""
    nodes = field.grid.nodes
    header = [f"w{i}" for i in field.face.indices] + ["fbar", "value", "contact"]
    rows = (
        [*nodes[i].tolist(), field.fbar[i], field.values[i], int(field.contact[i])]
        for i in range(len(nodes))
    )
    return header, rows


def read_csv(path):
    """Metadata and table of a CSV written by this module."""
    with open(path, newline="") as fh:
        first = fh.readline()
        meta = json.loads(first[1:]) if first.startswith("#") else {}
        if not first.startswith("#"):
            fh.seek(0)
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader]
    return meta, header, rows
