"""Reproducible table and summary writers.

Numbers are written with 17 significant digits so that files round-trip
exactly and identical runs produce identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence


def _fmt(x):
    if isinstance(x, str):
        return x
    return f"{x:.17g}"


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "item") and not isinstance(x, str):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def write_table(path: Path, columns: Sequence[str], rows: Iterable[Sequence], header: Sequence[str],
                fmt: str = "csv") -> Path:
    """Write ``rows`` as CSV (``#`` comment header) or JSON (``meta`` entry); returns the path."""
    path = Path(path).with_suffix("." + fmt)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_fmt(x) for x in row])
    elif fmt == "json":
        doc = {"meta": list(header), "columns": list(columns), "rows": _jsonable([list(r) for r in rows])}
        path.write_text(json.dumps(doc, indent=1) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def write_summary(path: Path, header: Sequence[str], data: dict) -> Path:
    """JSON summary with the provenance header under ``meta``."""
    path = Path(path).with_suffix(".json")
    doc = {"meta": list(header), **_jsonable(data)}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path
