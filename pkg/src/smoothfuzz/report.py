"""Read campaign stats CSVs and merge them into one long table."""

from __future__ import annotations

import csv
import io
from pathlib import Path

from .orchestrator import STATS_COLUMNS, STATS_VERSION

TABLE_COLUMNS = ("engine", "target") + STATS_COLUMNS
_MAGIC = "# smoothfuzz-stats"


class ReportError(ValueError):
    pass


def parse_stats(text: str, source: str = "<stats>") -> tuple[dict, list[dict]]:
    """Return ``(header fields, rows)`` from one stats CSV."""
    lines = text.splitlines()
    if not lines:
        raise ReportError(f"{source}: empty stats file")
    head = lines[0].split()
    if " ".join(head[:2]) != _MAGIC or len(head) < 3:
        raise ReportError(f"{source}:1: missing '{_MAGIC} v{STATS_VERSION}' header")
    if head[2] != f"v{STATS_VERSION}":
        raise ReportError(f"{source}:1: unsupported stats version {head[2]!r}")
    meta = {}
    for item in head[3:]:
        key, sep, value = item.partition("=")
        if not sep:
            raise ReportError(f"{source}:1: bad header field {item!r}")
        meta[key] = value
    if len(lines) < 2 or tuple(lines[1].split(",")) != STATS_COLUMNS:
        raise ReportError(f"{source}:2: expected columns {','.join(STATS_COLUMNS)}")
    rows = []
    for lineno, fields in enumerate(csv.reader(lines[2:]), 3):
        if len(fields) != len(STATS_COLUMNS):
            raise ReportError(f"{source}:{lineno}: expected {len(STATS_COLUMNS)} fields, got {len(fields)}")
        row = {}
        try:
            for col, value in zip(STATS_COLUMNS, fields):
                if col == "model_accuracy":
                    row[col] = float(value) if value else None
                else:
                    row[col] = int(value)
        except ValueError:
            raise ReportError(f"{source}:{lineno}: non-numeric value in {fields}") from None
        rows.append(row)
    return meta, rows


def merge_reports(paths) -> list[dict]:
    """Long-format rows (one per stats row) tagged with engine and target."""
    table = []
    for path in paths:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ReportError(f"{path}: {exc}") from exc
        meta, rows = parse_stats(text, str(path))
        engine = meta.get("engine") or path.stem
        target = meta.get("target", "")
        table.extend({"engine": engine, "target": target, **r} for r in rows)
    return table


def format_table(table) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(TABLE_COLUMNS)
    for row in table:
        acc = row["model_accuracy"]
        writer.writerow([row["engine"], row["target"]] +
                        [row[c] for c in STATS_COLUMNS[:-1]] + ["" if acc is None else f"{acc:.6f}"])
    return out.getvalue()
