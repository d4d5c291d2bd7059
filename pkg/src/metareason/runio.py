"""Trace and metrics file writers (schema version 1).

Trace files are JSON lines, one record per event, first record a header
with the full run config. Metrics files are plain CSV with one row per
round. Output is canonical (sorted keys, repr floats) so identical runs
produce identical bytes.
"""
from __future__ import annotations

from pathlib import Path

from .orchestrator import METRICS_COLUMNS, canonical_json


class TraceWriter:
    """Append-only JSONL sink; usable as the orchestrator's trace_sink."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", encoding="utf-8")

    def __call__(self, record: dict) -> None:
        self._fh.write(canonical_json(record) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def metrics_csv_text(rows: list[dict]) -> str:
    lines = [",".join(METRICS_COLUMNS)]
    for row in rows:
        lines.append(",".join(str(row.get(col, "")) for col in METRICS_COLUMNS))
    return "\n".join(lines) + "\n"


def write_metrics(path, rows: list[dict]) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(metrics_csv_text(rows), encoding="utf-8")
