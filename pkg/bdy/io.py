"""Tidy table and JSON writers shared by the CLI commands."""

from __future__ import annotations

import csv
import json
from collections.abc import Mapping, Sequence
from datetime import UTC, datetime
from pathlib import Path
from typing import Any

from bdy.config import OutputFormat

__all__ = ["write_json", "write_metadata", "write_table"]


def write_table(
    stem: Path,
    rows: Sequence[Mapping[str, object]],
    columns: Sequence[str],
    fmt: OutputFormat = OutputFormat.CSV,
) -> Path:
    """Write ``rows`` to ``stem.csv`` (header + rows) or ``stem.json`` (records)."""
    stem.parent.mkdir(parents=True, exist_ok=True)
    if fmt is OutputFormat.JSON:
        path = stem.with_suffix(".json")
        records = [{col: row[col] for col in columns} for row in rows]
        return write_json(path, records)

    path = stem.with_suffix(".csv")
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
    return path


def write_json(path: Path, payload: Any) -> Path:  # noqa: ANN401
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, default=str)
        f.write("\n")
    return path


def write_metadata(path: Path, payload: Mapping[str, object]) -> Path:
    """JSON sidecar; ``generated_at`` is the only non-deterministic field."""
    stamped = {**payload, "generated_at": datetime.now(UTC).isoformat()}
    return write_json(path, stamped)
