"""CSV manifest parsing: rows of (sample_id, text, image path, label)."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

log = logging.getLogger("f2ind_extract")

REQUIRED_COLUMNS = ("id", "text", "image_path", "label")


class ManifestError(ValueError):
    """Malformed manifest file."""


@dataclass
class ManifestRow:
    sample_id: int
    text: str
    image_path: str  # empty string means no image
    label: int


def read_manifest(path) -> list[ManifestRow]:
    """Parse and validate a UTF-8 CSV manifest with a required header.

    Rows with empty text are skipped with a warning; ids must be unique and
    labels binary.
    """
    rows: list[ManifestRow] = []
    seen: set[int] = set()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ManifestError(f"{path}: empty manifest")
        missing = [c for c in REQUIRED_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise ManifestError(f"{path}: header missing columns {missing}")
        for line_no, rec in enumerate(reader, start=2):
            try:
                sample_id = int(rec["id"])
                label = int(rec["label"])
            except (TypeError, ValueError) as exc:
                raise ManifestError(f"{path}:{line_no}: bad id or label: {exc}") from exc
            if label not in (0, 1):
                raise ManifestError(f"{path}:{line_no}: label must be 0 or 1, got {label}")
            if sample_id in seen:
                raise ManifestError(f"{path}:{line_no}: duplicate id {sample_id}")
            seen.add(sample_id)
            text = (rec["text"] or "").strip()
            if not text:
                log.warning("%s:%d: empty text, sample %d skipped", path, line_no, sample_id)
                continue
            rows.append(
                ManifestRow(
                    sample_id=sample_id,
                    text=text,
                    image_path=(rec["image_path"] or "").strip(),
                    label=label,
                )
            )
    return rows
