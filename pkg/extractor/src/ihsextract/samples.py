"""Reader for the canonical sample JSONL the engine emits."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path


class SamplesError(Exception):
    pass


@dataclass(frozen=True)
class TextRecord:
    id: str
    text: str


def read_text_records(path: str | Path) -> list[TextRecord]:
    """Load (id, text) pairs; label/dataset/split fields are ignored here."""
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SamplesError(f"{path}: line {line_no}: invalid JSON") from exc
            if "id" not in raw or "text" not in raw:
                raise SamplesError(f"{path}: line {line_no}: record needs id and text")
            if raw["id"] in seen:
                raise SamplesError(f"{path}: line {line_no}: duplicate id {raw['id']!r}")
            if not str(raw["text"]).strip():
                raise SamplesError(f"{path}: line {line_no}: empty text")
            seen.add(raw["id"])
            records.append(TextRecord(id=raw["id"], text=raw["text"]))
    if not records:
        raise SamplesError(f"{path}: no records")
    return records


def write_context_jsonl(path: str | Path, contexts: dict[str, str]) -> None:
    """Generated contexts keyed by the originating sample id."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sid, text in contexts.items():
            fh.write(json.dumps({"id": sid, "text": text}, ensure_ascii=False) + "\n")
