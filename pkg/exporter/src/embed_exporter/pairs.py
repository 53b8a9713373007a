"""Reader for the comment-reply pairs file the training pipeline ingests.

Only the six required columns are consumed here; ingestion extras such
as timestamps pass through unread.  Label strings map onto the same
integer convention the downstream feature-rows CSV uses.
"""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import BadPairsFile

REQUIRED_COLUMNS = ("pair_id", "parent_id", "child_id", "parent_text", "child_text", "label")

LABEL_IDS = {"disagree": 0, "neutral": 1, "agree": 2}


@dataclass(frozen=True)
class Pair:
    pair_id: str
    parent_id: str
    child_id: str
    parent_text: str
    child_text: str
    label: int


def _to_pair(where: str, row: dict) -> Pair:
    missing = [c for c in REQUIRED_COLUMNS if c not in row]
    if missing:
        raise BadPairsFile(f"{where}: missing column(s) {', '.join(missing)}")
    raw = str(row["label"]).strip().lower()
    if raw not in LABEL_IDS:
        raise BadPairsFile(f"{where}: unknown label {row['label']!r}")
    return Pair(
        pair_id=str(row["pair_id"]),
        parent_id=str(row["parent_id"]),
        child_id=str(row["child_id"]),
        parent_text=str(row["parent_text"]),
        child_text=str(row["child_text"]),
        label=LABEL_IDS[raw],
    )


def read_pairs(path) -> list[Pair]:
    """Load pairs from .csv or .jsonl, keyed by file extension."""
    path = Path(path)
    if not path.is_file():
        raise BadPairsFile(f"pairs file not found: {path}")
    pairs: list[Pair] = []
    if path.suffix == ".jsonl":
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise BadPairsFile(f"{path}:line {lineno}: invalid JSON: {exc}") from exc
                pairs.append(_to_pair(f"{path}:line {lineno}", row))
    else:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise BadPairsFile(f"{path}: empty file")
            for row in reader:
                pairs.append(_to_pair(f"{path}:row {reader.line_num}", row))
    if not pairs:
        raise BadPairsFile(f"{path}: no pairs")
    return pairs


def unique_comments(pairs) -> list[tuple[str, str]]:
    """(comment_id, text) for every distinct comment, first occurrence wins."""
    seen: dict[str, str] = {}
    for p in pairs:
        for cid, text in ((p.parent_id, p.parent_text), (p.child_id, p.child_text)):
            if cid not in seen:
                seen[cid] = text
    return list(seen.items())
