"""Ingestion of labeled comment-reply pairs and the climate-entity list.

Input formats are deliberately boring: RFC-4180 CSV or JSON lines for
pairs, plain UTF-8 text (one entry per line, ``#`` comments) for the
entity list.  Ingestion is fail-loud: schema problems and bad rows raise
typed errors with row numbers instead of silently dropping data.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import IntEnum
from pathlib import Path

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("pair_id", "parent_id", "child_id", "parent_text", "child_text", "label")


class CorpusError(ValueError):
    """Base class for ingestion failures."""


class MissingColumn(CorpusError):
    pass


class BadLabel(CorpusError):
    pass


class DuplicatePairId(CorpusError):
    pass


class EmptyText(CorpusError):
    pass


class EmptyList(CorpusError):
    pass


class Label(IntEnum):
    DISAGREE = 0
    NEUTRAL = 1
    AGREE = 2

    @classmethod
    def from_string(cls, raw: str) -> "Label":
        key = (raw or "").strip().lower()
        try:
            return _LABEL_BY_NAME[key]
        except KeyError:
            raise BadLabel(f"unknown label {raw!r}") from None


_LABEL_BY_NAME = {"disagree": Label.DISAGREE, "neutral": Label.NEUTRAL, "agree": Label.AGREE}


@dataclass(frozen=True)
class CommentPair:
    """One labeled parent-comment / child-reply interaction.

    ``parent_author`` / ``child_author`` are optional ingestion extras;
    when the source file carries them, user counts become available in
    :func:`dataset_stats`.
    """

    pair_id: str
    parent_id: str
    child_id: str
    parent_text: str
    child_text: str
    label: Label
    timestamp: str | None = None
    parent_author: str | None = None
    child_author: str | None = None


@dataclass
class Dataset:
    pairs: list[CommentPair]
    provenance: str


@dataclass
class EntityList:
    """Ordered, case-fold-deduplicated entity names."""

    entities: list[str]
    source_path: str

    def __len__(self) -> int:
        return len(self.entities)


@dataclass
class StatsReport:
    n_pairs: int
    n_users: int | None
    label_fractions: dict[Label, float] = field(default_factory=dict)
    date_range: tuple[str, str] | None = None


def _clean(value) -> str:
    return value if isinstance(value, str) else ("" if value is None else str(value))


def _build_pair(row: dict, where: str) -> CommentPair:
    label = Label.from_string(_clean(row.get("label")))
    parent_text = _clean(row.get("parent_text"))
    child_text = _clean(row.get("child_text"))
    if not parent_text.strip():
        raise EmptyText(f"{where}: parent_text is empty")
    if not child_text.strip():
        raise EmptyText(f"{where}: child_text is empty")
    pair_id = _clean(row.get("pair_id")).strip()
    if not pair_id:
        raise CorpusError(f"{where}: pair_id is empty")

    def opt(key: str) -> str | None:
        v = row.get(key)
        if v is None:
            return None
        v = _clean(v).strip()
        return v or None

    return CommentPair(
        pair_id=pair_id,
        parent_id=_clean(row.get("parent_id")).strip(),
        child_id=_clean(row.get("child_id")).strip(),
        parent_text=parent_text,
        child_text=child_text,
        label=label,
        timestamp=opt("timestamp"),
        parent_author=opt("parent_author"),
        child_author=opt("child_author"),
    )


def _iter_csv_rows(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")
        for row in reader:
            yield f"{path}:row {reader.line_num}", row


def _iter_jsonl_rows(path: Path):
    with open(path, encoding="utf-8") as fh:
        saw_any = False
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:line {lineno}: invalid JSON ({exc})") from None
            if not isinstance(row, dict):
                raise CorpusError(f"{path}:line {lineno}: expected a JSON object")
            missing = [c for c in REQUIRED_COLUMNS if c not in row]
            if missing:
                raise MissingColumn(
                    f"{path}:line {lineno}: missing key(s) {', '.join(missing)}"
                )
            saw_any = True
            yield f"{path}:line {lineno}", row
        if not saw_any:
            return


def load_pairs(path, format: str = "csv") -> Dataset:
    """Read comment-reply pairs from CSV or JSON lines.

    Raises MissingColumn / BadLabel / EmptyText / DuplicatePairId with
    the offending row identified.  Comment-length bounds (10-100 words)
    describe the source dataset and are reported as a warning only.
    """
    path = Path(path)
    if format not in ("csv", "jsonl"):
        raise CorpusError(f"unknown pairs format {format!r}")
    rows = _iter_csv_rows(path) if format == "csv" else _iter_jsonl_rows(path)

    pairs: list[CommentPair] = []
    seen: set[str] = set()
    n_outside = 0
    for where, row in rows:
        pair = _build_pair(row, where)
        if pair.pair_id in seen:
            raise DuplicatePairId(f"{where}: duplicate pair_id {pair.pair_id!r}")
        seen.add(pair.pair_id)
        for text in (pair.parent_text, pair.child_text):
            if not 10 <= len(text.split()) <= 100:
                n_outside += 1
        pairs.append(pair)
    if n_outside:
        log.warning(
            "%d of %d comment texts fall outside the 10-100 word range", n_outside, 2 * len(pairs)
        )
    return Dataset(pairs=pairs, provenance=str(path))


_OPTIONAL_COLUMNS = ("timestamp", "parent_author", "child_author")


def save_pairs(dataset: Dataset, path, format: str = "csv") -> None:
    """Write pairs back out; optional columns appear only when some pair
    carries them.  Round-trips through :func:`load_pairs`."""
    if format not in ("csv", "jsonl"):
        raise CorpusError(f"unknown pairs format {format!r}")
    extras = [
        col for col in _OPTIONAL_COLUMNS if any(getattr(p, col) is not None for p in dataset.pairs)
    ]

    def as_row(pair: CommentPair) -> dict:
        row = {
            "pair_id": pair.pair_id,
            "parent_id": pair.parent_id,
            "child_id": pair.child_id,
            "parent_text": pair.parent_text,
            "child_text": pair.child_text,
            "label": pair.label.name.lower(),
        }
        for col in extras:
            row[col] = getattr(pair, col) or ""
        return row

    if format == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(REQUIRED_COLUMNS) + extras)
            w.writeheader()
            for pair in dataset.pairs:
                w.writerow(as_row(pair))
    else:
        with open(path, "w", encoding="utf-8") as fh:
            for pair in dataset.pairs:
                fh.write(json.dumps(as_row(pair), sort_keys=True) + "\n")


def load_entity_list(path) -> EntityList:
    """Read the entity list: one name per line, ``#`` lines are comments.

    Entries are trimmed and deduplicated case-insensitively, keeping the
    first occurrence.  A file with no usable lines raises EmptyList.
    """
    path = Path(path)
    entities: list[str] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            entry = line.strip()
            if not entry or entry.startswith("#"):
                continue
            key = entry.casefold()
            if key in seen:
                continue
            seen.add(key)
            entities.append(entry)
    if not entities:
        raise EmptyList(f"{path}: no entities found")
    log.info("loaded %d entities from %s", len(entities), path)
    return EntityList(entities=entities, source_path=str(path))


def filter_pairs_by_entities(dataset: Dataset, entity_list: EntityList) -> Dataset:
    """Keep pairs that mention at least one entity in parent or child text."""
    from . import featurize

    matcher = featurize.EntityMatcher(entity_list.entities)
    kept = [
        p
        for p in dataset.pairs
        if matcher.find_mentions(p.parent_text) or matcher.find_mentions(p.child_text)
    ]
    return Dataset(pairs=kept, provenance=dataset.provenance)


def _parse_timestamp(raw: str) -> datetime | None:
    try:
        dt = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    except ValueError:
        return None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt


def dataset_stats(dataset: Dataset) -> StatsReport:
    n = len(dataset.pairs)
    fractions: dict[Label, float] = {}
    if n > 0:
        counts = {lbl: 0 for lbl in Label}
        for p in dataset.pairs:
            counts[p.label] += 1
        fractions = {lbl: counts[lbl] / n for lbl in Label}

    users: set[str] = set()
    saw_author_field = False
    for p in dataset.pairs:
        for author in (p.parent_author, p.child_author):
            if author is not None:
                saw_author_field = True
                users.add(author)
    n_users = len(users) if saw_author_field else None

    stamped = [
        (dt, p.timestamp)
        for p in dataset.pairs
        if p.timestamp and (dt := _parse_timestamp(p.timestamp)) is not None
    ]
    date_range = None
    if stamped:
        date_range = (min(stamped)[1], max(stamped)[1])

    return StatsReport(n_pairs=n, n_users=n_users, label_fractions=fractions, date_range=date_range)
