"""Entity mentions, context windows, sentiment scores, and embeddings.

The unit everything downstream consumes is the :class:`FeatureRow`: one
(pair, entity) combination carrying an entity-conditioned sentiment for
the parent and child texts plus references into an embedding table.

Offsets are Unicode scalar values (Python string indices), never bytes,
so the 30-character window rule survives non-ASCII text.
"""

from __future__ import annotations

import json
import math
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Dataset, EntityList, Label

EMBED_DIM = 384
WINDOW_RADIUS = 30
NEUTRAL_BAND = 0.05

_MAGIC = b"EMB1"
_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


class FeaturizeError(ValueError):
    pass


class ProviderFailure(FeaturizeError):
    """Sentiment provider raised; message carries the snippet context."""


class BadMagic(FeaturizeError):
    pass


class DimMismatch(FeaturizeError):
    pass


class MissingId(FeaturizeError):
    pass


class BadLexicon(FeaturizeError):
    pass


@dataclass(frozen=True)
class EntityMention:
    entity: str
    start: int
    end: int


@dataclass(frozen=True)
class ContextWindow:
    snippet: str
    window_start: int
    window_end: int


@dataclass(frozen=True)
class SentimentScore:
    value: float
    label: str  # positive | negative | neutral


def sentiment_from_value(value: float, band: float = NEUTRAL_BAND) -> SentimentScore:
    value = float(value)
    if not math.isfinite(value):
        raise FeaturizeError(f"non-finite sentiment value {value!r}")
    value = max(-1.0, min(1.0, value))
    if abs(value) < band:
        return SentimentScore(value, "neutral")
    return SentimentScore(value, "positive" if value > 0 else "negative")


NEUTRAL = SentimentScore(0.0, "neutral")


@dataclass(frozen=True)
class FeatureRow:
    pair_id: str
    entity: str
    sentiment_parent: SentimentScore
    sentiment_child: SentimentScore
    label: Label
    parent_embedding_ref: str
    child_embedding_ref: str


class EntityMatcher:
    """Case-insensitive, word-boundary-respecting entity matcher.

    Scans left to right; at each offset the longest matching entity wins
    (list order breaks exact length ties) and the scan resumes after the
    match, so mentions never overlap.  A match is rejected when it sits
    inside a longer alphanumeric token on either side.
    """

    def __init__(self, entities):
        order = sorted(range(len(entities)), key=lambda i: (-len(entities[i]), i))
        self._entries = [(entities[i], entities[i].casefold()) for i in order]
        self._by_first: dict[str, list[tuple[str, str]]] = {}
        for entry in self._entries:
            if not entry[1]:
                continue
            self._by_first.setdefault(entry[1][:1], []).append(entry)

    def find_mentions(self, text: str) -> list[EntityMention]:
        mentions: list[EntityMention] = []
        n = len(text)
        i = 0
        while i < n:
            first = text[i].casefold()[:1]
            hit = None
            for entity, folded in self._by_first.get(first, ()):
                end = i + len(entity)
                if end > n or text[i:end].casefold() != folded:
                    continue
                if i > 0 and text[i - 1].isalnum() and entity[0].isalnum():
                    continue
                if end < n and text[end].isalnum() and entity[-1].isalnum():
                    continue
                hit = EntityMention(entity=entity, start=i, end=end)
                break
            if hit is not None:
                mentions.append(hit)
                i = hit.end
            else:
                i += 1
        return mentions


def find_entity_mentions(text: str, entities: EntityList | list) -> list[EntityMention]:
    names = entities.entities if isinstance(entities, EntityList) else list(entities)
    return EntityMatcher(names).find_mentions(text)


def extract_context_window(text: str, mention: EntityMention, radius: int = WINDOW_RADIUS) -> ContextWindow:
    """Snippet of ``radius`` characters either side of the mention, clipped."""
    start = max(0, mention.start - radius)
    end = min(len(text), mention.end + radius)
    return ContextWindow(snippet=text[start:end], window_start=start, window_end=end)


class LexiconSentiment:
    """Hermetic sentiment provider: mean signed weight of lexicon hits.

    Tokens are ``\\w+`` runs of the case-folded snippet.  Snippets with
    no lexicon hit score (0.0, neutral).
    """

    def __init__(self, weights: dict[str, float], name: str = "lexicon"):
        for token, w in weights.items():
            if not -1.0 <= w <= 1.0:
                raise BadLexicon(f"weight {w!r} for token {token!r} outside [-1, 1]")
        self.weights = {t.casefold(): float(w) for t, w in weights.items()}
        self.name = name

    @classmethod
    def from_file(cls, path) -> "LexiconSentiment":
        path = Path(path)
        weights: dict[str, float] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip() or line.startswith("#"):
                    continue
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 2:
                    raise BadLexicon(f"{path}:{lineno}: expected 'token<TAB>weight'")
                try:
                    weight = float(parts[1])
                except ValueError:
                    raise BadLexicon(f"{path}:{lineno}: bad weight {parts[1]!r}") from None
                if not -1.0 <= weight <= 1.0:
                    raise BadLexicon(f"{path}:{lineno}: weight {weight} outside [-1, 1]")
                weights[parts[0]] = weight
        if not weights:
            raise BadLexicon(f"{path}: empty lexicon")
        return cls(weights, name=f"lexicon:{path.name}")

    def score(self, snippet: str) -> SentimentScore:
        hits = [self.weights[t] for t in _TOKEN_RE.findall(snippet.casefold()) if t in self.weights]
        if not hits:
            return NEUTRAL
        return sentiment_from_value(sum(hits) / len(hits))


def _score_mentions(text, mentions, provider, mode: str, radius: int) -> SentimentScore:
    if not mentions:
        return NEUTRAL
    if mode == "first":
        mentions = mentions[:1]
    elif mode != "mean":
        raise FeaturizeError(f"unknown mention scoring mode {mode!r}")
    values = []
    for m in mentions:
        window = extract_context_window(text, m, radius)
        try:
            values.append(provider.score(window.snippet).value)
        except FeaturizeError:
            raise
        except Exception as exc:
            raise ProviderFailure(
                f"provider {getattr(provider, 'name', '?')!r} failed on snippet "
                f"{window.snippet!r}: {exc}"
            ) from exc
    return sentiment_from_value(sum(values) / len(values))


def score_entity_sentiment(
    text: str,
    entity: str,
    provider,
    entities: EntityList | list,
    mode: str = "first",
    radius: int = WINDOW_RADIUS,
) -> SentimentScore:
    """Sentiment toward ``entity`` in ``text``; neutral when not mentioned.

    Mention detection runs over the full entity list so that a longer
    entity absorbing the span (e.g. "Green New Deal" over "New Deal")
    leaves the shorter one unmentioned.
    """
    mentions = [m for m in find_entity_mentions(text, entities) if m.entity == entity]
    return _score_mentions(text, mentions, provider, mode, radius)


def build_feature_rows(
    dataset: Dataset,
    entity_list: EntityList,
    provider,
    mode: str = "first",
    radius: int = WINDOW_RADIUS,
) -> list[FeatureRow]:
    """One row per (pair, entity) with the entity mentioned on either side.

    Row order is deterministic: dataset order, then entity-list order
    within a pair.
    """
    matcher = EntityMatcher(entity_list.entities)
    entity_rank = {name: i for i, name in enumerate(entity_list.entities)}
    rows: list[FeatureRow] = []
    for pair in dataset.pairs:
        parent_mentions: dict[str, list[EntityMention]] = {}
        child_mentions: dict[str, list[EntityMention]] = {}
        for m in matcher.find_mentions(pair.parent_text):
            parent_mentions.setdefault(m.entity, []).append(m)
        for m in matcher.find_mentions(pair.child_text):
            child_mentions.setdefault(m.entity, []).append(m)
        seen = set(parent_mentions) | set(child_mentions)
        for entity in sorted(seen, key=entity_rank.__getitem__):
            rows.append(
                FeatureRow(
                    pair_id=pair.pair_id,
                    entity=entity,
                    sentiment_parent=_score_mentions(
                        pair.parent_text, parent_mentions.get(entity, []), provider, mode, radius
                    ),
                    sentiment_child=_score_mentions(
                        pair.child_text, child_mentions.get(entity, []), provider, mode, radius
                    ),
                    label=pair.label,
                    parent_embedding_ref=pair.parent_id,
                    child_embedding_ref=pair.child_id,
                )
            )
    return rows


@dataclass
class EmbeddingTable:
    vectors: dict[str, np.ndarray]
    source: str  # imported | fallback
    dim: int = EMBED_DIM

    def get(self, comment_id: str) -> np.ndarray:
        try:
            return self.vectors[comment_id]
        except KeyError:
            raise MissingId(f"no embedding for comment id {comment_id!r}") from None


def fallback_embed(text: str) -> np.ndarray:
    """Deterministic signed hashing embedder: a hermetic encoder stand-in.

    Case-folded word tokens are hashed (blake2b, 8 bytes) to one of 384
    buckets with a +/-1 sign bit; counts accumulate and the vector is
    L2-normalized.  Empty or token-free text maps to the zero vector.
    """
    import hashlib

    vec = np.zeros(EMBED_DIM, dtype=np.float64)
    for token in _TOKEN_RE.findall(text.casefold()):
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        h = int.from_bytes(digest, "little")
        sign = 1.0 if (h >> 62) & 1 else -1.0
        vec[h % EMBED_DIM] += sign
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


def fallback_table(dataset: Dataset) -> EmbeddingTable:
    """Embed every unique comment in the dataset with the hashing encoder."""
    vectors: dict[str, np.ndarray] = {}
    for pair in dataset.pairs:
        for cid, text in ((pair.parent_id, pair.parent_text), (pair.child_id, pair.child_text)):
            if cid not in vectors:
                vectors[cid] = fallback_embed(text)
    return EmbeddingTable(vectors=vectors, source="fallback")


def load_embeddings(path) -> EmbeddingTable:
    """Read an embeddings file (binary or .jsonl) into a table.

    Binary layout: magic "EMB1", u32 LE dim, u32 LE record count, then
    per record a u16 LE id length, the UTF-8 id, and dim f32 LE values.
    """
    path = Path(path)
    vectors: dict[str, np.ndarray] = {}
    if path.suffix == ".jsonl":
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                row = json.loads(line)
                cid, vec = row["id"], np.asarray(row["vec"], dtype=np.float64)
                if vec.shape != (EMBED_DIM,):
                    raise DimMismatch(
                        f"{path}:{lineno}: id {cid!r} has dim {vec.shape}, want {EMBED_DIM}"
                    )
                vectors[cid] = vec
        return EmbeddingTable(vectors=vectors, source="imported")

    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise BadMagic(f"{path}: bad magic {magic!r}")
        header = fh.read(8)
        if len(header) != 8:
            raise BadMagic(f"{path}: truncated header")
        dim, count = struct.unpack("<II", header)
        if dim != EMBED_DIM:
            raise DimMismatch(f"{path}: file dim {dim}, want {EMBED_DIM}")
        for _ in range(count):
            raw_len = fh.read(2)
            if len(raw_len) != 2:
                raise BadMagic(f"{path}: truncated record header")
            (id_len,) = struct.unpack("<H", raw_len)
            id_bytes = fh.read(id_len)
            if len(id_bytes) != id_len:
                raise BadMagic(f"{path}: truncated record id")
            payload = fh.read(4 * dim)
            if len(payload) != 4 * dim:
                raise BadMagic(f"{path}: truncated vector payload")
            cid = id_bytes.decode("utf-8")
            vec = np.frombuffer(payload, dtype="<f4").astype(np.float64)
            if not np.all(np.isfinite(vec)):
                raise DimMismatch(f"{path}: non-finite values in record {cid!r}")
            vectors[cid] = vec
    return EmbeddingTable(vectors=vectors, source="imported")


def save_embeddings(table: EmbeddingTable, path) -> None:
    """Inverse of load_embeddings, binary flavor; ids in sorted order."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", table.dim, len(table.vectors)))
        for cid in sorted(table.vectors):
            id_bytes = cid.encode("utf-8")
            vec = np.asarray(table.vectors[cid], dtype=np.float64)
            if vec.shape != (table.dim,):
                raise DimMismatch(f"record {cid!r} has shape {vec.shape}")
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(vec.astype("<f4").tobytes())


FEATURE_ROW_COLUMNS = (
    "pair_id",
    "entity",
    "sent_parent",
    "sent_label_parent",
    "sent_child",
    "sent_label_child",
    "label",
)


def write_feature_rows(rows, path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(FEATURE_ROW_COLUMNS)
        for r in rows:
            writer.writerow(
                [
                    r.pair_id,
                    r.entity,
                    repr(r.sentiment_parent.value),
                    r.sentiment_parent.label,
                    repr(r.sentiment_child.value),
                    r.sentiment_child.label,
                    int(r.label),
                ]
            )


def read_feature_rows(path, dataset: Dataset) -> list[FeatureRow]:
    """Load a feature-rows CSV, resolving embedding refs through the dataset."""
    import csv

    by_pair = {p.pair_id: p for p in dataset.pairs}
    rows: list[FeatureRow] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in FEATURE_ROW_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise FeaturizeError(f"{path}: missing column(s) {', '.join(missing)}")
        for row in reader:
            pair = by_pair.get(row["pair_id"])
            if pair is None:
                raise MissingId(f"{path}: pair_id {row['pair_id']!r} not in dataset")
            rows.append(
                FeatureRow(
                    pair_id=row["pair_id"],
                    entity=row["entity"],
                    sentiment_parent=SentimentScore(
                        float(row["sent_parent"]), row["sent_label_parent"]
                    ),
                    sentiment_child=SentimentScore(
                        float(row["sent_child"]), row["sent_label_child"]
                    ),
                    label=Label(int(row["label"])),
                    parent_embedding_ref=pair.parent_id,
                    child_embedding_ref=pair.child_id,
                )
            )
    return rows
