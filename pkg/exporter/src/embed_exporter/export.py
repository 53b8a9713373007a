"""Batch export of embeddings and entity sentiment rows.

Outputs use the training pipeline's file formats so an exported
directory drops straight into its featurize/build-graph stages:

- embeddings: binary, magic "EMB1", u32 LE dim and record count, then
  per record a u16 LE id length, the UTF-8 comment id, and dim f32 LE
  values; ids in sorted order, one record per unique comment
- feature rows: CSV with columns pair_id, entity, sent_parent,
  sent_label_parent, sent_child, sent_label_child, label; float cells
  are repr() strings so reruns are byte-identical

Every export returns an ExportManifest recording the configured models,
record counts, and a sha256 content hash of the artifacts.
"""

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import EncodeFailure, ExportError
from .pairs import read_pairs, unique_comments
from .providers import EMBED_DIM, SentenceEncoder, TransformerSentiment
from .windows import WINDOW_RADIUS, context_window, find_mentions

_MAGIC = b"EMB1"
NEUTRAL_BAND = 0.05

FEATURE_ROW_COLUMNS = (
    "pair_id",
    "entity",
    "sent_parent",
    "sent_label_parent",
    "sent_child",
    "sent_label_child",
    "label",
)


@dataclass
class ExportManifest:
    encoder: str | None
    sentiment_model: str | None
    pairs_path: str
    embeddings_path: str | None
    feature_rows_path: str | None
    n_embeddings: int
    n_feature_rows: int
    content_hash: str

    def merge(self, other: "ExportManifest") -> "ExportManifest":
        """Fold two single-artifact manifests into one run manifest."""
        if self.pairs_path != other.pairs_path:
            raise ExportError("cannot merge manifests from different pairs files")
        return ExportManifest(
            encoder=self.encoder or other.encoder,
            sentiment_model=self.sentiment_model or other.sentiment_model,
            pairs_path=self.pairs_path,
            embeddings_path=self.embeddings_path or other.embeddings_path,
            feature_rows_path=self.feature_rows_path or other.feature_rows_path,
            n_embeddings=self.n_embeddings or other.n_embeddings,
            n_feature_rows=self.n_feature_rows or other.n_feature_rows,
            content_hash=_hash_paths(
                self.embeddings_path or other.embeddings_path,
                self.feature_rows_path or other.feature_rows_path,
            ),
        )

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


def read_manifest(path) -> ExportManifest:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        return ExportManifest(**raw)
    except TypeError as exc:
        raise ExportError(f"{path}: not an export manifest: {exc}") from exc


def _hash_paths(*paths) -> str:
    digest = hashlib.sha256()
    for p in paths:
        if p is None:
            continue
        digest.update(Path(p).read_bytes())
    return digest.hexdigest()


def read_entities(path) -> list[str]:
    """One entity per line, # comments, case-fold dedup keeping first."""
    path = Path(path)
    if not path.is_file():
        raise ExportError(f"entity list not found: {path}")
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
        raise ExportError(f"{path}: no entities found")
    return entities


def export_embeddings(pairs_path, out_path, encoder=None) -> ExportManifest:
    """Encode every unique comment and write the binary embeddings file."""
    pairs = read_pairs(pairs_path)
    comments = unique_comments(pairs)
    if encoder is None:
        encoder = SentenceEncoder()
    vecs = encoder.encode([text for _, text in comments])
    vecs = np.asarray(vecs, dtype=np.float64)
    if vecs.ndim != 2 or vecs.shape[0] != len(comments):
        raise EncodeFailure(
            f"encoder {encoder.name!r} returned shape {vecs.shape} for {len(comments)} comments"
        )
    by_id = {}
    for (cid, _), vec in zip(comments, vecs):
        if vec.shape != (EMBED_DIM,):
            raise EncodeFailure(f"comment {cid!r}: vector dim {vec.shape[0]}, want {EMBED_DIM}")
        if not np.all(np.isfinite(vec)):
            raise EncodeFailure(f"comment {cid!r}: non-finite values in vector")
        by_id[cid] = vec

    out_path = Path(out_path)
    with open(out_path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", EMBED_DIM, len(by_id)))
        for cid in sorted(by_id):
            id_bytes = cid.encode("utf-8")
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(by_id[cid].astype("<f4").tobytes())
    return ExportManifest(
        encoder=encoder.name,
        sentiment_model=None,
        pairs_path=str(pairs_path),
        embeddings_path=str(out_path),
        feature_rows_path=None,
        n_embeddings=len(by_id),
        n_feature_rows=0,
        content_hash=_hash_paths(out_path),
    )


def _classify(value: float) -> tuple[float, str]:
    value = float(value)
    if not math.isfinite(value):
        raise ExportError(f"non-finite sentiment value {value!r}")
    value = max(-1.0, min(1.0, value))
    if abs(value) < NEUTRAL_BAND:
        return value, "neutral"
    return value, "positive" if value > 0 else "negative"


def _score_side(text, entity, mentions, provider, mode) -> tuple[float, str]:
    ours = [m for m in mentions if m.entity == entity]
    if not ours:
        return 0.0, "neutral"
    if mode == "first":
        ours = ours[:1]
    elif mode != "mean":
        raise ExportError(f"unknown mention scoring mode {mode!r}")
    values = []
    for m in ours:
        snippet, _, _ = context_window(text, m)
        values.append(float(provider.score(snippet)))
    return _classify(sum(values) / len(values))


def export_sentiment_rows(
    pairs_path, entities_path, out_path, provider=None, mode: str = "first"
) -> ExportManifest:
    """Score entity windows on both sides and write the feature-rows CSV.

    One row per (pair, entity) with the entity mentioned in the parent
    or the child; a side without a mention scores 0.0, neutral.
    """
    import csv

    pairs = read_pairs(pairs_path)
    entities = read_entities(entities_path)
    if provider is None:
        provider = TransformerSentiment()
    entity_rank = {name: i for i, name in enumerate(entities)}

    n_rows = 0
    out_path = Path(out_path)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(FEATURE_ROW_COLUMNS)
        for pair in pairs:
            parent_mentions = find_mentions(pair.parent_text, entities)
            child_mentions = find_mentions(pair.child_text, entities)
            seen = {m.entity for m in parent_mentions} | {m.entity for m in child_mentions}
            for entity in sorted(seen, key=entity_rank.__getitem__):
                pv, pl = _score_side(pair.parent_text, entity, parent_mentions, provider, mode)
                cv, cl = _score_side(pair.child_text, entity, child_mentions, provider, mode)
                writer.writerow([pair.pair_id, entity, repr(pv), pl, repr(cv), cl, pair.label])
                n_rows += 1
    return ExportManifest(
        encoder=None,
        sentiment_model=provider.name,
        pairs_path=str(pairs_path),
        embeddings_path=None,
        feature_rows_path=str(out_path),
        n_embeddings=0,
        n_feature_rows=n_rows,
        content_hash=_hash_paths(out_path),
    )


def count_embedding_records(path) -> int:
    """Record count straight from an embeddings file header, verified."""
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ExportError(f"{path}: not an embeddings file")
        dim, count = struct.unpack("<II", fh.read(8))
        seen = 0
        while True:
            raw = fh.read(2)
            if not raw:
                break
            (id_len,) = struct.unpack("<H", raw)
            fh.read(id_len)
            fh.read(4 * dim)
            seen += 1
    if seen != count:
        raise ExportError(f"{path}: header says {count} records, file holds {seen}")
    return count
