"""Offline exporter of sentence embeddings and entity sentiment rows."""

from .errors import BadPairsFile, EncodeFailure, ExportError, ModelLoadFailure
from .export import (
    ExportManifest,
    count_embedding_records,
    export_embeddings,
    export_sentiment_rows,
    read_entities,
    read_manifest,
)
from .pairs import Pair, read_pairs, unique_comments
from .providers import (
    DEFAULT_ENCODER,
    DEFAULT_SENTIMENT,
    EMBED_DIM,
    HashingEncoder,
    LexiconSentiment,
    SentenceEncoder,
    TransformerSentiment,
)
from .windows import WINDOW_RADIUS, Mention, context_window, find_mentions

__all__ = [
    "BadPairsFile",
    "DEFAULT_ENCODER",
    "DEFAULT_SENTIMENT",
    "EMBED_DIM",
    "EncodeFailure",
    "ExportError",
    "ExportManifest",
    "HashingEncoder",
    "LexiconSentiment",
    "Mention",
    "ModelLoadFailure",
    "Pair",
    "SentenceEncoder",
    "TransformerSentiment",
    "WINDOW_RADIUS",
    "context_window",
    "count_embedding_records",
    "export_embeddings",
    "export_sentiment_rows",
    "find_mentions",
    "read_entities",
    "read_manifest",
    "read_pairs",
    "unique_comments",
]
