"""Embedding and sentiment backends.

Two tiers per modality: a pretrained transformer backend for real
exports, and a hermetic fallback that keeps tests and offline runs off
the network.  Backends load eagerly so a missing model fails the run
before any output file is opened.  Every provider carries a ``name``
that ends up in the export manifest.
"""

import hashlib
import re
from pathlib import Path

import numpy as np

from .errors import EncodeFailure, ModelLoadFailure

EMBED_DIM = 384
DEFAULT_ENCODER = "sentence-transformers/paraphrase-MiniLM-L6-v2"
DEFAULT_SENTIMENT = "distilbert-base-uncased-finetuned-sst-2-english"

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


class HashingEncoder:
    """Deterministic signed-hash embedder, the offline encoder stand-in.

    Case-folded word tokens hash (blake2b, 8 bytes) into one of 384
    signed buckets; the count vector is L2-normalized.  Token-free text
    maps to the zero vector.
    """

    name = "hashing-384"
    dim = EMBED_DIM

    def encode(self, texts) -> np.ndarray:
        out = np.zeros((len(texts), EMBED_DIM), dtype=np.float64)
        for row, text in enumerate(texts):
            for token in _TOKEN_RE.findall(text.casefold()):
                digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
                h = int.from_bytes(digest, "little")
                sign = 1.0 if (h >> 62) & 1 else -1.0
                out[row, h % EMBED_DIM] += sign
            norm = float(np.linalg.norm(out[row]))
            if norm > 0.0:
                out[row] /= norm
        return out


class SentenceEncoder:
    """Pretrained sentence encoder (sentence-transformers backend)."""

    dim = EMBED_DIM

    def __init__(self, model_name: str = DEFAULT_ENCODER, batch_size: int = 64):
        self.name = model_name
        self.batch_size = batch_size
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise ModelLoadFailure(
                f"sentence-transformers is not installed; cannot load {model_name!r}"
            ) from exc
        try:
            self._model = SentenceTransformer(model_name)
        except Exception as exc:
            raise ModelLoadFailure(f"failed to load encoder {model_name!r}: {exc}") from exc

    def encode(self, texts) -> np.ndarray:
        try:
            vecs = self._model.encode(
                list(texts), batch_size=self.batch_size, show_progress_bar=False
            )
        except Exception as exc:
            raise EncodeFailure(f"encoder {self.name!r} failed on batch: {exc}") from exc
        return np.asarray(vecs, dtype=np.float64)


class LexiconSentiment:
    """Hermetic sentiment scorer: mean signed lexicon weight over tokens.

    Same TSV format as the training pipeline's lexicon provider
    (token<TAB>weight, weights in [-1, 1], # comments); snippets with no
    lexicon hit score 0.0.
    """

    def __init__(self, weights: dict[str, float], name: str = "lexicon"):
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
                    raise ModelLoadFailure(f"{path}:{lineno}: expected 'token<TAB>weight'")
                try:
                    weight = float(parts[1])
                except ValueError:
                    raise ModelLoadFailure(f"{path}:{lineno}: bad weight {parts[1]!r}") from None
                if not -1.0 <= weight <= 1.0:
                    raise ModelLoadFailure(f"{path}:{lineno}: weight {weight} outside [-1, 1]")
                weights[parts[0]] = weight
        if not weights:
            raise ModelLoadFailure(f"{path}: empty lexicon")
        return cls(weights, name=f"lexicon:{path.name}")

    def score(self, snippet: str) -> float:
        hits = [self.weights[t] for t in _TOKEN_RE.findall(snippet.casefold()) if t in self.weights]
        if not hits:
            return 0.0
        return sum(hits) / len(hits)


class TransformerSentiment:
    """Pretrained classifier scored as confidence times polarity sign."""

    def __init__(self, model_name: str = DEFAULT_SENTIMENT):
        self.name = model_name
        try:
            from transformers import pipeline
        except ImportError as exc:
            raise ModelLoadFailure(
                f"transformers is not installed; cannot load {model_name!r}"
            ) from exc
        try:
            self._pipe = pipeline("sentiment-analysis", model=model_name)
        except Exception as exc:
            raise ModelLoadFailure(f"failed to load sentiment model {model_name!r}: {exc}") from exc

    @staticmethod
    def _sign(label: str) -> float:
        folded = label.casefold()
        if "pos" in folded:
            return 1.0
        if "neg" in folded:
            return -1.0
        if "neu" in folded:
            return 0.0
        raise EncodeFailure(f"unmapped sentiment label {label!r}")

    def score(self, snippet: str) -> float:
        result = self._pipe(snippet, truncation=True)[0]
        return float(result["score"]) * self._sign(result["label"])
