"""Command line entry: export embeddings and sentiment rows in one run.

    embed-export --pairs pairs.csv --entities entities.txt --out exports/

Writes embeddings.emb, feature_rows.csv, and manifest.json into the
output directory.  --hermetic swaps both pretrained backends for the
offline fallbacks (hashing encoder, lexicon scorer), which is the only
mode that works without model downloads.
"""

import argparse
import json
import sys
from pathlib import Path

from .errors import ExportError
from .export import export_embeddings, export_sentiment_rows
from .providers import (
    DEFAULT_ENCODER,
    DEFAULT_SENTIMENT,
    HashingEncoder,
    LexiconSentiment,
    SentenceEncoder,
    TransformerSentiment,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="Export sentence embeddings and entity sentiment rows",
    )
    parser.add_argument("--pairs", required=True, help="comment-reply pairs file (csv or jsonl)")
    parser.add_argument("--entities", required=True, help="entity list, one name per line")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--encoder-model", default=DEFAULT_ENCODER, help="sentence encoder name")
    parser.add_argument("--sentiment-model", default=DEFAULT_SENTIMENT, help="sentiment model name")
    parser.add_argument(
        "--lexicon", default=None, help="lexicon TSV for the hermetic sentiment scorer"
    )
    parser.add_argument(
        "--hermetic",
        action="store_true",
        help="use the offline hashing encoder and lexicon scorer (requires --lexicon)",
    )
    parser.add_argument(
        "--skip-embeddings", action="store_true", help="export sentiment rows only"
    )
    parser.add_argument(
        "--skip-sentiment", action="store_true", help="export embeddings only"
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.hermetic:
            encoder = HashingEncoder()
            if args.lexicon is None and not args.skip_sentiment:
                raise ExportError("--hermetic sentiment export needs --lexicon")
            provider = LexiconSentiment.from_file(args.lexicon) if args.lexicon else None
        else:
            encoder = SentenceEncoder(args.encoder_model) if not args.skip_embeddings else None
            provider = (
                TransformerSentiment(args.sentiment_model) if not args.skip_sentiment else None
            )

        manifest = None
        if not args.skip_embeddings:
            manifest = export_embeddings(args.pairs, out / "embeddings.emb", encoder=encoder)
        if not args.skip_sentiment:
            rows = export_sentiment_rows(
                args.pairs, args.entities, out / "feature_rows.csv", provider=provider
            )
            manifest = manifest.merge(rows) if manifest else rows
        if manifest is None:
            raise ExportError("nothing to export: both stages skipped")
        manifest.write(out / "manifest.json")
    except ExportError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(f"wrote {out / 'manifest.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
