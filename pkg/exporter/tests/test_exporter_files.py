"""Pairs reading, export outputs, manifests, and the CLI entry."""

import csv
import json
import struct

import numpy as np
import pytest

from embed_exporter import __main__ as cli
from embed_exporter.errors import BadPairsFile, EncodeFailure, ExportError, ModelLoadFailure
from embed_exporter.export import (
    count_embedding_records,
    export_embeddings,
    export_sentiment_rows,
    read_entities,
    read_manifest,
)
from embed_exporter.pairs import read_pairs, unique_comments
from embed_exporter.providers import EMBED_DIM, HashingEncoder, LexiconSentiment, TransformerSentiment

HEADER = ["pair_id", "parent_id", "child_id", "parent_text", "child_text", "label"]

ROWS = [
    ["p1", "ca", "cb", "the IPCC report is solid work", "no the IPCC report is wrong", "disagree"],
    ["p2", "ca", "cc", "the IPCC report is solid work", "agreed, IPCC got this right", "agree"],
    ["p3", "ca", "cd", "the IPCC report is solid work", "what does Exxon say though", "neutral"],
]


def write_pairs_csv(path, rows=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        w.writerows(rows if rows is not None else ROWS)
    return path


def write_lexicon(path):
    path.write_text("solid\t0.6\nwrong\t-0.7\nagreed\t0.8\nright\t0.5\n", encoding="utf-8")
    return path


class TestReadPairs:
    def test_csv(self, tmp_path):
        pairs = read_pairs(write_pairs_csv(tmp_path / "p.csv"))
        assert len(pairs) == 3
        assert pairs[0].pair_id == "p1"
        assert [p.label for p in pairs] == [0, 2, 1]

    def test_jsonl(self, tmp_path):
        path = tmp_path / "p.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            for row in ROWS:
                fh.write(json.dumps(dict(zip(HEADER, row))) + "\n")
        pairs = read_pairs(path)
        assert len(pairs) == 3
        assert pairs[2].child_text == "what does Exxon say though"

    def test_missing_column(self, tmp_path):
        path = tmp_path / "p.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(HEADER[:-1])
            w.writerow(ROWS[0][:-1])
        with pytest.raises(BadPairsFile, match="label"):
            read_pairs(path)

    def test_unknown_label(self, tmp_path):
        bad = [ROWS[0][:5] + ["maybe"]]
        with pytest.raises(BadPairsFile, match="maybe"):
            read_pairs(write_pairs_csv(tmp_path / "p.csv", bad))

    def test_empty_file(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("", encoding="utf-8")
        with pytest.raises(BadPairsFile):
            read_pairs(path)

    def test_not_found(self, tmp_path):
        with pytest.raises(BadPairsFile, match="not found"):
            read_pairs(tmp_path / "nope.csv")

    def test_unique_comments_dedup(self, tmp_path):
        # 3 pairs sharing one parent: 4 unique comments here
        pairs = read_pairs(write_pairs_csv(tmp_path / "p.csv"))
        comments = unique_comments(pairs)
        assert [cid for cid, _ in comments] == ["ca", "cb", "cc", "cd"]
        assert comments[0][1] == "the IPCC report is solid work"


class TestReadEntities:
    def test_dedup_and_comments(self, tmp_path):
        path = tmp_path / "e.txt"
        path.write_text("# orgs\nIPCC\nExxon\nipcc\n\nNASA\n", encoding="utf-8")
        assert read_entities(path) == ["IPCC", "Exxon", "NASA"]

    def test_empty_raises(self, tmp_path):
        path = tmp_path / "e.txt"
        path.write_text("# nothing\n", encoding="utf-8")
        with pytest.raises(ExportError):
            read_entities(path)


class _BadDimEncoder:
    name = "bad-dim"

    def encode(self, texts):
        return np.zeros((len(texts), 3))


class _NanEncoder:
    name = "nan"

    def encode(self, texts):
        out = np.zeros((len(texts), EMBED_DIM))
        out[1, 0] = np.nan
        return out


class TestExportEmbeddings:
    def test_binary_layout(self, tmp_path):
        pairs_path = write_pairs_csv(tmp_path / "p.csv")
        out = tmp_path / "e.emb"
        manifest = export_embeddings(pairs_path, out, encoder=HashingEncoder())
        raw = out.read_bytes()
        assert raw[:4] == b"EMB1"
        dim, count = struct.unpack("<II", raw[4:12])
        assert (dim, count) == (EMBED_DIM, 4)
        assert manifest.n_embeddings == 4
        assert manifest.encoder == "hashing-384"

        # ids come out sorted; vectors decode as finite f32
        offset = 12
        ids = []
        for _ in range(count):
            (id_len,) = struct.unpack("<H", raw[offset : offset + 2])
            offset += 2
            ids.append(raw[offset : offset + id_len].decode("utf-8"))
            offset += id_len
            vec = np.frombuffer(raw[offset : offset + 4 * dim], dtype="<f4")
            offset += 4 * dim
            assert np.all(np.isfinite(vec))
        assert ids == sorted(ids) == ["ca", "cb", "cc", "cd"]
        assert offset == len(raw)

    def test_deterministic_hash(self, tmp_path):
        pairs_path = write_pairs_csv(tmp_path / "p.csv")
        m1 = export_embeddings(pairs_path, tmp_path / "a.emb", encoder=HashingEncoder())
        m2 = export_embeddings(pairs_path, tmp_path / "b.emb", encoder=HashingEncoder())
        assert (tmp_path / "a.emb").read_bytes() == (tmp_path / "b.emb").read_bytes()
        assert m1.content_hash == m2.content_hash

    def test_wrong_dim_reports_id(self, tmp_path):
        pairs_path = write_pairs_csv(tmp_path / "p.csv")
        with pytest.raises(EncodeFailure, match="'ca'"):
            export_embeddings(pairs_path, tmp_path / "e.emb", encoder=_BadDimEncoder())

    def test_non_finite_reports_id(self, tmp_path):
        pairs_path = write_pairs_csv(tmp_path / "p.csv")
        with pytest.raises(EncodeFailure, match="'cb'"):
            export_embeddings(pairs_path, tmp_path / "e.emb", encoder=_NanEncoder())

    def test_count_records_matches(self, tmp_path):
        pairs_path = write_pairs_csv(tmp_path / "p.csv")
        manifest = export_embeddings(pairs_path, tmp_path / "e.emb", encoder=HashingEncoder())
        assert count_embedding_records(tmp_path / "e.emb") == manifest.n_embeddings


class TestExportSentimentRows:
    def test_rows_and_neutral_fill(self, tmp_path):
        pairs_path = write_pairs_csv(tmp_path / "p.csv")
        ents = tmp_path / "e.txt"
        ents.write_text("IPCC\nExxon\n", encoding="utf-8")
        provider = LexiconSentiment.from_file(write_lexicon(tmp_path / "lex.tsv"))
        out = tmp_path / "rows.csv"
        manifest = export_sentiment_rows(pairs_path, ents, out, provider=provider)
        with open(out, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        assert manifest.n_feature_rows == len(rows) == 4
        assert [r["entity"] for r in rows] == ["IPCC", "IPCC", "IPCC", "Exxon"]

        # Exxon appears only in the child of p3: parent side is neutral 0.0
        exxon = rows[3]
        assert exxon["pair_id"] == "p3"
        assert exxon["sent_parent"] == "0.0"
        assert exxon["sent_label_parent"] == "neutral"
        assert exxon["label"] == "1"

        # p1 parent window carries "solid" (+0.6), child carries "wrong" (-0.7)
        p1 = rows[0]
        assert p1["sent_parent"] == "0.6"
        assert p1["sent_label_parent"] == "positive"
        assert p1["sent_child"] == "-0.7"
        assert p1["sent_label_child"] == "negative"

    def test_mean_mode_averages_windows(self, tmp_path):
        rows = [["p1", "a", "b", "IPCC is solid. IPCC is wrong.", "fine", "agree"]]
        pairs_path = write_pairs_csv(tmp_path / "p.csv", rows)
        ents = tmp_path / "e.txt"
        ents.write_text("IPCC\n", encoding="utf-8")
        provider = LexiconSentiment.from_file(write_lexicon(tmp_path / "lex.tsv"))
        out_first = tmp_path / "first.csv"
        out_mean = tmp_path / "mean.csv"
        export_sentiment_rows(pairs_path, ents, out_first, provider=provider, mode="first")
        export_sentiment_rows(pairs_path, ents, out_mean, provider=provider, mode="mean")
        with open(out_first, newline="", encoding="utf-8") as fh:
            first = list(csv.DictReader(fh))[0]
        with open(out_mean, newline="", encoding="utf-8") as fh:
            mean = list(csv.DictReader(fh))[0]
        # both windows span the whole short text: first sees +0.6 and
        # -0.7 together, averaging to -0.05; mean averages two identical
        # window scores to the same value
        assert float(first["sent_parent"]) == pytest.approx(-0.05)
        assert float(mean["sent_parent"]) == pytest.approx(-0.05)

    def test_unknown_mode(self, tmp_path):
        pairs_path = write_pairs_csv(tmp_path / "p.csv")
        ents = tmp_path / "e.txt"
        ents.write_text("IPCC\n", encoding="utf-8")
        provider = LexiconSentiment({"solid": 0.6})
        with pytest.raises(ExportError, match="mode"):
            export_sentiment_rows(pairs_path, ents, tmp_path / "r.csv", provider=provider, mode="median")


class TestManifest:
    def test_write_read_round_trip(self, tmp_path):
        pairs_path = write_pairs_csv(tmp_path / "p.csv")
        manifest = export_embeddings(pairs_path, tmp_path / "e.emb", encoder=HashingEncoder())
        manifest.write(tmp_path / "m.json")
        again = read_manifest(tmp_path / "m.json")
        assert again == manifest

    def test_merge_combines_artifacts(self, tmp_path):
        pairs_path = write_pairs_csv(tmp_path / "p.csv")
        ents = tmp_path / "e.txt"
        ents.write_text("IPCC\nExxon\n", encoding="utf-8")
        provider = LexiconSentiment.from_file(write_lexicon(tmp_path / "lex.tsv"))
        emb = export_embeddings(pairs_path, tmp_path / "e.emb", encoder=HashingEncoder())
        rows = export_sentiment_rows(pairs_path, ents, tmp_path / "r.csv", provider=provider)
        merged = emb.merge(rows)
        assert merged.encoder == "hashing-384"
        assert merged.sentiment_model == "lexicon:lex.tsv"
        assert merged.n_embeddings == 4
        assert merged.n_feature_rows == 4
        assert merged.embeddings_path and merged.feature_rows_path
        assert merged.content_hash not in (emb.content_hash, rows.content_hash)

    def test_merge_rejects_different_inputs(self, tmp_path):
        a = export_embeddings(write_pairs_csv(tmp_path / "a.csv"), tmp_path / "a.emb", encoder=HashingEncoder())
        b = export_embeddings(write_pairs_csv(tmp_path / "b.csv"), tmp_path / "b.emb", encoder=HashingEncoder())
        with pytest.raises(ExportError, match="different pairs"):
            a.merge(b)

    def test_bad_manifest_file(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text('{"encoder": "x"}', encoding="utf-8")
        with pytest.raises(ExportError, match="manifest"):
            read_manifest(path)


class TestProviders:
    def test_hashing_encoder_is_deterministic(self):
        enc = HashingEncoder()
        a = enc.encode(["the ipcc report", "another text"])
        b = enc.encode(["the ipcc report", "another text"])
        assert a.shape == (2, EMBED_DIM)
        np.testing.assert_array_equal(a, b)
        assert abs(float(np.linalg.norm(a[0])) - 1.0) < 1e-12

    def test_hashing_encoder_empty_text(self):
        vec = HashingEncoder().encode([""])
        assert not vec.any()

    def test_lexicon_no_hits_is_zero(self):
        assert LexiconSentiment({"good": 0.5}).score("nothing here") == 0.0

    def test_lexicon_bad_file(self, tmp_path):
        path = tmp_path / "lex.tsv"
        path.write_text("token only line\n", encoding="utf-8")
        with pytest.raises(ModelLoadFailure):
            LexiconSentiment.from_file(path)

    def test_sentiment_sign_mapping(self):
        assert TransformerSentiment._sign("POSITIVE") == 1.0
        assert TransformerSentiment._sign("negative") == -1.0
        assert TransformerSentiment._sign("Neutral") == 0.0
        with pytest.raises(EncodeFailure, match="LABEL_1"):
            TransformerSentiment._sign("LABEL_1")


class TestCli:
    def test_hermetic_run_writes_all_outputs(self, tmp_path, capsys):
        pairs_path = write_pairs_csv(tmp_path / "p.csv")
        ents = tmp_path / "e.txt"
        ents.write_text("IPCC\nExxon\n", encoding="utf-8")
        lex = write_lexicon(tmp_path / "lex.tsv")
        out = tmp_path / "exports"
        code = cli.main(
            [
                "--pairs", str(pairs_path), "--entities", str(ents), "--out", str(out),
                "--hermetic", "--lexicon", str(lex),
            ]
        )
        assert code == 0
        assert (out / "embeddings.emb").is_file()
        assert (out / "feature_rows.csv").is_file()
        manifest = read_manifest(out / "manifest.json")
        assert manifest.n_embeddings == 4
        assert manifest.n_feature_rows == 4
        assert manifest.encoder == "hashing-384"

    def test_hermetic_without_lexicon_fails(self, tmp_path, capsys):
        pairs_path = write_pairs_csv(tmp_path / "p.csv")
        ents = tmp_path / "e.txt"
        ents.write_text("IPCC\n", encoding="utf-8")
        code = cli.main(
            ["--pairs", str(pairs_path), "--entities", str(ents), "--out", str(tmp_path / "o"), "--hermetic"]
        )
        assert code == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert err["error"] == "ExportError"
        assert "lexicon" in err["message"]

    def test_skip_both_stages_fails(self, tmp_path, capsys):
        pairs_path = write_pairs_csv(tmp_path / "p.csv")
        ents = tmp_path / "e.txt"
        ents.write_text("IPCC\n", encoding="utf-8")
        code = cli.main(
            [
                "--pairs", str(pairs_path), "--entities", str(ents), "--out", str(tmp_path / "o"),
                "--hermetic", "--skip-embeddings", "--skip-sentiment",
            ]
        )
        assert code == 1
        assert "nothing to export" in capsys.readouterr().err
