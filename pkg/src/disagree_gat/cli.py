"""Pipeline executable: nine subcommands over a shared run configuration.

Each stage persists canonical artifacts into the output dir and the
next stage reads them from there by default, so

    disagree-gat ingest --pairs raw.csv --entities names.txt --out run/
    disagree-gat featurize --lexicon lex.tsv --out run/
    disagree-gat build-graph --out run/
    disagree-gat train --out run/
    disagree-gat evaluate --out run/

is a complete run.  Configuration comes from an INI file (sections
[paths], [train], [model], [flags]) with every CLI flag overriding the
file value; the merged result is dumped to resolved-config.ini in the
output dir on every invocation so a run can be reproduced from its
artifacts alone.

Failures exit nonzero with a one-line JSON error object on stderr:
ConfigError -> 2, StageInputMissing -> 3, pipeline errors -> 1.

The environment variable DISAGREE_GAT_THREADS caps BLAS parallelism;
it is applied before the numeric stack loads.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from configparser import ConfigParser, Error as IniError
from dataclasses import dataclass
from pathlib import Path

log = logging.getLogger(__name__)

_THREAD_ENV = "DISAGREE_GAT_THREADS"
_BLAS_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


class ConfigError(ValueError):
    """Bad configuration file, flag value, or missing required setting."""


class StageInputMissing(FileNotFoundError):
    """An artifact the stage needs does not exist yet."""


class SelfcheckFailure(RuntimeError):
    pass


@dataclass
class RunConfig:
    """Merged file + flag configuration for one subcommand invocation."""

    # [paths]
    pairs: str | None = None
    entities: str | None = None
    embeddings: str | None = None
    lexicon: str | None = None
    out: str = "out"
    format: str = "csv"
    # [train]
    seed: int = 42
    lr: float = 1e-3
    weight_decay: float = 5e-4
    patience: int = 20
    max_epochs: int = 500
    dropout: float = 0.5
    batch: int | None = None  # None = full batch
    # [model]
    embed_in: int = 384
    heads: int = 8
    embed_out: int = 6
    sent_out: int = 2
    layer2_sentiment: bool = True
    # [flags]
    dedup_nodes: bool = False
    group_split: bool = False
    static_oversample: bool = False
    append_raw_sentiment: bool = False
    # stage-specific flags (not part of the config file)
    rows: str | None = None
    graph: str | None = None
    splits: str | None = None
    checkpoint: str | None = None
    attention: str | None = None
    categories: str | None = None
    mode: str = "first"
    bins: int = 20
    top_n: int = 30
    sort: str = "frequency"
    filter_entities: bool = False


def _parse_batch(raw: str) -> int | None:
    raw = raw.strip().lower()
    if raw in ("", "full"):
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"batch must be 'full' or a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"batch must be >= 1, got {n}")
    return n


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {raw!r}")


# section -> key -> (RunConfig attribute, parser)
_INI_SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "paths": {
        "pairs": ("pairs", str),
        "entities": ("entities", str),
        "embeddings": ("embeddings", str),
        "lexicon": ("lexicon", str),
        "out": ("out", str),
        "format": ("format", str),
    },
    "train": {
        "seed": ("seed", int),
        "lr": ("lr", float),
        "weight_decay": ("weight_decay", float),
        "patience": ("patience", int),
        "max_epochs": ("max_epochs", int),
        "dropout": ("dropout", float),
        "batch": ("batch", _parse_batch),
    },
    "model": {
        "embed_in": ("embed_in", int),
        "heads": ("heads", int),
        "embed_out": ("embed_out", int),
        "sent_out": ("sent_out", int),
        "layer2_sentiment": ("layer2_sentiment", _parse_bool),
    },
    "flags": {
        "dedup_nodes": ("dedup_nodes", _parse_bool),
        "group_split": ("group_split", _parse_bool),
        "static_oversample": ("static_oversample", _parse_bool),
        "append_raw_sentiment": ("append_raw_sentiment", _parse_bool),
    },
}


def _load_ini(path: str, cfg: RunConfig) -> None:
    ini_path = Path(path)
    if not ini_path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = ConfigParser()
    try:
        parser.read_string(ini_path.read_text(encoding="utf-8"), source=path)
    except IniError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for section in parser.sections():
        if section not in _INI_SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            entry = _INI_SCHEMA[section].get(key)
            if entry is None:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            attr, parse = entry
            try:
                setattr(cfg, attr, parse(raw))
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"{path}: bad value for {section}.{key}: {exc}") from None


# every flag that can override a config value keeps default=None so an
# absent flag never clobbers the file setting
_OVERRIDE_ATTRS = (
    "pairs", "entities", "embeddings", "lexicon", "out", "format",
    "seed", "lr", "weight_decay", "patience", "max_epochs", "dropout", "batch",
    "heads", "embed_out", "sent_out",
    "dedup_nodes", "group_split", "static_oversample", "append_raw_sentiment",
    "rows", "graph", "splits", "checkpoint", "attention", "categories",
    "mode", "bins", "top_n", "sort", "filter_entities",
)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        _load_ini(args.config, cfg)
    for attr in _OVERRIDE_ATTRS:
        value = getattr(args, attr.replace("-", "_"), None)
        if value is not None:
            setattr(cfg, attr, value)
    if cfg.format not in ("csv", "jsonl"):
        raise ConfigError(f"format must be csv or jsonl, got {cfg.format!r}")
    if cfg.sort not in ("frequency", "disagreement"):
        raise ConfigError(f"sort must be frequency or disagreement, got {cfg.sort!r}")
    if cfg.mode not in ("first", "mean"):
        raise ConfigError(f"mode must be first or mean, got {cfg.mode!r}")
    for name in ("patience", "max_epochs", "heads", "embed_out", "sent_out", "bins", "top_n"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be >= 1, got {getattr(cfg, name)}")
    if not 0.0 <= cfg.dropout < 1.0:
        raise ConfigError(f"dropout must be in [0, 1), got {cfg.dropout}")
    return cfg


def _prepare_out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output dir {cfg.out!r} not creatable: {exc}") from None
    return out


def _dump_resolved_config(cfg: RunConfig, command: str, out: Path) -> None:
    """Reproducibility record: the full merged configuration, every run."""

    def b(v: bool) -> str:
        return "true" if v else "false"

    lines = [
        "[paths]",
        f"pairs = {cfg.pairs or ''}",
        f"entities = {cfg.entities or ''}",
        f"embeddings = {cfg.embeddings or ''}",
        f"lexicon = {cfg.lexicon or ''}",
        f"out = {cfg.out}",
        f"format = {cfg.format}",
        "",
        "[train]",
        f"seed = {cfg.seed}",
        f"lr = {cfg.lr!r}",
        f"weight_decay = {cfg.weight_decay!r}",
        f"patience = {cfg.patience}",
        f"max_epochs = {cfg.max_epochs}",
        f"dropout = {cfg.dropout!r}",
        f"batch = {'full' if cfg.batch is None else cfg.batch}",
        "",
        "[model]",
        f"embed_in = {cfg.embed_in}",
        f"heads = {cfg.heads}",
        f"embed_out = {cfg.embed_out}",
        f"sent_out = {cfg.sent_out}",
        f"layer2_sentiment = {b(cfg.layer2_sentiment)}",
        "",
        "[flags]",
        f"dedup_nodes = {b(cfg.dedup_nodes)}",
        f"group_split = {b(cfg.group_split)}",
        f"static_oversample = {b(cfg.static_oversample)}",
        f"append_raw_sentiment = {b(cfg.append_raw_sentiment)}",
        "",
        "[run]",
        f"command = {command}",
        f"mode = {cfg.mode}",
        f"bins = {cfg.bins}",
        f"top_n = {cfg.top_n}",
        f"sort = {cfg.sort}",
        f"filter_entities = {b(cfg.filter_entities)}",
    ]
    (out / "resolved-config.ini").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _need(value: str | None, flag: str) -> str:
    if not value:
        raise ConfigError(f"missing required path: pass --{flag} or set it in the config file")
    return value


def _stage_input(explicit: str | None, default: Path, producer: str, flag: str) -> Path:
    """Resolve a chained artifact: explicit flag wins, else the default
    artifact in the output dir, which must already exist."""
    if explicit:
        path = Path(explicit)
        if not path.is_file():
            raise StageInputMissing(f"{path}: no such file")
        return path
    if not default.is_file():
        raise StageInputMissing(f"{default}: not found; run `{producer}` first or pass --{flag}")
    return default


def _write_json(payload: dict, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------- stages


def cmd_ingest(cfg: RunConfig, out: Path) -> None:
    from . import corpus

    dataset = corpus.load_pairs(_need(cfg.pairs, "pairs"), format=cfg.format)
    entities = corpus.load_entity_list(_need(cfg.entities, "entities"))
    if cfg.filter_entities:
        before = len(dataset.pairs)
        dataset = corpus.filter_pairs_by_entities(dataset, entities)
        log.info("entity filter kept %d of %d pairs", len(dataset.pairs), before)
    stats = corpus.dataset_stats(dataset)
    corpus.save_pairs(dataset, out / "pairs.csv")
    _write_json(
        {
            "n_pairs": stats.n_pairs,
            "n_users": stats.n_users,
            "n_entities": len(entities),
            "label_fractions": {k.name.lower(): v for k, v in stats.label_fractions.items()},
            "date_range": list(stats.date_range) if stats.date_range else None,
        },
        out / "stats.json",
    )
    log.info("ingest: %d pairs -> %s", stats.n_pairs, out / "pairs.csv")


def cmd_featurize(cfg: RunConfig, out: Path) -> None:
    from . import corpus, featurize

    pairs_path = _stage_input(cfg.pairs, out / "pairs.csv", "ingest", "pairs")
    fmt = cfg.format if cfg.pairs else "csv"
    dataset = corpus.load_pairs(pairs_path, format=fmt)
    entities = corpus.load_entity_list(_need(cfg.entities, "entities"))
    provider = featurize.LexiconSentiment.from_file(_need(cfg.lexicon, "lexicon"))

    rows = featurize.build_feature_rows(dataset, entities, provider, mode=cfg.mode)
    featurize.write_feature_rows(rows, out / "feature_rows.csv")
    if cfg.embeddings:
        table = featurize.load_embeddings(cfg.embeddings)
    else:
        table = featurize.fallback_table(dataset)
    featurize.save_embeddings(table, out / "embeddings.emb")
    log.info("featurize: %d rows, %d embeddings", len(rows), len(table.vectors))


def cmd_build_graph(cfg: RunConfig, out: Path) -> None:
    from . import corpus, featurize
    from .graph import build_graph, dump_graph, split_masks

    pairs_path = _stage_input(cfg.pairs, out / "pairs.csv", "ingest", "pairs")
    fmt = cfg.format if cfg.pairs else "csv"
    dataset = corpus.load_pairs(pairs_path, format=fmt)
    rows_path = _stage_input(cfg.rows, out / "feature_rows.csv", "featurize", "rows")
    rows = featurize.read_feature_rows(rows_path, dataset)
    emb_path = _stage_input(cfg.embeddings, out / "embeddings.emb", "featurize", "embeddings")
    table = featurize.load_embeddings(emb_path)

    graph = build_graph(rows, table, dedup=cfg.dedup_nodes)
    masks = split_masks(graph, seed=cfg.seed, group_by_pair=cfg.group_split)
    dump_graph(graph, out / "graph.jsonl")
    _write_json(
        {
            "seed": cfg.seed,
            "group_by_pair": cfg.group_split,
            "train": sorted(masks.train),
            "val": sorted(masks.val),
            "test": sorted(masks.test),
        },
        out / "splits.json",
    )
    log.info(
        "build-graph: %d nodes, %d samples (train/val/test %d/%d/%d)",
        graph.n_nodes,
        graph.n_samples,
        len(masks.train),
        len(masks.val),
        len(masks.test),
    )


def _load_graph_and_splits(cfg: RunConfig, out: Path):
    from .graph import SplitMasks, load_graph_dump

    graph_path = _stage_input(cfg.graph, out / "graph.jsonl", "build-graph", "graph")
    graph = load_graph_dump(graph_path)
    splits_path = _stage_input(cfg.splits, out / "splits.json", "build-graph", "splits")
    with open(splits_path, encoding="utf-8") as fh:
        raw = json.load(fh)
    masks = SplitMasks(train=set(raw["train"]), val=set(raw["val"]), test=set(raw["test"]))
    return graph, masks


def _model_config(cfg: RunConfig):
    from .gat import GATLayerConfig, ModelConfig

    layer = GATLayerConfig(
        heads=cfg.heads, embed_out=cfg.embed_out, sent_out=cfg.sent_out, dropout=cfg.dropout
    )
    return ModelConfig(
        embed_in=cfg.embed_in,
        layer1=layer,
        layer2=layer,
        layer2_sentiment=cfg.layer2_sentiment,
        append_raw_sentiment=cfg.append_raw_sentiment,
    )


def _train_config(cfg: RunConfig):
    from .train import TrainConfig

    return TrainConfig(
        seed=cfg.seed,
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        patience=cfg.patience,
        max_epochs=cfg.max_epochs,
        dropout=cfg.dropout,
        batch_size=cfg.batch,
        static_oversample=cfg.static_oversample,
    )


def cmd_train(cfg: RunConfig, out: Path) -> None:
    from .gat import DisagreeGAT
    from .train import fit, save_checkpoint, write_train_report

    graph, masks = _load_graph_and_splits(cfg, out)
    model = DisagreeGAT(_model_config(cfg), seed=cfg.seed)
    _, report = fit(model, graph, masks, _train_config(cfg))
    save_checkpoint(model, out / "checkpoint.json", seed=cfg.seed)
    write_train_report(report, out / "train_report.csv", out / "train_summary.json")
    log.info(
        "train: stopped after %d epochs (%s), best epoch %d",
        report.epochs_run,
        report.stop_reason,
        report.best_epoch,
    )


def cmd_evaluate(cfg: RunConfig, out: Path) -> None:
    from .evaluation import compute_metrics, write_metrics_csv
    from .train import load_checkpoint

    graph, masks = _load_graph_and_splits(cfg, out)
    model = load_checkpoint(_stage_input(cfg.checkpoint, out / "checkpoint.json", "train", "checkpoint"))
    preds, _ = model.predict(graph)
    test_ids = sorted(masks.test)
    if not test_ids:
        raise ConfigError("empty test split; nothing to evaluate")
    labels = graph.labels_array()
    metrics = compute_metrics(preds[test_ids], labels[test_ids])
    write_metrics_csv(metrics, out / "metrics.csv")
    _write_json(metrics.to_dict(), out / "metrics.json")
    log.info("evaluate: accuracy %.4f macro-F1 %.4f on %d samples", metrics.accuracy, metrics.macro_f1, len(test_ids))


def cmd_ablate(cfg: RunConfig, out: Path) -> None:
    from .evaluation import run_ablation, write_ablation_csv, write_metrics_csv
    from .graph import ABLATION_VARIANTS

    graph, masks = _load_graph_and_splits(cfg, out)
    tcfg = _train_config(cfg)
    mcfg = _model_config(cfg)
    results = {}
    for variant in ABLATION_VARIANTS:
        metrics, report = run_ablation(graph, masks, tcfg, mcfg, variant)
        results[variant] = metrics
        write_metrics_csv(metrics, out / f"ablation_{variant}_metrics.csv")
        log.info("ablate %s: macro-F1 %.4f (%d epochs)", variant, metrics.macro_f1, report.epochs_run)
    write_ablation_csv(results, out / "ablation_summary.csv")


def cmd_attention(cfg: RunConfig, out: Path) -> None:
    import csv as csv_mod

    from .evaluation import attention_histogram, write_histogram_csv
    from .graph import load_graph_dump
    from .train import load_checkpoint

    graph_path = _stage_input(cfg.graph, out / "graph.jsonl", "build-graph", "graph")
    graph = load_graph_dump(graph_path)
    model = load_checkpoint(_stage_input(cfg.checkpoint, out / "checkpoint.json", "train", "checkpoint"))
    records = model.extract_attention(graph)
    with open(out / "attention_records.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv_mod.writer(fh)
        w.writerow(["sample_id", "layer1_mean", "layer2_mean", "combined"])
        for r in records:
            w.writerow(
                [
                    r.sample_id,
                    repr(sum(r.layer1) / len(r.layer1)),
                    repr(sum(r.layer2) / len(r.layer2)),
                    repr(r.combined),
                ]
            )
    write_histogram_csv(attention_histogram(records, bins=cfg.bins), out / "attention_histogram.csv")
    log.info("attention: %d records, %d bins", len(records), cfg.bins)


def cmd_entity_report(cfg: RunConfig, out: Path) -> None:
    import csv as csv_mod

    from . import corpus, featurize
    from .evaluation import attention_by_category, entity_report, write_entity_report_csv
    from .gat import AttentionRecord

    pairs_path = _stage_input(cfg.pairs, out / "pairs.csv", "ingest", "pairs")
    fmt = cfg.format if cfg.pairs else "csv"
    dataset = corpus.load_pairs(pairs_path, format=fmt)
    rows_path = _stage_input(cfg.rows, out / "feature_rows.csv", "featurize", "rows")
    rows = featurize.read_feature_rows(rows_path, dataset)

    attention = None
    if cfg.attention:
        att_path = _stage_input(cfg.attention, Path(cfg.attention), "attention", "attention")
        attention = []
        with open(att_path, newline="", encoding="utf-8") as fh:
            for rec in csv_mod.DictReader(fh):
                attention.append(
                    AttentionRecord(int(rec["sample_id"]), (), (), float(rec["combined"]))
                )

    report = entity_report(rows, attention=attention, top_n=cfg.top_n, sort=cfg.sort)
    write_entity_report_csv(report, out / "entity_report.csv")
    log.info("entity-report: %d entities", len(report))

    if cfg.categories:
        if attention is None:
            raise ConfigError("--categories needs --attention records")
        categories = {}
        with open(cfg.categories, newline="", encoding="utf-8") as fh:
            for rec in csv_mod.DictReader(fh):
                categories[rec["entity"]] = rec["category"]
        by_cat = attention_by_category(report, categories)
        with open(out / "attention_by_category.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv_mod.writer(fh)
            w.writerow(["category", "mean_attention"])
            for cat in sorted(by_cat):
                w.writerow([cat, repr(by_cat[cat])])


def cmd_selfcheck(cfg: RunConfig, out: Path) -> None:
    """Gradient check plus the core invariants, printed one per line."""
    import numpy as np

    from . import nncore as nc
    from .evaluation import compute_metrics
    from .gat import DisagreeGAT, GATLayerConfig, ModelConfig
    from .graph import class_weights, oversample_minority, synthetic_graph

    def small_graph(rng, n=4, dim=5):
        return synthetic_graph(
            rng.uniform_array((n, dim)) - 0.5,
            np.array([rng.uniform() * 2 - 1 for _ in range(n)]),
            rng.uniform_array((n, dim)) - 0.5,
            np.array([rng.uniform() * 2 - 1 for _ in range(n)]),
            [rng.randint(3) for _ in range(n)],
        )

    def check_gradients():
        rng = nc.RngStream(13)
        g = small_graph(rng)
        layer = GATLayerConfig(heads=2, embed_out=3, sent_out=1, dropout=0.0)
        model = DisagreeGAT(
            ModelConfig(embed_in=5, layer1=layer, layer2=layer, append_raw_sentiment=True), seed=13
        )
        labels = g.labels_array()
        weights = class_weights(labels)

        def build():
            logits, _ = model.forward(g, training=False)
            return nc.weighted_cross_entropy(logits, labels, weights)

        params = model.parameters()
        nc.zero_grad(params)
        nc.backward(build())
        fd = nc.finite_diff_grad(lambda: build().value, params, eps=1e-5)
        worst = 0.0
        for p in params:
            denom = np.maximum(np.abs(fd[p.name]), 1e-8)
            worst = max(worst, float((np.abs(p.grad - fd[p.name]) / denom).max()))
        assert worst < 1e-4, f"max relative error {worst:.2e}"

    def check_attention_normalization():
        rng = nc.RngStream(29)
        for _ in range(50):
            n_nodes = 2 + rng.randint(6)
            n_edges = 1 + rng.randint(12)
            scores = nc.Var(rng.uniform_array((n_edges,)) * 8 - 4)
            dst = np.array([rng.randint(n_nodes) for _ in range(n_edges)], dtype=np.int64)
            # dense group ids, the same compaction the attention layer does
            _, groups = np.unique(dst, return_inverse=True)
            n_groups = int(groups.max()) + 1
            alpha = nc.grouped_softmax(scores, groups, n_groups).value
            sums = np.zeros(n_groups)
            np.add.at(sums, groups, alpha)
            assert np.abs(sums - 1.0).max() <= 1e-9, "softmax group sums drift"
            shifted = nc.grouped_softmax(nc.Var(scores.value + 7.5), groups, n_groups).value
            assert np.abs(shifted - alpha).max() <= 1e-9, "not shift invariant"

    def check_oversample_counts():
        rng = nc.RngStream(31)
        labels = np.array([rng.randint(3) for _ in range(90)])
        ids = list(range(90))
        resampled = oversample_minority(ids, labels, seed=5)
        counts = np.bincount(labels[resampled], minlength=3)
        majority = int(np.bincount(labels, minlength=3).max())
        assert counts.tolist() == [majority] * 3, f"counts {counts.tolist()} != {majority}"

    def check_class_weight_identity():
        rng = nc.RngStream(37)
        labels = np.array([rng.randint(3) for _ in range(120)])
        w = class_weights(labels)
        total = float((w[labels]).sum())
        assert abs(total - len(labels)) <= 1e-9, f"sum w*count = {total}"

    def check_metrics_identity():
        rng = nc.RngStream(41)
        for _ in range(20):
            n = 1 + rng.randint(200)
            preds = np.array([rng.randint(3) for _ in range(n)])
            labels = np.array([rng.randint(3) for _ in range(n)])
            m = compute_metrics(preds, labels)
            assert abs(m.weighted_recall - m.accuracy) < 1e-12
            assert m.confusion.sum() == n

    def check_checkpoint_round_trip():
        layer = GATLayerConfig(heads=2, embed_out=3, sent_out=1)
        model = DisagreeGAT(ModelConfig(embed_in=5, layer1=layer, layer2=layer), seed=3)
        back = DisagreeGAT.from_checkpoint(model.to_checkpoint(seed=3))
        for p, q in zip(model.parameters(), back.parameters()):
            assert np.array_equal(p.value, q.value), f"{p.name} not bit-identical"

    checks = [
        ("gradient_check", check_gradients),
        ("attention_normalization", check_attention_normalization),
        ("oversample_counts", check_oversample_counts),
        ("class_weight_identity", check_class_weight_identity),
        ("metrics_identity", check_metrics_identity),
        ("checkpoint_round_trip", check_checkpoint_round_trip),
    ]
    failures = 0
    for name, fn in checks:
        try:
            fn()
        except (AssertionError, ValueError, ArithmeticError) as exc:
            failures += 1
            print(f"FAIL {name}: {exc}")
        else:
            print(f"PASS {name}")
    if failures:
        raise SelfcheckFailure(f"{failures} of {len(checks)} checks failed")


_COMMANDS = {
    "ingest": cmd_ingest,
    "featurize": cmd_featurize,
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "attention": cmd_attention,
    "entity-report": cmd_entity_report,
    "selfcheck": cmd_selfcheck,
}


def _flag(parser, name, **kw):
    parser.add_argument(name, default=None, **kw)


def _bool_flag(parser, name, help):
    parser.add_argument(name, action="store_const", const=True, default=None, help=help)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _flag(common, "--config", metavar="PATH", help="INI config file; flags override its values")
    _flag(common, "--seed", type=int, metavar="N", help="master seed (default 42)")
    _flag(common, "--out", metavar="DIR", help="output dir for artifacts (default ./out)")
    _flag(common, "--format", choices=("csv", "jsonl"), help="pairs file format (default csv)")
    common.add_argument("--verbose", action="store_true", help="debug-level logging")

    parser = argparse.ArgumentParser(
        prog="disagree-gat",
        description="Entity-conditioned (dis)agreement classification over comment-reply pairs.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("ingest", parents=[common], help="validate pairs + entity list, write stats")
    _flag(p, "--pairs", metavar="PATH", help="labeled comment-reply pairs file")
    _flag(p, "--entities", metavar="PATH", help="entity list, one name per line")
    _bool_flag(p, "--filter-entities", help="drop pairs mentioning no listed entity")

    p = sub.add_parser("featurize", parents=[common], help="entity sentiment + embeddings")
    _flag(p, "--pairs", metavar="PATH", help="pairs file (default: <out>/pairs.csv from ingest)")
    _flag(p, "--entities", metavar="PATH", help="entity list, one name per line")
    _flag(p, "--lexicon", metavar="PATH", help="sentiment lexicon: token<TAB>weight lines")
    _flag(p, "--embeddings", metavar="PATH", help="precomputed embeddings (default: hashing fallback)")
    _flag(p, "--mode", choices=("first", "mean"), help="mention aggregation (default first)")

    p = sub.add_parser("build-graph", parents=[common], help="interaction graph + split masks")
    _flag(p, "--pairs", metavar="PATH", help="pairs file (default: <out>/pairs.csv)")
    _flag(p, "--rows", metavar="PATH", help="feature rows CSV (default: <out>/feature_rows.csv)")
    _flag(p, "--embeddings", metavar="PATH", help="embeddings file (default: <out>/embeddings.emb)")
    _bool_flag(p, "--dedup-nodes", help="merge nodes sharing (comment_id, entity)")
    _bool_flag(p, "--group-split", help="keep all samples of a pair_id in one split")

    p = sub.add_parser("train", parents=[common], help="fit the model, save checkpoint + report")
    _flag(p, "--graph", metavar="PATH", help="graph dump (default: <out>/graph.jsonl)")
    _flag(p, "--splits", metavar="PATH", help="split masks (default: <out>/splits.json)")
    _flag(p, "--lr", type=float, metavar="X", help="learning rate (default 1e-3)")
    _flag(p, "--weight-decay", type=float, metavar="X", help="decoupled weight decay (default 5e-4)")
    _flag(p, "--patience", type=int, metavar="N", help="early-stop patience (default 20)")
    _flag(p, "--max-epochs", type=int, metavar="N", help="epoch cap (default 500)")
    _flag(p, "--dropout", type=float, metavar="P", help="attention dropout rate (default 0.5)")
    _flag(p, "--batch", type=_parse_batch, metavar="N|full", help="minibatch size (default full)")
    _flag(p, "--heads", type=int, metavar="K", help="attention heads per layer (default 8)")
    _flag(p, "--embed-out", type=int, metavar="D", help="per-head embedding width (default 6)")
    _flag(p, "--sent-out", type=int, metavar="D", help="per-head sentiment width (default 2)")
    _bool_flag(p, "--static-oversample", help="oversample once instead of per epoch")
    _bool_flag(p, "--append-raw-sentiment", help="append raw sentiment scalars to the classifier input")

    p = sub.add_parser("evaluate", parents=[common], help="test-split metrics from a checkpoint")
    _flag(p, "--graph", metavar="PATH", help="graph dump (default: <out>/graph.jsonl)")
    _flag(p, "--splits", metavar="PATH", help="split masks (default: <out>/splits.json)")
    _flag(p, "--checkpoint", metavar="PATH", help="model checkpoint (default: <out>/checkpoint.json)")

    p = sub.add_parser("ablate", parents=[common], help="full model + 4 feature ablations")
    _flag(p, "--graph", metavar="PATH", help="graph dump (default: <out>/graph.jsonl)")
    _flag(p, "--splits", metavar="PATH", help="split masks (default: <out>/splits.json)")
    _flag(p, "--max-epochs", type=int, metavar="N", help="epoch cap (default 500)")
    _flag(p, "--heads", type=int, metavar="K", help="attention heads per layer (default 8)")
    _flag(p, "--embed-out", type=int, metavar="D", help="per-head embedding width (default 6)")
    _flag(p, "--sent-out", type=int, metavar="D", help="per-head sentiment width (default 2)")
    _bool_flag(p, "--static-oversample", help="oversample once instead of per epoch")
    _bool_flag(p, "--append-raw-sentiment", help="append raw sentiment scalars to the classifier input")

    p = sub.add_parser("attention", parents=[common], help="per-edge attention records + histogram")
    _flag(p, "--graph", metavar="PATH", help="graph dump (default: <out>/graph.jsonl)")
    _flag(p, "--checkpoint", metavar="PATH", help="model checkpoint (default: <out>/checkpoint.json)")
    _flag(p, "--bins", type=int, metavar="N", help="histogram bins (default 20)")

    p = sub.add_parser("entity-report", parents=[common], help="per-entity label/sentiment table")
    _flag(p, "--pairs", metavar="PATH", help="pairs file (default: <out>/pairs.csv)")
    _flag(p, "--rows", metavar="PATH", help="feature rows CSV (default: <out>/feature_rows.csv)")
    _flag(p, "--attention", metavar="PATH", help="attention records CSV from `attention`")
    _flag(p, "--categories", metavar="PATH", help="entity,category CSV for category-mean attention")
    _flag(p, "--top-n", type=int, metavar="N", help="keep the N most frequent entities (default 30)")
    _flag(p, "--sort", choices=("frequency", "disagreement"), help="row order (default frequency)")

    sub.add_parser("selfcheck", parents=[common], help="gradient check and invariant suite")

    return parser


def _apply_thread_cap() -> None:
    cap = os.environ.get(_THREAD_ENV)
    if cap is None:
        return
    if not cap.isdigit() or int(cap) < 1:
        raise ConfigError(f"{_THREAD_ENV} must be a positive integer, got {cap!r}")
    for var in _BLAS_VARS:
        os.environ.setdefault(var, cap)


def _emit_error(exc: Exception) -> None:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)


def main(argv=None) -> int:
    try:
        _apply_thread_cap()
    except ConfigError as exc:
        _emit_error(exc)
        return 2
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve_config(args)
        out = _prepare_out_dir(cfg)
        _dump_resolved_config(cfg, args.command, out)
        _COMMANDS[args.command](cfg, out)
    except StageInputMissing as exc:
        _emit_error(exc)
        return 3
    except ConfigError as exc:
        _emit_error(exc)
        return 2
    except SelfcheckFailure as exc:
        _emit_error(exc)
        return 1
    except (ValueError, OSError, ArithmeticError) as exc:
        _emit_error(exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
