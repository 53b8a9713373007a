"""Training loop behaviour: early stopping, determinism, checkpoints."""

import json

import numpy as np
import pytest

from disagree_gat import evaluation as ev
from disagree_gat import train as tr
from disagree_gat.gat import DisagreeGAT, GATLayerConfig, ModelConfig, SchemaMismatch
from disagree_gat.graph import split_masks, synthetic_graph
from disagree_gat.nncore import RngStream


def tiny_model_config(**kw):
    base = dict(
        embed_in=5,
        layer1=GATLayerConfig(heads=2, embed_out=3, sent_out=1, dropout=0.5),
        layer2=GATLayerConfig(heads=2, embed_out=3, sent_out=1, dropout=0.5),
        append_raw_sentiment=True,
    )
    base.update(kw)
    return ModelConfig(**base)


def tiny_graph(n=24, seed=3):
    rng = RngStream(seed)
    pe = rng.uniform_array((n, 5)) - 0.5
    ce = rng.uniform_array((n, 5)) - 0.5
    ps = np.array([rng.uniform() * 2 - 1 for _ in range(n)])
    cs = np.array([rng.uniform() * 2 - 1 for _ in range(n)])
    labels = [rng.randint(3) for _ in range(n)]
    return synthetic_graph(pe, ps, ce, cs, labels)


class TestEarlyStopper:
    def test_halts_exactly_patience_after_last_improvement(self):
        stopper = tr.EarlyStopper(patience=20)
        assert stopper.update(0.5)  # epoch 1 improves
        stopped_at = None
        for epoch in range(2, 100):
            stopper.update(0.5)  # never improves again
            if stopper.should_stop:
                stopped_at = epoch
                break
        assert stopped_at == 21

    def test_improvement_resets_counter(self):
        stopper = tr.EarlyStopper(patience=3)
        stopper.update(1.0)
        stopper.update(1.0)
        assert stopper.update(0.9)  # reset
        for _ in range(2):
            stopper.update(0.9)
            assert not stopper.should_stop
        stopper.update(0.9)
        assert stopper.should_stop
        assert stopper.best == 0.9

    def test_tolerance_gate(self):
        stopper = tr.EarlyStopper(patience=2)
        stopper.update(0.5)
        # smaller but within tolerance: not an improvement
        assert not stopper.update(0.5 - 1e-8)
        assert stopper.update(0.5 - 1e-3)


class TestFit:
    def test_constant_loss_stops_after_one_plus_patience(self):
        # lr=0 freezes the parameters, so validation loss is bitwise
        # constant: epoch 1 improves over inf, nothing after
        graph = tiny_graph()
        masks = split_masks(graph, seed=0)
        cfg = tr.TrainConfig(seed=1, lr=0.0, patience=20, max_epochs=100, dropout=0.0)
        model = DisagreeGAT(tiny_model_config(), seed=1)
        ckpt, report = tr.fit(model, graph, masks, cfg)
        assert report.epochs_run == 21
        assert report.best_epoch == 1
        assert report.stop_reason == "early_stop"
        assert len(report.val_loss) == 21
        assert all(v == report.val_loss[0] for v in report.val_loss)

    def test_max_epochs_stop_reason(self):
        graph = tiny_graph()
        masks = split_masks(graph, seed=0)
        cfg = tr.TrainConfig(seed=1, patience=50, max_epochs=3)
        model = DisagreeGAT(tiny_model_config(), seed=1)
        ckpt, report = tr.fit(model, graph, masks, cfg)
        assert report.epochs_run == 3
        assert report.stop_reason == "max_epochs"

    def test_bitwise_determinism_across_runs(self):
        graph = tiny_graph()
        masks = split_masks(graph, seed=0)
        cfg = tr.TrainConfig(seed=9, max_epochs=6, patience=50)
        outs = []
        for _ in range(2):
            model = DisagreeGAT(tiny_model_config(), seed=9)
            ckpt, report = tr.fit(model, graph, masks, cfg)
            outs.append((json.dumps(ckpt, sort_keys=True), report.train_loss, report.val_loss))
        assert outs[0][0] == outs[1][0]
        assert outs[0][1] == outs[1][1]
        assert outs[0][2] == outs[1][2]

    def test_seed_changes_trajectory(self):
        graph = tiny_graph()
        masks = split_masks(graph, seed=0)
        losses = []
        for seed in (1, 2):
            cfg = tr.TrainConfig(seed=seed, max_epochs=4, patience=50)
            model = DisagreeGAT(tiny_model_config(), seed=seed)
            _, report = tr.fit(model, graph, masks, cfg)
            losses.append(tuple(report.train_loss))
        assert losses[0] != losses[1]

    def test_best_epoch_weights_restored(self):
        graph = tiny_graph()
        masks = split_masks(graph, seed=0)
        cfg = tr.TrainConfig(seed=5, max_epochs=8, patience=50)
        model = DisagreeGAT(tiny_model_config(), seed=5)
        ckpt, report = tr.fit(model, graph, masks, cfg)
        assert ckpt["params"] == model.to_checkpoint(seed=cfg.seed)["params"]
        assert report.best_epoch == int(np.argmin(report.val_loss)) + 1

    def test_batched_matches_report_lengths(self):
        graph = tiny_graph()
        masks = split_masks(graph, seed=0)
        cfg = tr.TrainConfig(seed=4, max_epochs=3, patience=50, batch_size=8)
        model = DisagreeGAT(tiny_model_config(), seed=4)
        _, report = tr.fit(model, graph, masks, cfg)
        assert len(report.train_loss) == len(report.val_loss) == report.epochs_run == 3

    def test_static_oversample_mode_runs(self):
        graph = tiny_graph()
        masks = split_masks(graph, seed=0)
        cfg = tr.TrainConfig(seed=4, max_epochs=2, patience=50, static_oversample=True)
        model = DisagreeGAT(tiny_model_config(), seed=4)
        _, report = tr.fit(model, graph, masks, cfg)
        assert report.epochs_run == 2

    def test_config_validation(self):
        with pytest.raises(ValueError):
            tr.TrainConfig(patience=0)
        with pytest.raises(ValueError):
            tr.TrainConfig(max_epochs=0)


class TestCheckpointIo:
    def test_save_load_round_trip_bitwise(self, tmp_path):
        model = DisagreeGAT(tiny_model_config(), seed=2)
        path = tmp_path / "model.json"
        tr.save_checkpoint(model, path, seed=2)
        restored = tr.load_checkpoint(path)
        for a, b in zip(model.parameters(), restored.parameters()):
            np.testing.assert_array_equal(a.value, b.value)

    def test_file_byte_identical_across_saves(self, tmp_path):
        model = DisagreeGAT(tiny_model_config(), seed=2)
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        tr.save_checkpoint(model, p1, seed=2)
        tr.save_checkpoint(model, p2, seed=2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_file(self, tmp_path):
        model = DisagreeGAT(tiny_model_config(), seed=2)
        path = tmp_path / "model.json"
        tr.save_checkpoint(model, path, seed=2)
        path.write_bytes(path.read_bytes()[: path.stat().st_size // 2])
        with pytest.raises(SchemaMismatch):
            tr.load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(tr.Io):
            tr.load_checkpoint(tmp_path / "absent.json")

    def test_unwritable_path(self, tmp_path):
        model = DisagreeGAT(tiny_model_config(), seed=2)
        with pytest.raises(tr.Io):
            tr.save_checkpoint(model, tmp_path / "no" / "dir" / "m.json")


class TestTrainReportOutput:
    def test_csv_and_summary(self, tmp_path):
        graph = tiny_graph()
        masks = split_masks(graph, seed=0)
        cfg = tr.TrainConfig(seed=3, max_epochs=2, patience=50)
        model = DisagreeGAT(tiny_model_config(), seed=3)
        _, report = tr.fit(model, graph, masks, cfg)
        csv_path = tmp_path / "train.csv"
        json_path = tmp_path / "train.json"
        tr.write_train_report(report, csv_path, json_path)
        lines = csv_path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "epoch,train_loss,val_loss,val_macro_f1"
        assert len(lines) == 3
        assert lines[1].split(",")[0] == "1"
        summary = json.loads(json_path.read_text(encoding="utf-8"))
        assert summary["epochs_run"] == 2
        assert summary["stop_reason"] == "max_epochs"
        assert summary["best_val_loss"] == min(report.val_loss)


class TestRunAblation:
    def test_full_variant_matches_direct_pipeline(self):
        graph = tiny_graph()
        masks = split_masks(graph, seed=0)
        tcfg = tr.TrainConfig(seed=6, max_epochs=3, patience=50)
        mcfg = tiny_model_config()
        m1, _ = ev.run_ablation(graph, masks, tcfg, mcfg, "full")

        model = DisagreeGAT(mcfg, seed=tcfg.seed)
        tr.fit(model, graph, masks, tcfg)
        preds, _ = model.predict(graph)
        test_ids = sorted(masks.test)
        m2 = ev.compute_metrics(preds[test_ids], graph.labels_array()[test_ids])
        np.testing.assert_array_equal(m1.confusion, m2.confusion)

    def test_ablation_csv_header(self, tmp_path):
        results = {}
        graph = tiny_graph(n=18)
        masks = split_masks(graph, seed=0)
        tcfg = tr.TrainConfig(seed=6, max_epochs=1, patience=50)
        mcfg = tiny_model_config()
        for variant in ("full", "no_parent_embed", "no_child_embed", "no_parent_sent", "no_child_sent"):
            results[variant], _ = ev.run_ablation(graph, masks, tcfg, mcfg, variant)
        path = tmp_path / "ablation.csv"
        ev.write_ablation_csv(results, path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "metric,full,no_parent_embed,no_child_embed,no_parent_sent,no_child_sent"
        assert [ln.split(",")[0] for ln in lines[1:]] == list(ev.ABLATION_METRIC_ROWS)
