import json

import numpy as np
import pytest

from beliefkit.data import BeliefDataset, gen_blob_points, make_ranked_pairs, write_beliefs
from beliefkit.diffcore import Tensor
from beliefkit.exceptions import ContractError, DegenerateBatchError, DimensionError
from beliefkit.harness import (
    TrainConfig,
    TrainingDiverged,
    cluster_to_label,
    evaluate,
    evaluate_r,
    predict_proba,
    roc_auc,
    train,
    train_scene,
)
from beliefkit.harness.cli import main
from beliefkit.harness.metrics import worker_count
from beliefkit.losses import DistributionBatch
from beliefkit.models import ModelSpec, build_model


class _Identity:
    """Stands in for a model: inputs are already probability rows."""

    def __call__(self, t):
        return t


class TestWorkerCount:
    def test_unset_is_serial(self, monkeypatch):
        monkeypatch.delenv("BELIEFKIT_THREADS", raising=False)
        assert worker_count() == 0

    def test_parses_positive(self, monkeypatch):
        monkeypatch.setenv("BELIEFKIT_THREADS", "4")
        assert worker_count() == 4

    def test_garbage_and_negative_fall_back(self, monkeypatch):
        monkeypatch.setenv("BELIEFKIT_THREADS", "lots")
        assert worker_count() == 0
        monkeypatch.setenv("BELIEFKIT_THREADS", "-2")
        assert worker_count() == 0


class TestPredictProba:
    def test_batches_reassemble_in_order(self):
        rows = np.random.default_rng(0).dirichlet(np.ones(3), size=10)
        out = predict_proba(_Identity(), rows, batch_size=3)
        np.testing.assert_array_equal(out, rows)

    def test_threaded_matches_serial(self, monkeypatch):
        rows = np.random.default_rng(1).dirichlet(np.ones(4), size=20)
        serial = predict_proba(_Identity(), rows, batch_size=4)
        monkeypatch.setenv("BELIEFKIT_THREADS", "3")
        threaded = predict_proba(_Identity(), rows, batch_size=4)
        np.testing.assert_array_equal(serial, threaded)

    def test_raster_outputs_flatten_to_rows(self):
        class _Raster:
            def __call__(self, t):
                return Tensor(t.data.reshape(-1, 2, 2, 3))

        flat = np.random.default_rng(2).dirichlet(np.ones(3), size=4 * 4).reshape(4, 12)
        out = predict_proba(_Raster(), flat, batch_size=2)
        assert out.shape == (16, 3)
        np.testing.assert_array_equal(out, flat.reshape(16, 3))


class TestEvaluate:
    def test_hand_iou_case(self):
        q = np.array([[0.9, 0.1], [0.8, 0.2], [0.3, 0.7], [0.2, 0.8]])
        report = evaluate(_Identity(), q, np.array([0, 1, 1, 1]))
        assert report.accuracy == 0.75
        np.testing.assert_array_equal(report.confusion, [[1, 0], [1, 2]])
        np.testing.assert_allclose(report.per_class_iou, [0.5, 2.0 / 3.0], rtol=1e-12)
        np.testing.assert_allclose(report.mean_iou, 7.0 / 12.0, rtol=1e-12)

    def test_tie_goes_to_lowest_class(self):
        report = evaluate(_Identity(), np.array([[0.5, 0.5]]), np.array([0]))
        assert report.accuracy == 1.0

    def test_absent_class_iou_is_nan(self):
        q = np.array([[0.9, 0.1], [0.2, 0.8]])
        report = evaluate(_Identity(), q, np.array([0, 1]), l=3)
        assert np.isnan(report.per_class_iou[2])
        np.testing.assert_allclose(report.mean_iou, 1.0, rtol=1e-12)

    def test_length_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            evaluate(_Identity(), np.full((2, 2), 0.5), np.array([0, 1, 0]))


class TestEvaluateR:
    def test_posterior_can_correct_raw_argmax(self):
        q = np.array([[0.55, 0.45], [0.9, 0.1]])
        priors = np.array([[0.1, 0.9], [0.5, 0.5]])
        labels = np.array([1, 0])
        assert evaluate(_Identity(), q, labels).accuracy == 0.5
        assert evaluate_r(_Identity(), priors, q, labels).accuracy == 1.0

    def test_raster_priors_flatten(self):
        q = np.array([[0.55, 0.45], [0.9, 0.1]])
        priors = np.array([[0.1, 0.9], [0.5, 0.5]]).reshape(1, 2, 2)
        report = evaluate_r(_Identity(), priors, q, np.array([1, 0]))
        assert report.accuracy == 1.0


class TestRocAuc:
    def test_hand_case(self):
        # positive 0.35 beats one negative of two; positive 0.8 beats both
        auc = roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
        np.testing.assert_allclose(auc, 0.75, rtol=1e-12)

    def test_tie_counts_half(self):
        auc = roc_auc([0.2, 0.5, 0.5, 0.9], [0, 0, 1, 1])
        np.testing.assert_allclose(auc, 0.875, rtol=1e-12)

    def test_perfect_and_reversed(self):
        assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert roc_auc([0.8, 0.9, 0.1, 0.2], [0, 0, 1, 1]) == 0.0

    def test_matches_pair_counting(self):
        rng = np.random.default_rng(3)
        scores = rng.integers(0, 6, size=40) / 4.0  # coarse grid forces ties
        labels = rng.integers(0, 2, size=40)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        wins = 0.0
        pos, neg = scores[labels == 1], scores[labels == 0]
        for s in pos:
            for t in neg:
                wins += 1.0 if s > t else (0.5 if s == t else 0.0)
        np.testing.assert_allclose(
            roc_auc(scores, labels), wins / (len(pos) * len(neg)), rtol=1e-12
        )

    def test_single_class_rejected(self):
        with pytest.raises(DegenerateBatchError):
            roc_auc([0.1, 0.9], [1, 1])

    def test_length_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            roc_auc([0.1], [1, 0])


class TestClusterToLabel:
    def test_hand_mapping(self):
        q = np.array([[0.9, 0.1], [0.8, 0.2], [0.2, 0.8], [0.1, 0.9]])
        mapping, pred = cluster_to_label(q, [0, 3], [1, 0])
        np.testing.assert_allclose(mapping, [[0.1, 0.9], [0.9, 0.1]], rtol=1e-12)
        np.testing.assert_array_equal(pred, [1, 1, 0, 0])

    def test_dead_cluster_warns_and_drops(self):
        q = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
        with pytest.warns(UserWarning, match=r"clusters \[2\]"):
            mapping, pred = cluster_to_label(q, [0, 1], [0, 1])
        np.testing.assert_array_equal(mapping[:, 2], [0.0, 0.0])
        np.testing.assert_array_equal(pred, [0, 1, 0])

    def test_explicit_class_count(self):
        q = np.array([[1.0, 0.0], [0.0, 1.0]])
        mapping, _ = cluster_to_label(q, [0, 1], [0, 1], n_classes=4)
        assert mapping.shape == (4, 2)

    def test_empty_labeled_set_rejected(self):
        with pytest.raises(ContractError):
            cluster_to_label(np.full((2, 2), 0.5), [], [])

    def test_length_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            cluster_to_label(np.full((2, 2), 0.5), [0, 1], [0])


def _blob_setup(n=60, classes=2, seed=0):
    points, labels = gen_blob_points(n, classes, seed=seed, separation=6.0)
    spec = ModelSpec(kind="logistic", classes=classes, in_dim=2, seed=seed)
    return points, labels, spec


class TestTrainConfigValidation:
    @pytest.mark.parametrize(
        "kw",
        [
            {"loss": "hinge"},
            {"lr": -1.0},
            {"batch_size": 0},
            {"epochs": 0},
            {"smoothing": 0.0},
            {"warmup_epochs": -1},
            {"loss": "pair_rq", "warmup_epochs": 1},
            {"loss": "diverse", "warmup_epochs": 1},
            {"prior_refresh": 0},
            {"eval_every": 0},
        ],
    )
    def test_bad_values_rejected(self, kw):
        with pytest.raises(ContractError):
            TrainConfig(**kw)

    def test_to_dict_serializes_model(self):
        spec = ModelSpec(kind="mlp", classes=2, in_dim=3, widths=(4,))
        d = TrainConfig(model=spec).to_dict()
        assert d["model"]["widths"] == [4]
        assert d["loss"] == "rq"


class TestTrainLoop:
    def test_zero_lr_keeps_ce_epoch_loss_constant(self):
        points, labels, spec = _blob_setup()
        onehot = np.eye(2)[labels]
        model = build_model(spec)
        cfg = TrainConfig(loss="ce", lr=0.0, batch_size=16, epochs=4, seed=0, model=spec)
        result = train(model, points, onehot, cfg)
        losses = [r.loss for r in result.history]
        np.testing.assert_allclose(losses, [losses[0]] * 4, rtol=1e-12)

    def test_rerun_is_bit_identical(self):
        points, labels, spec = _blob_setup()
        onehot = np.eye(2)[labels]
        finals = []
        for _ in range(2):
            model = build_model(spec)
            cfg = TrainConfig(loss="rq", lr=1e-2, batch_size=20, epochs=3, seed=5, model=spec)
            result = train(model, points, onehot, cfg)
            finals.append((model.w.data.copy(), [r.loss for r in result.history]))
        np.testing.assert_array_equal(finals[0][0], finals[1][0])
        assert finals[0][1] == finals[1][1]

    def test_non_finite_input_aborts_with_snapshot(self):
        points, labels, spec = _blob_setup()
        points = points.copy()
        points[0, 0] = np.nan
        model = build_model(spec)
        cfg = TrainConfig(loss="ce", lr=1e-2, batch_size=60, epochs=2, seed=0, model=spec)
        with pytest.raises(TrainingDiverged) as exc:
            train(model, points, np.eye(2)[labels], cfg)
        assert exc.value.epoch == 1 and exc.value.batch == 0
        assert "non-finite" in str(exc.value)

    def test_batch_loss_count(self):
        points, labels, spec = _blob_setup(n=50)
        model = build_model(spec)
        cfg = TrainConfig(loss="ce", lr=1e-3, batch_size=20, epochs=3, seed=0, model=spec)
        result = train(model, points, np.eye(2)[labels], cfg)
        assert len(result.batch_losses) == 3 * 3  # ceil(50 / 20) batches per epoch

    def test_eval_cadence(self):
        points, labels, spec = _blob_setup()
        model = build_model(spec)
        cfg = TrainConfig(loss="ce", lr=1e-3, batch_size=30, epochs=5, seed=0,
                          model=spec, eval_every=2)
        result = train(model, points, np.eye(2)[labels], cfg,
                       eval_test=(points, labels))
        has_acc = [np.isfinite(r.test_acc) for r in result.history]
        assert has_acc == [False, True, False, True, True]
        assert result.final_test is not None and result.final_train is None

    def test_warmup_epochs_run(self):
        points, labels, spec = _blob_setup()
        model = build_model(spec)
        cfg = TrainConfig(loss="rq", lr=1e-2, batch_size=30, epochs=2, seed=0,
                          model=spec, warmup_epochs=1)
        result = train(model, points, np.eye(2)[labels], cfg)
        assert len(result.history) == 2

    def test_pair_loop_smoke(self):
        points, labels, spec = _blob_setup(n=40, classes=2)
        pairs = make_ranked_pairs(labels, seed=2)
        model = build_model(spec)
        cfg = TrainConfig(loss="pair_rq", lr=1e-2, batch_size=10, epochs=3, seed=0, model=spec)
        result = train(model, points, pairs, cfg, eval_test=(points, labels))
        assert len(result.history) == 3
        assert result.final_test is not None

    def test_supervision_contracts(self):
        points, labels, spec = _blob_setup(n=10)
        model = build_model(spec)
        cfg = TrainConfig(loss="diverse", lr=1e-3, batch_size=10, epochs=1, model=spec)
        with pytest.raises(ContractError):
            train(model, points, np.eye(2)[labels], cfg)
        cfg = TrainConfig(loss="nll_union", lr=1e-3, batch_size=10, epochs=1, model=spec)
        with pytest.raises(ContractError):
            train(model, points, np.eye(2)[labels], cfg)  # float mask, not bool
        cfg = TrainConfig(loss="rq", lr=1e-3, batch_size=10, epochs=1, model=spec)
        with pytest.raises(ContractError):
            train(model, points, np.eye(2)[labels][:4], cfg)
        with pytest.raises(ContractError):
            train(model, points[:0], np.zeros((0, 2)), cfg)
        cfg = TrainConfig(loss="pair_rq", lr=1e-3, batch_size=10, epochs=1, model=spec)
        with pytest.raises(ContractError):
            train(model, points, np.eye(2)[labels], cfg)


def _scene_setup(h=8, w=8):
    rng = np.random.default_rng(4)
    image = rng.random((1, h, w))
    labels = (np.arange(h * w).reshape(h, w) % 2).astype(np.int64)
    prior = np.where(labels[..., None] == np.arange(2), 0.7, 0.3)
    spec = ModelSpec(kind="patch_fcn", classes=2, in_channels=1, widths=(4, 2), seed=0)
    return image, labels, prior, spec


class TestTrainScene:
    def test_runs_and_scales_loss_per_pixel(self):
        image, labels, prior, spec = _scene_setup()
        model = build_model(spec)
        cfg = TrainConfig(loss="qr", lr=1e-3, batch_size=1, epochs=3, model=spec, eval_every=2)
        result = train_scene(model, image, prior, cfg, eval_labels=labels)
        assert len(result.history) == 3
        np.testing.assert_allclose(
            result.history[0].loss, result.batch_losses[0] / 64.0, rtol=1e-12
        )
        finite = [np.isfinite(r.train_acc) for r in result.history]
        assert finite == [False, True, True]

    def test_zero_lr_is_stationary(self):
        image, labels, prior, spec = _scene_setup()
        model = build_model(spec)
        cfg = TrainConfig(loss="rq", lr=0.0, batch_size=1, epochs=3, model=spec)
        result = train_scene(model, image, prior, cfg)
        assert result.batch_losses[0] == result.batch_losses[1] == result.batch_losses[2]

    def test_self_similarity_refresh_smoke(self):
        from beliefkit.beliefs import SelfSimilarityParams

        image, labels, prior, spec = _scene_setup()
        model = build_model(spec)
        cfg = TrainConfig(loss="rq", lr=1e-3, batch_size=1, epochs=4, model=spec,
                          prior_refresh=2)
        params = SelfSimilarityParams.contrastive(2, 3, 5)
        result = train_scene(model, image, prior, cfg, selfsim=params)
        assert len(result.history) == 4

    def test_warmup_steps_use_cross_entropy(self):
        image, labels, prior, spec = _scene_setup()
        ce_cfg = TrainConfig(loss="ce", lr=1e-3, batch_size=1, epochs=2, model=spec)
        ce_losses = train_scene(build_model(spec), image, prior, ce_cfg).batch_losses
        warm_cfg = TrainConfig(loss="qr", lr=1e-3, batch_size=1, epochs=4, model=spec,
                               warmup_epochs=2)
        warm_losses = train_scene(build_model(spec), image, prior, warm_cfg).batch_losses
        assert warm_losses[:2] == ce_losses
        assert warm_losses[2] != ce_losses[1]

    def test_loss_kind_guard(self):
        image, labels, prior, spec = _scene_setup()
        model = build_model(spec)
        cfg = TrainConfig(loss="nll_union", lr=1e-3, batch_size=1, epochs=1, model=spec)
        with pytest.raises(ContractError):
            train_scene(model, image, prior, cfg)

    def test_prior_cover_guard(self):
        image, labels, prior, spec = _scene_setup()
        model = build_model(spec)
        cfg = TrainConfig(loss="qr", lr=1e-3, batch_size=1, epochs=1, model=spec)
        with pytest.raises(ContractError):
            train_scene(model, image, prior[:4], cfg)


def _write_blob_beliefs(path, n=80, seed=0, labels=True):
    points, truth = gen_blob_points(n, 2, seed=seed, separation=6.0)
    priors = np.where(np.eye(2)[truth] > 0, 0.9, 0.1)
    ds = BeliefDataset(
        features=points.astype(np.float32),
        priors=DistributionBatch(priors, role="prior"),
        labels=truth if labels else None,
    )
    write_beliefs(path, ds)
    return points, truth


class TestCli:
    def test_unknown_subcommand_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_missing_required_flag_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            main(["cluster"])  # --out is required
        assert exc.value.code == 2

    def test_runtime_failure_exits_one(self, tmp_path, capsys):
        code = main(["mnist-partial", "--data", str(tmp_path / "void"),
                     "--out", str(tmp_path / "run")])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_make_prior_rank_table(self, tmp_path, capsys):
        out = tmp_path / "rank.csv"
        assert main(["make-prior", "--kind", "rank", "--out", str(out)]) == 0
        table = np.loadtxt(out, delimiter=",")
        assert table.shape == (10, 10)
        nz = table > 0
        assert nz.sum() == 55
        np.testing.assert_allclose(table[nz], np.full(55, 1.0 / 55.0), rtol=1e-12)

    def test_make_prior_coarse_raster(self, tmp_path):
        coarse = tmp_path / "coarse.csv"
        cooc = tmp_path / "cooc.csv"
        raster = np.zeros((4, 4), dtype=int)
        raster[2:] = 1
        np.savetxt(coarse, raster, fmt="%d", delimiter=",")
        np.savetxt(cooc, np.array([[6.0, 2.0], [1.0, 7.0]]), delimiter=",")
        out = tmp_path / "prior.npy"
        assert main(["make-prior", "--kind", "coarse", "--coarse", str(coarse),
                     "--cooc", str(cooc), "--sigma", "1.0", "--out", str(out)]) == 0
        prior = np.load(out)
        assert prior.shape == (4, 4, 2)
        np.testing.assert_allclose(prior.sum(axis=-1), np.ones((4, 4)), rtol=1e-12)

    def test_make_prior_debias_round_trip(self, tmp_path):
        src = tmp_path / "in.jsonl"
        _write_blob_beliefs(src)
        out = tmp_path / "out.jsonl"
        assert main(["make-prior", "--kind", "debias", "--beliefs", str(src),
                     "--out", str(out)]) == 0
        from beliefkit.data import read_beliefs

        back = read_beliefs(out)
        np.testing.assert_allclose(back.priors.values.sum(axis=1), 1.0, atol=1e-6)

    def test_train_then_eval_round_trip(self, tmp_path):
        beliefs = tmp_path / "b.jsonl"
        _write_blob_beliefs(beliefs)
        run = tmp_path / "run"
        assert main(["train", "--beliefs", str(beliefs), "--loss", "ce",
                     "--epochs", "5", "--batch", "16", "--lr", "0.05",
                     "--out", str(run)]) == 0
        assert (run / "metrics.csv").exists() and (run / "model.bkpt").exists()
        config = json.loads((run / "config.json").read_text())
        assert config["command"] == "train"
        ev = tmp_path / "eval"
        assert main(["eval", "--checkpoint", str(run / "model.bkpt"),
                     "--beliefs", str(beliefs), "--out", str(ev)]) == 0
        summary = json.loads((ev / "summary.json").read_text())
        assert summary["accuracy"] > 0.9

    def test_cluster_rerun_is_byte_identical(self, tmp_path):
        argv = ["cluster", "--n", "60", "--epochs", "5", "--labeled-points", "5",
                "--eval-every", "5"]
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(argv + ["--out", str(a)]) == 0
        assert main(argv + ["--out", str(b)]) == 0
        assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
        assert (a / "model.bkpt").read_bytes() == (b / "model.bkpt").read_bytes()

    def test_segment_synth_smoke(self, tmp_path):
        run = tmp_path / "seg"
        assert main(["segment-synth", "--size", "16", "--filters", "4",
                     "--layers", "2", "--epochs", "2", "--lr", "1e-3",
                     "--out", str(run)]) == 0
        lines = (run / "metrics.csv").read_text().splitlines()
        assert lines[0] == "epoch,loss,train_acc,test_acc"
        assert len(lines) == 3
        summary = json.loads((run / "summary.json").read_text())
        assert {"pixel_agreement", "prediction_entropy", "prior_entropy"} <= set(summary)
