import itertools
import json

import numpy as np
import pytest

import wps_sam as w


def tiny_config():
    cfg = w.Config.desk_scale()
    cfg.image_size = 64
    cfg.embed_dim = 16
    cfg.num_heads = 4
    cfg.encoder_layers = 1
    cfg.decoder_layers = 1
    cfg.num_queries = 5
    cfg.epochs = 2
    cfg.batch_size = 4
    return cfg.validate()


def test_config_roundtrip_and_errors():
    cfg = w.Config.desk_scale()
    assert w.Config.parse(cfg.serialize()) == cfg
    assert len(cfg.hash()) == 16
    cfg.embed_dim = 30
    with pytest.raises(w.WpsError) as err:
        cfg.validate()
    assert err.value.code == 10
    assert err.value.name == "InvalidConfig"


def test_hungarian_matches_brute_force():
    rng = np.random.default_rng(3)
    for n in range(1, 6):
        c = rng.uniform(-10, 10, size=(n, n))
        perm, cost = w.hungarian_assign(c)
        best = min(sum(c[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))
        assert cost == pytest.approx(best, abs=1e-12)
        assert sorted(perm) == list(range(n))


def test_loss_is_order_invariant():
    cfg = w.Config.desk_scale()
    cfg.num_queries, cfg.num_categories, cfg.embed_dim, cfg.num_heads = 4, 3, 8, 2
    rng = np.random.default_rng(5)
    real = [w.TeacherTarget(c, rng.normal(size=8)) for c in (0, 2)]
    pad = [w.TeacherTarget(3) for _ in range(2)]
    logits = rng.normal(size=(4, 4))
    tokens = rng.normal(size=(4, 8))
    a = w.total_loss(w.TargetSet(real + pad, 2), logits, tokens, cfg)
    b = w.total_loss(w.TargetSet(real[::-1] + pad, 2), logits, tokens, cfg)
    assert a["total"] == pytest.approx(b["total"], abs=1e-9)
    assert a["total"] == pytest.approx(a["cls"] + a["reg"], abs=1e-12)
    g_logits, g_tokens = w.loss_gradients(w.TargetSet(real + pad, 2), logits, tokens, cfg)
    assert g_logits.shape == (4, 4) and g_tokens.shape == (4, 8)


def test_synthetic_taint_guard():
    data = w.generate_synthetic(4, 3, 4, 64, 1)
    rec = data.records[0]
    assert rec.image.shape == (64, 64, 3)
    assert rec.has_mask
    with pytest.raises(w.WpsError) as err:
        rec.ground_truth()
    assert err.value.code == 24
    gt = w.evaluation_scope(rec.ground_truth)
    assert gt.shape == (64, 64)


def test_oracle_prediction_matches_ground_truth():
    cfg = w.Config.desk_scale()
    data = w.generate_synthetic(3, 3, 4, 128, 2)
    backend, teacher = w.MockBackend(cfg), w.Teacher(cfg)
    for rec in data.records:
        pred = w.oracle_predict(rec.image, rec.weak_labels, backend, teacher, cfg)
        gt = w.evaluation_scope(rec.ground_truth)
        assert (pred == gt).mean() > 0.99


def test_metrics():
    gt = np.array([[0, 0], [1, 3]])
    pred = np.array([[0, 1], [1, 3]])
    miou, macc = w.segmentation_metrics(gt, pred, 3)
    assert miou == pytest.approx((0.5 + 0.5) / 2)
    assert macc == pytest.approx((0.5 + 1.0) / 2)


def test_train_predict_evaluate(tmp_path):
    cfg = tiny_config()
    data = w.generate_synthetic(8, 3, 4, 64, 4)
    backend, teacher = w.MockBackend(cfg), w.Teacher(cfg)
    examples = w.prepare_examples(data, backend, teacher, cfg)
    seen = []
    state = w.fit(examples, cfg, 0, loss_log=str(tmp_path / "loss.csv"), on_epoch=seen.append)
    assert [r.epoch for r in seen] == [1, 2]
    assert len(state.history) == 2
    assert all(np.isfinite(r.total) for r in state.history)
    pred = w.predict(data.records[0].image, state.params, backend, cfg)
    assert pred.shape == (64, 64)
    report = w.evaluate_student(data, state.params, backend, cfg)
    assert 0.0 <= report.miou <= 1.0
    assert json.loads(report.to_json())["num_images"] == 8
    path = str(tmp_path / "final.ckpt")
    state.save(path)
    again = w.load_checkpoint(path)
    assert again.epoch == 2


def test_python_predictor_cannot_read_ground_truth():
    cfg = w.Config.desk_scale()
    data = w.generate_synthetic(2, 3, 4, 128, 6)
    with pytest.raises(w.WpsError) as err:
        w.evaluate(data, lambda rec: rec.ground_truth(), cfg)
    assert err.value.code == 24
    report = w.evaluate(data, lambda rec: np.full((128, 128), 3), cfg)
    assert report.miou == 0.0


def test_cli_usage_exit_code():
    assert w.run_cli(["bogus"]) == 2
