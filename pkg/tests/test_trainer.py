from dataclasses import replace

import numpy as np
import pytest

from logicloss.batcher import group_families
from logicloss.kb import builtin_kb
from logicloss.metrics import evaluate
from logicloss.synthetic import (SyntheticConfig, SyntheticWorld, answer_vocabulary, feature_dim,
                                 generate_synthetic, questions_for, split_by_image)
from logicloss.trainer import (CURVE_COLUMNS, MODES, ModelParams, ShapeMismatch, TrainConfig, _softmax,
                               check_parameter_gradients, forward, init_params, load_checkpoint, predict,
                               save_checkpoint, train, write_curves)

KB = builtin_kb()


@pytest.fixture(scope="module")
def small():
    return generate_synthetic(60, seed=5)


@pytest.fixture(scope="module")
def reference():
    return generate_synthetic(1000, seed=42)


def params_for(records, seed=0):
    return init_params(len(records[0].features), answer_vocabulary(), KB.task_names, seed=seed)


def test_softmax_and_zero_weights(small):
    p = params_for(small)
    fwd = forward(p, [r.features for r in small[:10]])
    assert np.allclose(fwd.answer_probs.sum(1), 1.0, atol=1e-6)
    assert np.allclose(fwd.task_probs.sum(1), 1.0, atol=1e-6)
    zero = ModelParams(**{n: np.zeros_like(a) for n, a in p.arrays().items()}, answers=p.answers, tasks=p.tasks)
    fz = forward(zero, [r.features for r in small[:3]])
    assert np.allclose(fz.answer_probs, 1 / len(p.answers))
    assert np.allclose(fz.task_probs, 1 / len(p.tasks))


def test_argmax_invariant_under_logit_scaling():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(50, 22))
    for c in (0.1, 1.0, 7.5):
        assert np.array_equal(_softmax(c * z).argmax(1), z.argmax(1))


def test_outputs_move_continuously(small):
    p = params_for(small)
    X = np.array([r.features for r in small[:5]])
    before = forward(p, X).answer_probs
    p.W1[0, 0] += 1e-6
    assert np.max(np.abs(forward(p, X).answer_probs - before)) < 1e-4


def test_shape_mismatch(small):
    p = params_for(small)
    with pytest.raises(ShapeMismatch):
        forward(p, np.zeros((2, 3)))


def test_lr_zero_leaves_parameters(small):
    cfg = TrainConfig(mode="logic", lr=0.0, epochs=1, seed=3)
    out = train(cfg, small, KB, answers=answer_vocabulary())
    fresh = init_params(len(small[0].features), answer_vocabulary(), KB.task_names, cfg.hidden, cfg.task_hidden, 3)
    for name, arr in out.params.arrays().items():
        assert np.array_equal(arr, fresh.arrays()[name])


def test_original_mode_has_no_logic_and_ignores_kb(small):
    cfg = TrainConfig(mode="original", beta=5.0, epochs=3, lr=1e-3, seed=1)
    a = train(cfg, small, None, answers=answer_vocabulary())
    b = train(cfg, small, KB, answers=answer_vocabulary())
    assert all(row["logic_loss"] == 0.0 for row in a.curves)
    assert a.curves == b.curves
    for name in a.params.arrays():
        assert np.array_equal(a.params.arrays()[name], b.params.arrays()[name])


def test_hybrid_mode_isolated_from_kb(small):
    cfg = TrainConfig(mode="hybrid", epochs=2, lr=1e-3, seed=1)
    assert train(cfg, small, None, answers=answer_vocabulary()).curves == \
        train(cfg, small, KB, answers=answer_vocabulary()).curves


def test_curves_columns(small, tmp_path):
    out = train(TrainConfig(mode="logic", epochs=2, lr=1e-3), small, KB, answers=answer_vocabulary())
    assert [set(row) for row in out.curves] == [set(CURVE_COLUMNS)] * 2
    assert out.curves[0]["logic_loss"] > 0.0
    write_curves(out.curves, tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == ",".join(CURVE_COLUMNS) and len(lines) == 3


def test_parameter_gradients_during_training(small):
    cfg = TrainConfig(mode="logic", epochs=2, lr=1e-2, seed=0)
    reports = []

    def audit(epoch, b, params, batch):
        X, ga, gt, n_family = batch
        if epoch == 2 and b == 3:
            reports.extend(check_parameter_gradients(params.copy(), X, ga, gt, n_family, cfg, KB, n_params=20))

    train(cfg, small, KB, answers=answer_vocabulary(), on_batch=audit)
    assert len(reports) == 20
    assert all(r.passed for r in reports), [r.to_dict() for r in reports if not r.passed]


@pytest.mark.parametrize("mode", ["original", "hybrid"])
def test_parameter_gradients_other_modes(small, mode):
    p = params_for(small, seed=2)
    rows = small[:16]
    X = np.array([r.features for r in rows])
    idx = {a: i for i, a in enumerate(answer_vocabulary())}
    ga = np.array([idx[r.gold_answer] for r in rows])
    gt = np.array([KB.task_index[r.task] for r in rows])
    reports = check_parameter_gradients(p, X, ga, gt, 0, TrainConfig(mode=mode, duo_task=True), None, n_params=10)
    assert reports and all(r.passed for r in reports)


@pytest.mark.parametrize("mode", MODES)
def test_loss_decreases(reference, mode):
    cfg = TrainConfig(mode=mode, epochs=5)
    curves = train(cfg, reference, KB if mode == "logic" else None, answers=answer_vocabulary()).curves
    first, fifth = curves[0], curves[4]
    total = [c["answer_loss"] + c["task_loss"] + c["logic_loss"] for c in (first, fifth)]
    assert total[1] < total[0]


@pytest.mark.slow
def test_reference_logic_run_fits_training_data(reference):
    out = train(TrainConfig(mode="logic", seed=42), reference, KB, answers=answer_vocabulary())
    assert out.curves[-1]["answer_acc"] > 0.9


def test_checkpoint_round_trip(small, tmp_path):
    out = train(TrainConfig(mode="hybrid", epochs=1, lr=1e-3), small, None, answers=answer_vocabulary())
    path = tmp_path / "m.json"
    save_checkpoint(out.params, path, TrainConfig())
    back = load_checkpoint(path)
    assert predict(back, small) == predict(out.params, small)
    path.write_text(path.read_text().replace('"version": 1', '"version": 9'))
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_predict_pipeline(small):
    train_recs, test_recs = split_by_image(small, 0.25, seed=0)
    assert {r.image_id for r in train_recs}.isdisjoint({r.image_id for r in test_recs})
    out = train(TrainConfig(mode="logic", epochs=3, lr=1e-2), train_recs, KB, answers=answer_vocabulary())
    preds = predict(out.params, test_recs, with_probs=True)
    assert [p["id"] for p in preds] == [r.id for r in test_recs]
    assert predict(out.params, test_recs) == predict(out.params, test_recs)
    assert all(abs(sum(p["answer_probs"]) - 1) < 1e-4 for p in preds)
    rep = evaluate(preds, test_recs, KB)
    assert 0.0 <= rep.accuracy <= 1.0
    assert predict(out.params, []) == []


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(mode="fancy")
    with pytest.raises(ValueError):
        TrainConfig(beta=-1)
    assert TrainConfig(mode="hybrid", duo_task=True).trains_task_head
    assert not TrainConfig(mode="hybrid").trains_task_head
    with pytest.raises(ValueError):
        train(TrainConfig(mode="logic"), generate_synthetic(3), replace(KB, rules=()))


# ------------------------------------------------------------------ synthetic data

def test_beach_answers():
    world = SyntheticWorld("img", "beach", "img/subject", "red", "wood")
    qs = questions_for(world, np.random.default_rng(0))
    assert qs["verifyGlobalTrue"][1] == "yes" and qs["verifyGlobalFalse"][1] == "no"
    assert qs["queryGlobal"][1] == "beach" and qs["chooseGlobal"][1] == "beach"
    assert "beach" in qs["chooseGlobal"][2:]


def test_synthetic_generation():
    assert generate_synthetic(0) == []
    a, b = generate_synthetic(20, seed=9), generate_synthetic(20, seed=9)
    assert a == b
    ids = {r.id for r in a}
    assert all(e in ids for r in a for e in r.entailed_ids)
    assert all(len(r.features) == feature_dim(SyntheticConfig()) for r in a)
    assert all(len(f) <= 6 for f in group_families(a))
    plain = generate_synthetic(2, cfg=SyntheticConfig(fusion=False))
    assert len(plain[0].features) == feature_dim(SyntheticConfig(fusion=False))
