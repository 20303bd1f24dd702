import inspect
import warnings

import numpy as np
import pytest

import epcgaze.trainer as trainer_mod
from epcgaze.epc import LossWeights
from epcgaze.errors import DegenerateRunWarning, InvalidInput, StageWarning
from epcgaze.geometry import angular_error
from epcgaze.llr import NeighborConfig
from epcgaze.model import Model, ModelConfig
from epcgaze.synthetic import GeneratorConfig, LabeledDomain, generate_world, leave_one_subject_out
from epcgaze.trainer import TrainConfig, TrainLog, adapt, pretrain

MCFG = ModelConfig(input_dim=16, hidden_layers=(16,), embedding_dim=4)


@pytest.fixture(scope="module")
def split():
    w = generate_world(GeneratorConfig(n_subjects=4, samples_per_subject=100), seed=0)
    return leave_one_subject_out(w, 1)


def _pretrained(split, seed=0, **kw):
    cfg = TrainConfig(pretrain_epochs=2, **kw)
    m = Model.create(MCFG, seed)
    pretrain(m, split.source, cfg, np.random.default_rng(seed))
    return m


def _same_params(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a.params.arrays(), b.params.arrays()))


# ---------------------------------------------------------------- pretrain

def test_overfit_single_sample():
    x = np.random.default_rng(0).normal(size=(1, 16))
    src = LabeledDomain(x, np.array([[0.3, -0.2]]), np.array([1]))
    m = Model.create(MCFG, 0)
    cfg = TrainConfig(pretrain_epochs=100, pretrain_batch_size=1, learning_rate=0.01)
    _, log = pretrain(m, src, cfg, np.random.default_rng(0))
    loss = log.column("l_gaze")
    assert len(loss) == 100
    # the angular loss is a cone at zero, so single steps overshoot near the optimum
    # once close; the trend over 20-step blocks must fall monotonically
    blocks = loss.reshape(5, 20).mean(axis=1)
    assert np.all(np.diff(blocks) < 0)
    assert blocks[-1] < 0.1 * loss[0]


def test_zero_epochs_leave_model_unchanged(split):
    m = Model.create(MCFG, 3)
    before = m.copy()
    _, log = pretrain(m, split.source, TrainConfig(pretrain_epochs=0), np.random.default_rng(0))
    assert _same_params(m, before) and m.stage == "initialized" and not log.steps


def test_pretrain_deterministic(split):
    a, b = _pretrained(split, 4), _pretrained(split, 4)
    assert _same_params(a, b) and a.stage == "pretrained"


def test_pretrain_reduces_source_error(split):
    m = Model.create(MCFG, 0)
    _, log = pretrain(m, split.source, TrainConfig(pretrain_epochs=5), np.random.default_rng(0))
    assert len(log.epochs) == 5
    assert log.epochs[-1]["mean_l_gaze"] < log.epochs[0]["mean_l_gaze"]


# ---------------------------------------------------------------- adapt

def test_adapt_rejects_labelled_target(split):
    m = _pretrained(split)
    with pytest.raises(InvalidInput):
        adapt(m, split.source, split.source, TrainConfig(joint_iterations=1), np.random.default_rng(0))


def test_adapt_warns_on_unpretrained_model(split):
    m = Model.create(MCFG, 0)
    with pytest.warns(StageWarning):
        adapt(m, split.source, split.target, TrainConfig(joint_iterations=2), np.random.default_rng(0))


def test_label_hygiene():
    # adapt has no label argument, and wiping the held-out subject's labels in the world changes nothing
    assert "target_gt" not in inspect.signature(adapt).parameters
    cfg = TrainConfig(joint_iterations=20)
    results = []
    for wipe in (False, True):
        w = generate_world(GeneratorConfig(n_subjects=4, samples_per_subject=100), seed=0)
        if wipe:
            w.gaze[w.subject_ids == 1] = np.nan
        sp = leave_one_subject_out(w, 1)
        assert not hasattr(sp.target, "gaze")
        results.append(adapt(_pretrained(sp), sp.source, sp.target, cfg, np.random.default_rng(1))[0])
    assert _same_params(*results)


def test_adapt_deterministic_logs(split):
    cfg = TrainConfig(joint_iterations=30)
    _, la = adapt(_pretrained(split), split.source, split.target, cfg, np.random.default_rng(2))
    _, lb = adapt(_pretrained(split), split.source, split.target, cfg, np.random.default_rng(2))
    assert la == lb and len(la.steps) == 30


def test_adapt_log_records(split, tmp_path):
    m = _pretrained(split)
    _, log = adapt(m, split.source, split.target, TrainConfig(joint_iterations=5), np.random.default_rng(0))
    rec = log.steps[0]
    assert set(rec) >= {"l_gaze", "l_epc", "l_da", "participating", "source_mae_deg"}
    assert rec["l_da"] == pytest.approx(rec["l_gaze"] + rec["l_epc"])
    assert m.stage == "adapted"
    path = log.write_csv(tmp_path / "log.csv")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("stage,step") and len(lines) == 6


def test_hypothesis_labels_come_from_frozen_parameters(split, monkeypatch):
    # with one target sample, the labels passed to neighbour selection must equal
    # the prediction of the parameters as they were when the iteration started
    target = type(split.target)(split.target.features[:1], split.target.subject_ids[:1])
    m = _pretrained(split)
    seen, snapshots = [], [m.predict(target.features)]
    real = trainer_mod.select_neighbors_batch

    def spy(pred_t, *args, **kw):
        seen.append(pred_t.copy())
        return real(pred_t, *args, **kw)

    monkeypatch.setattr(trainer_mod, "select_neighbors_batch", spy)
    adapt(m, split.source, target, TrainConfig(joint_iterations=5, batch_target=1),
          np.random.default_rng(0), on_step=lambda mm, it: snapshots.append(mm.predict(target.features)))
    for it in range(5):
        # equal up to BLAS blocking differences between batch sizes
        np.testing.assert_allclose(seen[it], snapshots[it], rtol=0, atol=1e-13)
        assert not np.allclose(seen[it], snapshots[it + 1], rtol=0, atol=1e-9)


def test_skipping_targets_leaves_gaze_loss_alone(split):
    cfg_all = TrainConfig(joint_iterations=1)
    cfg_none = TrainConfig(joint_iterations=1, neighbors=NeighborConfig(mu=1e-9))
    _, a = adapt(_pretrained(split), split.source, split.target, cfg_all, np.random.default_rng(3))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateRunWarning)
        _, b = adapt(_pretrained(split), split.source, split.target, cfg_none, np.random.default_rng(3))
    assert a.steps[0]["l_gaze"] == b.steps[0]["l_gaze"]
    assert b.steps[0]["participating"] == 0 and b.steps[0]["l_epc"] == 0.0


def test_degenerate_run_warning(split):
    cfg = TrainConfig(joint_iterations=10, early_stop_window=10, neighbors=NeighborConfig(mu=1e-4))
    with pytest.warns(DegenerateRunWarning):
        adapt(_pretrained(split), split.source, split.target, cfg, np.random.default_rng(0))


def test_early_stop(split):
    cfg = TrainConfig(joint_iterations=100, early_stop_window=10, early_stop_tol=1e9)
    _, log = adapt(_pretrained(split), split.source, split.target, cfg, np.random.default_rng(0))
    assert len(log.steps) == 20
    cfg = TrainConfig(joint_iterations=40, early_stop_window=10, early_stop_tol=None)
    _, log = adapt(_pretrained(split), split.source, split.target, cfg, np.random.default_rng(0))
    assert len(log.steps) == 40


def test_zero_epc_weight_is_continued_source_training(split):
    # with lambda_epc = 0 adaptation is plain source training: it tracks a pretrain continuation
    iters = 200
    cfg = TrainConfig(joint_iterations=iters, early_stop_tol=None, loss_weights=LossWeights(0.0, 1.0))
    _, log = adapt(_pretrained(split), split.source, split.target, cfg, np.random.default_rng(0))
    cont = _pretrained(split)
    pretrain(cont, split.source, TrainConfig(pretrain_epochs=iters * 64 // len(split.source)),
             np.random.default_rng(1))
    adapt_mae = np.degrees(np.mean([r["l_gaze"] for r in log.steps[-50:]]))
    pred = cont.predict(split.source.features)
    cont_mae = np.degrees(np.mean(angular_error(pred, split.source.gaze)))
    assert abs(adapt_mae - cont_mae) < 1.0


def test_trainlog_equality():
    a, b = TrainLog(), TrainLog()
    a.append(step=0, l_gaze=0.5)
    assert a != b
    b.append(step=0, l_gaze=0.5)
    assert a == b
