"""Acceptance criteria, one test each.  Every test prints a PASS/FAIL line.

The end-to-end runs share one default leave-one-subject-out run per module.
"""
import json
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from epcgaze.config import RunConfig
from epcgaze.epc import epc_loss, epc_loss_and_grad, hypothesis_embedding
from epcgaze.evaluation import run_loso
from epcgaze.geometry import gaze_loss_and_grad
from epcgaze.llr import NeighborConfig, local_covariance, select_neighbors_batch, solve_weights
from epcgaze.model import ModelConfig, backward, forward, init_params
from epcgaze.synthetic import generate_world

FIXTURE = json.loads((Path(__file__).parent / "fixtures" / "baseline.json").read_text())


def kkt_weights(S, lam):
    k = S.shape[0]
    A = np.zeros((k + 1, k + 1))
    A[:k, :k] = 2 * (S + lam * np.eye(k))
    A[:k, k] = 1.0
    A[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    return np.linalg.solve(A, rhs)[:k]


# ---------------------------------------------------------------- 1

def test_criterion_1_llr_closed_form(verdict):
    rng = np.random.default_rng(1)
    worst_err = worst_sum = 0.0
    t0 = time.perf_counter()
    for n in range(1000):
        k = (3, 4, 6)[n % 3]
        lam = (1e-4, 1e-2)[(n // 3) % 2]
        target = rng.uniform(-0.5, 0.5, size=2)
        nb = target + rng.uniform(-0.15, 0.15, size=(k, 2))
        S = local_covariance(target, nb)
        w = solve_weights(S, NeighborConfig(k=k, lambda_reg=lam))
        worst_err = max(worst_err, np.max(np.abs(w - kkt_weights(S, lam))))
        worst_sum = max(worst_sum, abs(w.sum() - 1.0))
    elapsed = time.perf_counter() - t0
    ok = worst_err <= 1e-8 and worst_sum <= 1e-10 and elapsed < 5
    verdict("criterion 1 (LLR closed form)", ok,
            f"max|w - kkt|={worst_err:.2e} max|sum-1|={worst_sum:.2e} time={elapsed:.2f}s")
    assert ok


# ---------------------------------------------------------------- 2

def _rel_err(a, b):
    # central differences with h=1e-6 carry ~1e-10 round-off, so below 1e-8 both
    # sides are zero to the resolution of the check (e.g. the EPC gradient on the
    # last embedding bias, which cancels exactly because the weights sum to one)
    scale = max(abs(a), abs(b))
    return 0.0 if scale < 1e-8 else abs(a - b) / scale


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_criterion_2_gradients(verdict, activation):
    cfg = ModelConfig(input_dim=4, hidden_layers=(8,), embedding_dim=4, activation=activation)
    rng = np.random.default_rng(2)
    params = init_params(cfg, 3)
    for b in params.biases + [params.head_b]:
        b[...] = rng.normal(0, 0.1, size=b.shape)
    xs, xt = rng.normal(size=(16, 4)), rng.normal(size=(8, 4))
    gs = rng.uniform(-0.4, 0.4, size=(16, 2))
    _, pred_s = forward(params, xs, cfg)
    pred_t = forward(params, xt, cfg)[1]
    nbc = NeighborConfig(mu=2.0, k=4)
    idx = select_neighbors_batch(pred_t, gs, nbc, rng)
    W = np.zeros(idx.shape)
    live = idx[:, 0] >= 0
    W[live] = [solve_weights(local_covariance(p, gs[i]), nbc) for p, i in zip(pred_t[live], idx[live])]
    n_s = len(xs)
    x = np.concatenate([xs, xt])

    def losses(p):
        emb, pred = forward(p, x, cfg)
        l_gaze = gaze_loss_and_grad(pred[:n_s], gs)[0]
        l_epc = epc_loss_and_grad(emb[n_s:], emb[:n_s], idx, W)[0].loss
        return {"gaze": l_gaze, "epc": l_epc, "da": l_gaze + l_epc}

    emb, pred, cache = forward(params, x, cfg, return_cache=True)
    _, d_pred_s = gaze_loss_and_grad(pred[:n_s], gs)
    _, d_t, d_s = epc_loss_and_grad(emb[n_s:], emb[:n_s], idx, W)
    d_pred = np.concatenate([d_pred_s, np.zeros((len(xt), 2))])
    d_emb = np.concatenate([d_s, d_t])
    analytic = {
        "gaze": backward(params, cache, cfg, d_pred=d_pred),
        "epc": backward(params, cache, cfg, d_embedding=d_emb),
        "da": backward(params, cache, cfg, d_embedding=d_emb, d_pred=d_pred),
    }

    h = 1e-6
    worst = {k: 0.0 for k in analytic}
    t0 = time.perf_counter()
    for li, arr in enumerate(params.arrays()):
        for _ in range(20):
            i = tuple(int(rng.integers(0, s)) for s in arr.shape)
            old = arr[i]
            arr[i] = old + h
            up = losses(params)
            arr[i] = old - h
            dn = losses(params)
            arr[i] = old
            for key in analytic:
                fd = (up[key] - dn[key]) / (2 * h)
                worst[key] = max(worst[key], _rel_err(fd, analytic[key][li][i]))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-4 and elapsed < 30
    verdict(f"criterion 2 (gradients, {activation})", ok,
            " ".join(f"{k}={v:.1e}" for k, v in worst.items()) + f" time={elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 3

def test_criterion_3_affine_consistency(verdict):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(200):
        M, c = rng.normal(size=(16, 2)), rng.normal(size=16)
        phi = lambda g: g @ M.T + c  # noqa: E731
        src = rng.uniform(-0.5, 0.5, size=(4, 2))
        target = rng.dirichlet(np.ones(3)) @ src[:3]
        w = solve_weights(local_covariance(target, src), NeighborConfig(k=4, lambda_reg=1e-10))
        assert np.linalg.norm(target - w @ src) < 1e-8
        term = epc_loss(phi(target)[None], hypothesis_embedding(phi(src), w)[None]).loss
        worst = max(worst, term)
    ok = worst < 1e-6
    verdict("criterion 3 (affine consistency)", ok, f"max per-sample EPC={worst:.2e}")
    assert ok


# ---------------------------------------------------------------- end-to-end

DEFAULT = RunConfig()


def _loso(cfg):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        world = generate_world(cfg.generator_config(), cfg.seed)
        t0 = time.perf_counter()
        summary = run_loso(world, cfg)
        return summary, time.perf_counter() - t0


@pytest.fixture(scope="module")
def default_run():
    return _loso(DEFAULT)


def test_criterion_4_end_to_end(verdict, default_run):
    summary, elapsed = default_run
    s = summary.stats()
    better = s["subjects_improved"]
    mean_rel = s["mean_subject_improvement_pct"]
    b_int, a_int = s["baseline_abs_pitch_intercept"], s["adapted_abs_pitch_intercept"]
    reduction = 100 * (b_int - a_int) / b_int
    clauses = {
        f"better {better}/10 (>=8)": better >= 8,
        f"mean improvement {mean_rel:.1f}% (>=10%)": mean_rel >= 10,
        f"|pitch intercept| {b_int:.4f}->{a_int:.4f} = -{reduction:.1f}% (>=50%)": reduction >= 50,
        f"time {elapsed:.0f}s (<600s)": elapsed < 600,
    }
    ok = all(clauses.values())
    verdict("criterion 4 (end-to-end DA benefit)", ok,
            "; ".join(f"{k} {'ok' if v else 'MISS'}" for k, v in clauses.items()))
    assert ok


def test_default_run_matches_committed_pilot(default_run):
    summary, _ = default_run
    rows = summary.table_rows()
    assert [r["subject_id"] for r in rows] == [r["subject_id"] for r in FIXTURE["subjects"]]
    for got, want in zip(rows, FIXTURE["subjects"]):
        for key in ("baseline_mae_deg", "adapted_mae_deg", "adapted_pitch_intercept"):
            assert got[key] == pytest.approx(want[key], rel=1e-6, abs=1e-9)


@pytest.mark.parametrize("label,change,relation", [
    ("5a mu=0.05 worse than mu=0.15", dict(mu=0.05), "worse"),
    ("5b no pretraining worse than 5 epochs", dict(pretrain_epochs=0), "worse"),
    ("5c prediction anchors no better than groundtruth", dict(llr_source="prediction"), "not_better"),
])
def test_criterion_5_ablation_orderings(verdict, default_run, label, change, relation):
    ref = default_run[0].adapted_mae.mean()
    alt = _loso(DEFAULT.replace(**change))[0].adapted_mae.mean()
    ok = alt > ref if relation == "worse" else alt >= ref
    verdict(f"criterion {label}", ok, f"ablated {alt:.3f} deg vs default {ref:.3f} deg")
    assert ok


def test_criterion_6_no_shift_control(verdict):
    summary, _ = _loso(DEFAULT.replace(identical_subjects=True))
    change = summary.adapted_mae.mean() - summary.baseline_mae.mean()
    worst = np.max(np.abs(summary.adapted_mae - summary.baseline_mae))
    ok = abs(change) < 0.2
    verdict("criterion 6 (no-shift control)", ok,
            f"mean MAE change {change:+.3f} deg (|.|<0.2); largest single subject {worst:.3f} deg")
    assert ok


def test_criterion_7_determinism(verdict, default_run):
    again, _ = _loso(DEFAULT)
    ok = again.table_rows() == default_run[0].table_rows()
    verdict("criterion 7 (determinism)", ok, "two seeded loso runs give identical summary tables")
    assert ok
