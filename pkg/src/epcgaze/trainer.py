"""Two-stage training: source-only pretraining, then joint adaptation.

The joint stage alternates per iteration: one forward pass with the current
(fixed) parameters yields the target hypothesis labels, source predictions
and all embeddings; neighbourhoods and reconstruction weights are built from
those; then one gradient step is taken on the combined loss with the
weights held constant.
"""
from __future__ import annotations

import csv
import logging
import warnings
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import epc as epc_mod
from .epc import LossWeights
from .errors import DegenerateRunWarning, InvalidInput, NonFiniteUpdate, StageWarning
from .geometry import angular_error, gaze_loss_and_grad
from .llr import NeighborConfig, local_covariance, select_neighbors_batch, solve_weights_batch
from .model import Model, backward, forward, sgd_step
from .synthetic import LabeledDomain, UnlabeledDomain, draw_indices

log = logging.getLogger(__name__)

LLR_SOURCES = ("groundtruth", "prediction")


@dataclass(frozen=True)
class TrainConfig:
    pretrain_epochs: int = 5
    pretrain_batch_size: int = 64
    joint_iterations: int = 1000
    batch_source: int = 64
    batch_target: int = 64
    neighbors: NeighborConfig = field(default_factory=NeighborConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 5e-4
    llr_source: str = "groundtruth"
    early_stop_window: int = 100
    early_stop_tol: float | None = 1e-4
    degenerate_fraction: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.pretrain_epochs < 0:
            raise InvalidInput("pretrain_epochs must be >= 0")
        if self.joint_iterations < 1:
            raise InvalidInput("joint_iterations must be >= 1")
        if self.llr_source not in LLR_SOURCES:
            raise InvalidInput(f"llr_source must be one of {LLR_SOURCES}")


@dataclass
class TrainLog:
    """Append-only per-step records for both stages."""

    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)

    def append(self, **record):
        self.steps.append(record)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.steps if name in r])

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        columns = ["stage", "step", "epoch", "l_gaze", "l_epc", "l_da",
                   "participating", "source_mae_deg"]
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, columns, restval="", lineterminator="\n")
            writer.writeheader()
            for r in self.steps:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v)
                                 for k, v in r.items() if k in columns})
        return path

    def __eq__(self, other):
        return isinstance(other, TrainLog) and self.steps == other.steps and self.epochs == other.epochs


def _apply_hyper(model: Model, cfg: TrainConfig):
    opt = model.optimizer
    opt.learning_rate = cfg.learning_rate
    opt.momentum = cfg.momentum
    opt.weight_decay = cfg.weight_decay


def _check_finite(emb, pred, where: str):
    if not (np.all(np.isfinite(emb)) and np.all(np.isfinite(pred))):
        raise NonFiniteUpdate(f"non-finite network output at {where}; training diverged")


def pretrain(model: Model, source: LabeledDomain, cfg: TrainConfig,
             rng: np.random.Generator, log_: TrainLog | None = None,
             on_step: Callable | None = None) -> tuple[Model, TrainLog]:
    """Train on the labelled source domain alone for ``cfg.pretrain_epochs`` passes.

    Each epoch visits every source sample once in a fresh random order, in
    mini-batches of ``cfg.pretrain_batch_size``.
    """
    if len(source) == 0:
        raise InvalidInput("source domain is empty")
    tlog = log_ or TrainLog()
    _apply_hyper(model, cfg)
    n = len(source)
    bs = cfg.pretrain_batch_size
    step = 0
    for epoch in range(cfg.pretrain_epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            emb, pred, cache = forward(model.params, source.features[idx], model.config, return_cache=True)
            _check_finite(emb, pred, f"pretrain step {step}")
            loss, d_pred = gaze_loss_and_grad(pred, source.gaze[idx])
            grads = backward(model.params, cache, model.config, d_pred=d_pred)
            sgd_step(model.params, grads, model.optimizer)
            losses.append(loss)
            tlog.append(stage="pretrain", step=step, epoch=epoch, l_gaze=loss,
                        source_mae_deg=float(np.degrees(loss)))
            step += 1
            if on_step:
                on_step(model, step)
        tlog.epochs.append({"epoch": epoch, "mean_l_gaze": float(np.mean(losses))})
        log.info("pretrain epoch %d: mean L_gaze %.5f rad", epoch, np.mean(losses))
    if cfg.pretrain_epochs > 0:
        model.stage = "pretrained"
    return model, tlog


def adapt(model: Model, source: LabeledDomain, target: UnlabeledDomain,
          cfg: TrainConfig, rng: np.random.Generator, log_: TrainLog | None = None,
          on_step: Callable | None = None) -> tuple[Model, TrainLog]:
    """Joint optimisation of the gaze loss (source) and EPC loss (target).

    ``target`` carries features only; target labels never reach this
    function.  Stops after ``cfg.joint_iterations`` or earlier when the mean
    of ``L_DA`` over consecutive windows of ``cfg.early_stop_window``
    iterations improves by less than ``cfg.early_stop_tol``.
    """
    if isinstance(target, LabeledDomain) or hasattr(target, "gaze"):
        raise InvalidInput("adapt must receive an unlabeled target domain")
    if model.stage != "pretrained":
        warnings.warn(f"adapting a model in stage {model.stage!r}", StageWarning, stacklevel=2)
    tlog = log_ or TrainLog()
    _apply_hyper(model, cfg)
    lw = cfg.loss_weights
    nb = cfg.neighbors
    window = cfg.early_stop_window
    recent_da: deque[float] = deque(maxlen=window)
    recent_part: deque[float] = deque(maxlen=window)
    prev_window_mean = None
    warned = False

    for it in range(cfg.joint_iterations):
        si = draw_indices(len(source), cfg.batch_source, rng)
        ti = draw_indices(len(target), cfg.batch_target, rng)
        xs, gs = source.features[si], source.gaze[si]
        xt = target.features[ti]
        n_s = len(si)

        # frozen forward: hypothesis labels, source predictions, embeddings
        x = np.concatenate([xs, xt])
        emb, pred, cache = forward(model.params, x, model.config, return_cache=True)
        _check_finite(emb, pred, f"adapt iteration {it}")
        emb_s, emb_t = emb[:n_s], emb[n_s:]
        pred_s, pred_t = pred[:n_s], pred[n_s:]

        anchors = gs if cfg.llr_source == "groundtruth" else pred_s
        idx = select_neighbors_batch(pred_t, anchors, nb, rng)
        live = idx[:, 0] >= 0
        weights = np.zeros(idx.shape)
        if live.any():
            S = local_covariance(pred_t[live], anchors[idx[live]])
            weights[live] = solve_weights_batch(S, nb)

        res, d_emb_t, d_emb_s = epc_mod.epc_loss_and_grad(emb_t, emb_s, idx, weights)
        l_gaze, d_pred_s = gaze_loss_and_grad(pred_s, gs)
        l_da = epc_mod.da_loss(res.loss, l_gaze, lw)

        d_emb = np.concatenate([lw.lambda_epc * d_emb_s, lw.lambda_epc * d_emb_t])
        d_pred = np.concatenate([lw.lambda_gaze * d_pred_s, np.zeros_like(pred_t)])
        grads = backward(model.params, cache, model.config, d_embedding=d_emb, d_pred=d_pred)
        sgd_step(model.params, grads, model.optimizer)

        tlog.append(stage="adapt", step=it, l_gaze=l_gaze, l_epc=res.loss, l_da=l_da,
                    participating=res.participating,
                    source_mae_deg=float(np.degrees(np.mean(angular_error(pred_s, gs)))))
        if on_step:
            on_step(model, it + 1)

        recent_da.append(l_da)
        recent_part.append(res.participating / len(ti))
        if (it + 1) % window == 0:
            frac = float(np.mean(recent_part))
            if frac < cfg.degenerate_fraction and not warned:
                warnings.warn(
                    f"only {frac:.1%} of target samples found {nb.k} neighbours within "
                    f"mu={nb.mu} over iterations {it + 2 - window}..{it + 1}",
                    DegenerateRunWarning, stacklevel=2)
                warned = True
            mean_da = float(np.mean(recent_da))
            if (cfg.early_stop_tol is not None and prev_window_mean is not None
                    and prev_window_mean - mean_da < cfg.early_stop_tol):
                log.info("adapt: early stop at iteration %d (L_DA window mean %.6f)", it + 1, mean_da)
                break
            prev_window_mean = mean_da
    model.stage = "adapted"
    return model, tlog
