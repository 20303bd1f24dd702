"""Hypothesis embeddings and the embedding/prediction consistency loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidInput


@dataclass(frozen=True)
class LossWeights:
    lambda_epc: float = 1.0
    lambda_gaze: float = 1.0

    def __post_init__(self):
        if self.lambda_epc < 0 or self.lambda_gaze < 0:
            raise InvalidInput("loss weights must be non-negative")


@dataclass(frozen=True)
class EpcBatchResult:
    loss: float
    participating: int
    skipped: int


def hypothesis_embedding(source_embeddings, w) -> np.ndarray:
    """Carry gaze-space reconstruction weights over to embedding space.

    Returns ``sum_i w_i * e_i``.  The sum runs in neighbour order after
    sorting by source row content, so permuting (embedding, weight) pairs
    gives a bitwise identical result.
    """
    E = np.asarray(source_embeddings, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] != w.shape[0]:
        raise DimensionMismatch(
            f"need (k, F) embeddings matching {w.shape[0]} weights, got {E.shape}")
    order = np.lexsort(np.column_stack([E, w]).T[::-1])
    out = np.zeros(E.shape[1])
    for i in order:
        out = out + w[i] * E[i]
    return out


def hypothesis_embeddings(source_embeddings, neighbor_idx, weights) -> np.ndarray:
    """Batched hypothesis embeddings.

    Parameters
    ----------
    source_embeddings : (n_source, F) array
    neighbor_idx : (n_target, k) int array, rows of ``-1`` mark skipped targets
    weights : (n_target, k) array

    Returns
    -------
    (n_target, F) array, zero rows for skipped targets.
    """
    E = np.asarray(source_embeddings, dtype=np.float64)
    idx = np.asarray(neighbor_idx)
    live = idx[:, 0] >= 0
    out = np.zeros((idx.shape[0], E.shape[1]))
    if live.any():
        out[live] = np.einsum("jk,jkf->jf", weights[live], E[idx[live]])
    return out


def _stack_hypotheses(target, hypotheses, mask):
    if mask is not None:
        return np.asarray(hypotheses, dtype=np.float64), np.asarray(mask, dtype=bool)
    if isinstance(hypotheses, np.ndarray):
        return hypotheses.astype(np.float64), np.ones(len(hypotheses), dtype=bool)
    mask = np.array([h is not None for h in hypotheses], dtype=bool)
    H = np.zeros_like(target)
    for j, h in enumerate(hypotheses):
        if h is not None:
            H[j] = h
    return H, mask


def epc_loss(target_embeddings, hypothesis_embeddings, mask=None) -> EpcBatchResult:
    """Mean L1 distance between target embeddings and their hypotheses.

    ``hypothesis_embeddings`` is either an array aligned with the targets
    (with ``mask`` marking participating rows) or a list whose skipped
    entries are ``None``.  The sum is divided by the full batch size; skipped
    targets contribute nothing to it.
    """
    T = np.atleast_2d(np.asarray(target_embeddings, dtype=np.float64))
    H, mask = _stack_hypotheses(T, hypothesis_embeddings, mask)
    if H.shape != T.shape:
        raise DimensionMismatch(f"target {T.shape} vs hypothesis {H.shape}")
    n = T.shape[0]
    per_sample = np.abs(T - H).sum(axis=1)
    loss = float(per_sample[mask].sum() / n) if mask.any() else 0.0
    return EpcBatchResult(loss, int(mask.sum()), int(n - mask.sum()))


def epc_loss_and_grad(target_embeddings, source_embeddings, neighbor_idx, weights):
    """EPC loss with gradients for both sides, weights held constant.

    Returns
    -------
    result : EpcBatchResult
    d_target : (n_target, F) gradient w.r.t. the target embeddings
    d_source : (n_source, F) gradient w.r.t. the source embeddings
    """
    T = np.asarray(target_embeddings, dtype=np.float64)
    E = np.asarray(source_embeddings, dtype=np.float64)
    idx = np.asarray(neighbor_idx)
    if T.shape[1] != E.shape[1]:
        raise DimensionMismatch(f"embedding widths differ: {T.shape[1]} vs {E.shape[1]}")
    n = T.shape[0]
    live = idx[:, 0] >= 0
    H = hypothesis_embeddings(E, idx, weights)
    result = epc_loss(T, H, live)

    d_target = np.zeros_like(T)
    d_source = np.zeros_like(E)
    if live.any():
        # np.sign gives 0 at a zero difference, the chosen L1 subgradient
        sgn = np.sign(T[live] - H[live]) / n
        d_target[live] = sgn
        contrib = -weights[live][:, :, None] * sgn[:, None, :]
        np.add.at(d_source, idx[live].ravel(), contrib.reshape(-1, E.shape[1]))
    return result, d_target, d_source


def da_loss(epc: float, gaze: float, lw: LossWeights) -> float:
    """Weighted sum of the consistency and supervised gaze losses."""
    if not (np.isfinite(epc) and np.isfinite(gaze)):
        raise InvalidInput("loss components must be finite")
    return lw.lambda_epc * epc + lw.lambda_gaze * gaze
