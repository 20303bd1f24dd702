"""Locally linear representation of target gaze hypotheses by source labels.

A target hypothesis label is rebuilt as a sum-to-one combination of ``k``
source gaze labels taken from its box neighbourhood.  The weights minimise

    E(w) = ||g_hat - sum_i w_i g_i||^2 + lam * sum_i w_i^2,   sum_i w_i = 1

whose closed form is ``(S + lam I)^-1 1 / (1^T (S + lam I)^-1 1)`` with ``S``
the local covariance (Gram matrix of differences).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import InvalidInput, SingularSystem

RELATIVE_REG = 1e-3
REG_FLOOR = 1e-8


@dataclass(frozen=True)
class NeighborConfig:
    """Neighbourhood selection and weight regularisation settings.

    ``lambda_reg=None`` selects the relative rule
    ``1e-3 * max(trace(S) / k, 1e-8)``; a float is used as an absolute value.
    """

    mu: float = 0.15
    k: int = 4
    lambda_reg: float | None = None

    def __post_init__(self):
        if not self.mu > 0:
            raise InvalidInput(f"mu must be positive, got {self.mu}")
        if self.k < 2:
            raise InvalidInput(f"k must be at least 2, got {self.k}")
        if self.lambda_reg is not None and not self.lambda_reg > 0:
            raise InvalidInput(f"lambda_reg must be positive, got {self.lambda_reg}")

    def regularizer(self, S: np.ndarray) -> np.ndarray | float:
        """Regulariser for one ``(k, k)`` matrix or a ``(n, k, k)`` stack."""
        if self.lambda_reg is not None:
            return self.lambda_reg
        k = S.shape[-1]
        trace = np.trace(S, axis1=-2, axis2=-1)
        return RELATIVE_REG * np.maximum(trace / k, REG_FLOOR)


@dataclass(frozen=True)
class Neighborhood:
    target_index: int
    neighbor_indices: np.ndarray


def candidate_mask(target_preds, source_labels, mu: float) -> np.ndarray:
    """Boolean ``(n_target, n_source)`` matrix of the strict box test.

    Source label ``i`` is a candidate for target ``j`` when both the yaw and
    the pitch differences are below ``mu``.
    """
    t = np.atleast_2d(np.asarray(target_preds, dtype=np.float64))
    s = np.atleast_2d(np.asarray(source_labels, dtype=np.float64))
    cheb = np.max(np.abs(t[:, None, :] - s[None, :, :]), axis=-1)
    return cheb < mu


def select_neighbors(target_pred, source_labels, cfg: NeighborConfig,
                     rng: np.random.Generator, target_index: int = 0):
    """Pick ``k`` random source neighbours of one target hypothesis label.

    Returns ``None`` when fewer than ``k`` candidates pass the box test; the
    caller then leaves that target sample out of the EPC term.
    """
    source_labels = np.atleast_2d(np.asarray(source_labels, dtype=np.float64))
    if source_labels.shape[0] == 0:
        raise InvalidInput("source_labels must be non-empty")
    candidates = np.flatnonzero(candidate_mask(target_pred, source_labels, cfg.mu)[0])
    if candidates.size < cfg.k:
        return None
    chosen = rng.choice(candidates, size=cfg.k, replace=False)
    return Neighborhood(target_index, np.sort(chosen))


def select_neighbors_batch(target_preds, source_labels, cfg: NeighborConfig,
                           rng: np.random.Generator) -> np.ndarray:
    """Neighbour indices for a whole target batch.

    Returns an ``(n_target, k)`` integer array; rows of targets without
    enough candidates are filled with ``-1``.  Targets are processed in
    index order so a fixed ``rng`` gives a fixed result.
    """
    mask = candidate_mask(target_preds, source_labels, cfg.mu)
    out = np.full((mask.shape[0], cfg.k), -1, dtype=np.int64)
    for j, row in enumerate(mask):
        candidates = np.flatnonzero(row)
        if candidates.size >= cfg.k:
            out[j] = np.sort(rng.choice(candidates, size=cfg.k, replace=False))
    return out


def local_covariance(target_pred, neighbors) -> np.ndarray:
    """Gram matrix ``S[i, l] = (g_hat - g_i) . (g_hat - g_l)``.

    Accepts one target ``(2,)`` with neighbours ``(k, 2)``, or a batch of
    targets ``(n, 2)`` with neighbours ``(n, k, 2)``.
    """
    t = np.asarray(target_pred, dtype=np.float64)
    nb = np.asarray(neighbors, dtype=np.float64)
    diff = t[..., None, :] - nb
    return diff @ np.swapaxes(diff, -1, -2)


def solve_weights(S, cfg: NeighborConfig) -> np.ndarray:
    """Closed-form reconstruction weights for one local covariance matrix."""
    S = np.asarray(S, dtype=np.float64)
    k = S.shape[0]
    A = S + cfg.regularizer(S) * np.eye(k)
    try:
        factor = cho_factor(A, lower=True, check_finite=True)
        z = cho_solve(factor, np.ones(k))
    except (LinAlgError, ValueError) as exc:
        raise SingularSystem(f"cannot factor regularised covariance: {exc}") from exc
    total = z.sum()
    if not np.isfinite(total) or total == 0.0:
        raise SingularSystem("degenerate normaliser in weight solve")
    return z / total


def solve_weights_batch(S, cfg: NeighborConfig) -> np.ndarray:
    """Row-wise :func:`solve_weights` over an ``(n, k, k)`` stack."""
    S = np.asarray(S, dtype=np.float64)
    n, k, _ = S.shape
    lam = np.broadcast_to(np.asarray(cfg.regularizer(S), dtype=np.float64), (n,))
    A = S + lam[:, None, None] * np.eye(k)
    try:
        L = np.linalg.cholesky(A)
        ones = np.ones((n, k, 1))
        y = np.linalg.solve(L, ones)
        z = np.linalg.solve(np.swapaxes(L, -1, -2), y)[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"cannot factor regularised covariance: {exc}") from exc
    total = z.sum(axis=1, keepdims=True)
    if not np.all(np.isfinite(total)) or np.any(total == 0.0):
        raise SingularSystem("degenerate normaliser in weight solve")
    return z / total


def reconstruction_error(target_pred, neighbors, w, cfg: NeighborConfig,
                         S=None) -> float:
    """Regularised reconstruction loss ``E(w)`` (diagnostics only).

    ``S`` may be passed to pin the relative regulariser to the matrix the
    weights were solved with; otherwise it is recomputed from the inputs.
    """
    t = np.asarray(target_pred, dtype=np.float64)
    nb = np.asarray(neighbors, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if S is None:
        S = local_covariance(t, nb)
    lam = cfg.regularizer(S)
    resid = t - w @ nb
    return float(resid @ resid + lam * (w @ w))
