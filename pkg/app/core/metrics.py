"""
Evaluation metrics: subspace error curves, sparse-part NMSE and support scores.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

from app.core.errors import DimensionError
from app.core.linalg import Matrix, Vector, subspace_dif

# returned by nmse when every true frame is zero
NMSE_UNDEFINED = math.nan


def se_curve(tracked_bases: Sequence[Matrix], truth_bases: Sequence[Matrix]) -> list[float]:
    """SE_t = dif(P_hat_t, P_t) for aligned per-frame bases."""
    if len(tracked_bases) != len(truth_bases):
        raise DimensionError(
            f"{len(tracked_bases)} tracked bases against {len(truth_bases)} true bases"
        )
    return [subspace_dif(Phat, P) for Phat, P in zip(tracked_bases, truth_bases)]


def nmse(S_true: NDArray, S_hat: NDArray) -> float:
    """
    sum_t ||x_t - x_hat_t||^2 / sum_t ||x_t||^2 over the columns (frames).

    Frames with x_t = 0 are left out of both sums; NMSE_UNDEFINED when no frame
    remains.
    """
    S_true = np.asarray(S_true, dtype=np.float64)
    S_hat = np.asarray(S_hat, dtype=np.float64)
    if S_true.shape != S_hat.shape:
        raise DimensionError(f"shapes differ: {S_true.shape} vs {S_hat.shape}")
    if S_true.ndim == 1:
        S_true = S_true[:, None]
        S_hat = S_hat[:, None]
    energy = np.sum(S_true * S_true, axis=0)
    keep = energy > 0
    if not np.any(keep):
        return NMSE_UNDEFINED
    error = np.sum((S_true[:, keep] - S_hat[:, keep]) ** 2)
    return float(error / np.sum(energy[keep]))


def frame_nmse(x: Vector, x_hat: Vector) -> float | None:
    """Per-frame ||x - x_hat||^2 / ||x||^2, None when x = 0."""
    value = nmse(x, x_hat)
    return None if math.isnan(value) else value


def support_metrics(T_true: Iterable[int], T_hat: Iterable[int]) -> tuple[float, float]:
    """Set precision and recall; an empty set scores 1 on its own side."""
    true_set = {int(i) for i in T_true}
    hat_set = {int(i) for i in T_hat}
    hits = len(true_set & hat_set)
    precision = hits / len(hat_set) if hat_set else 1.0
    recall = hits / len(true_set) if true_set else 1.0
    return precision, recall
