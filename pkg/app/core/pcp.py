"""
Batch principal component pursuit, the offline baseline.

min ||L||_* + lam ||S||_1 s.t. L + S = M, solved by the inexact augmented
Lagrangian iteration (singular-value thresholding for L, soft thresholding
for S, growing penalty mu).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from app.core.errors import ConfigError
from app.core.linalg import Matrix, as_matrix

logger = logging.getLogger(__name__)

MU_GROWTH = 1.5
MU_CAP = 1e7


@dataclass
class PcpResult:
    L: Matrix
    S: Matrix
    converged: bool
    iterations: int


def _shrink(M: Matrix, tau: float) -> Matrix:
    return np.sign(M) * np.maximum(np.abs(M) - tau, 0.0)


def _svd_threshold(M: Matrix, tau: float) -> Matrix:
    U, s, Vt = sla.svd(M, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    keep = s > 0
    return (U[:, keep] * s[keep]) @ Vt[keep]


def pcp_batch(
    M_window: Matrix,
    lam: float | None = None,
    tol: float = 1e-7,
    max_iter: int = 1000,
) -> PcpResult:
    """
    Split a window into low-rank and sparse parts.

    Args:
        M_window: n x w data window
        lam: Sparse weight (default 1 / sqrt(max(n, w)))
        tol: Stop when ||M - L - S||_F <= tol ||M||_F
        max_iter: Iteration cap; hitting it returns the partial result unconverged

    Returns:
        PcpResult with the two parts and the convergence flag
    """
    M = as_matrix(M_window, "M_window")
    if lam is None:
        lam = 1.0 / np.sqrt(max(M.shape))
    if not lam > 0:
        raise ConfigError(f"lambda must be positive, got {lam}")

    norm_fro = float(np.linalg.norm(M))
    L = np.zeros_like(M)
    S = np.zeros_like(M)
    if norm_fro == 0.0:
        return PcpResult(L=L, S=S, converged=True, iterations=0)

    norm_two = float(sla.norm(M, 2))
    Y = M / max(norm_two, float(np.max(np.abs(M))) / lam)
    mu = 1.25 / norm_two
    mu_cap = mu * MU_CAP

    for it in range(1, max_iter + 1):
        L = _svd_threshold(M - S + Y / mu, 1.0 / mu)
        S = _shrink(M - L + Y / mu, lam / mu)
        residual = M - L - S
        Y = Y + mu * residual
        mu = min(mu * MU_GROWTH, mu_cap)
        if float(np.linalg.norm(residual)) <= tol * norm_fro:
            return PcpResult(L=L, S=S, converged=True, iterations=it)

    logger.warning(f"[PCP] no convergence in {max_iter} iterations")
    return PcpResult(L=L, S=S, converged=False, iterations=max_iter)


def pcp_windowed(M: Matrix, t_train: int, window: int, lam: float | None = None) -> Matrix:
    """
    Baseline sparse estimate of a stream: every `window` frames after training,
    PCP on the trailing `window` frames assigns the frames not yet assigned. A
    short tail is solved on the last `window` frames of the stream.
    """
    M = as_matrix(M, "M")
    if window < 1:
        raise ConfigError(f"window must be positive, got {window}")
    t_max = M.shape[1]
    S_hat = np.zeros_like(M)
    assigned = t_train
    ends = list(range(t_train + window, t_max + 1, window))
    if not ends or ends[-1] < t_max:
        ends.append(t_max)
    for end in ends:
        start = max(0, end - window)
        result = pcp_batch(M[:, start:end], lam=lam)
        first = max(assigned, start)
        S_hat[:, first:end] = result.S[:, first - start :]
        assigned = end
        logger.debug(f"[PCP] window [{start}, {end}) iterations={result.iterations}")
    return S_hat
