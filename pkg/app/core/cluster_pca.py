"""
Eigenvalue clustering and deflated per-cluster PCA.

Clusters are contiguous runs of the descending spectrum whose internal
condition number stays within g_hat_plus. Each cluster is then recovered from
the sample covariance with the already-recovered clusters projected out.
"""

from __future__ import annotations

import logging

import numpy as np
from sklearn.cluster import KMeans

from app.core.errors import ConfigError, RankShortfallError
from app.core.linalg import Matrix, Vector, empty_basis, proj_orth, sym_evd

logger = logging.getLogger(__name__)

# margin in g_hat_plus = (g_plus + MARGIN) / (1 - MARGIN)
MARGIN = 0.06
RANK_TOL = 1e-10


def sample_covariance(L_block: Matrix) -> Matrix:
    """(1/alpha) sum l l' over the columns of a block."""
    return (L_block @ L_block.T) / L_block.shape[1]


def partition_eigenvalues(values: Vector, g_hat_plus: float, floor: float) -> list[int]:
    """
    Greedy split of a descending spectrum.

    A cluster opened at eigenvalue v_start absorbs the next eigenvalue while
    v_start / v_next <= g_hat_plus; everything below floor is discarded and ends
    the scan.

    Args:
        values: Eigenvalues sorted non-increasing
        g_hat_plus: Largest allowed within-cluster ratio
        floor: Eigenvalues below this are not part of any cluster

    Returns:
        Cluster sizes in spectrum order (empty when values[0] < floor)
    """
    if not g_hat_plus > 1:
        raise ConfigError(f"g_hat_plus must exceed 1, got {g_hat_plus}")
    sizes: list[int] = []
    i = 0
    count = len(values)
    while i < count and values[i] >= floor:
        start = i
        while (
            i + 1 < count
            and values[i + 1] >= floor
            and values[start] <= g_hat_plus * values[i + 1]
        ):
            i += 1
        sizes.append(i - start + 1)
        i += 1
    return sizes


def deflated_top_eigenvectors(Sigma: Matrix, recovered: Matrix, size: int) -> Matrix:
    """
    Top `size` eigenvectors of Psi Sigma Psi with Psi = I - G G' over the
    recovered clusters G (Psi = I when nothing is recovered yet).
    """
    n = Sigma.shape[0]
    if recovered.shape[1]:
        half = proj_orth(recovered, Sigma)
        deflated = proj_orth(recovered, half.T)
        deflated = 0.5 * (deflated + deflated.T)
    else:
        deflated = Sigma
    if size == 0:
        return empty_basis(n)
    pair = sym_evd(deflated)
    if size > n or pair.values[size - 1] <= RANK_TOL * max(float(pair.values[0]), 1e-300):
        raise RankShortfallError(
            f"cluster of size {size} exceeds the remaining numerical rank of the block covariance"
        )
    return pair.vectors[:, :size].copy()


def suggest_g_hat_plus(values: Vector, n_clusters: int, floor: float) -> float:
    """
    Suggest g_hat_plus from an observed spectrum.

    k-means on the log-eigenvalues above floor groups them into n_clusters; the
    largest within-group condition number gets the usual relative margin.
    """
    kept = np.asarray(values, dtype=np.float64)
    kept = kept[kept >= floor]
    if kept.size == 0:
        raise ConfigError("no eigenvalues above the floor")
    if not 1 <= n_clusters <= kept.size:
        raise ConfigError(f"n_clusters must lie in [1, {kept.size}], got {n_clusters}")
    labels = KMeans(n_clusters=n_clusters, n_init=10, random_state=0).fit_predict(
        np.log(kept).reshape(-1, 1)
    )
    worst = 1.0
    for label in range(n_clusters):
        group = kept[labels == label]
        if group.size:
            worst = max(worst, float(group.max() / group.min()))
    suggestion = (worst + MARGIN) / (1.0 - MARGIN)
    logger.debug(f"[ClusterPCA] within-cluster condition {worst:.4f}, suggested {suggestion:.4f}")
    return suggestion
