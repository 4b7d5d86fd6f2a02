"""
Automatic ReProCS-cPCA tracker.

Frames are consumed one at a time. Each frame is separated by projected sparse
recovery against the current subspace estimate [P_star P_new]; every alpha
frames the block of recovered low-rank vectors drives one step of the phase
automaton:

    detect --(change)--> ppca --(K blocks)--> cpca --(1 + clusters blocks)--> detect

Blocks are anchored at the end of training, so block boundaries fall on frames
t_train + u * alpha.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numpy.typing import NDArray
from scipy import linalg as sla

from app.core.cluster_pca import (
    deflated_top_eigenvectors,
    partition_eigenvalues,
    sample_covariance,
)
from app.core.errors import (
    ClusterOverflowError,
    ConfigError,
    DimensionError,
    RankShortfallError,
    SingularSystemError,
    TrackerInvariantError,
)
from app.core.linalg import (
    Matrix,
    ProjectionOperator,
    Vector,
    as_matrix,
    eigenvectors_above,
    empty_basis,
    orthonormalize,
    proj_orth,
    sym_evd,
)
from app.core.schemas import G_PLUS, Phase, TrackerParams
from app.core.sparse_recovery import RecoveredFrame, debias_ls, recover_frame

logger = logging.getLogger(__name__)

ORTHOGONALITY_TOL = 1e-8
CLUSTER_FLOOR = 0.25
OMEGA_FLOOR = 1e-9


class EventKind(str, Enum):
    CHANGE_DETECTED = "change_detected"
    PPCA_STEP = "ppca_step"
    PPCA_EMPTY = "ppca_empty"
    CLUSTERS_ESTIMATED = "clusters_estimated"
    CLUSTERS_EMPTY = "clusters_empty"
    CLUSTERS_EXCEEDED = "clusters_exceeded"
    CPCA_STEP = "cpca_step"
    CPCA_FAILED = "cpca_failed"
    SUBSPACE_FINALIZED = "subspace_finalized"
    OFFLINE_FLUSH = "offline_flush"


@dataclass(frozen=True)
class TrackerEvent:
    kind: EventKind
    t: int
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.kind.value}[{self.detail}]" if self.detail else self.kind.value


@dataclass
class OfflineRow:
    t: int
    x_hat: Vector | None
    l_hat: Vector | None

    @property
    def failed(self) -> bool:
        return self.x_hat is None


@dataclass
class FrameOutput:
    t: int
    recovered: RecoveredFrame
    phase: Phase
    xi: float
    omega: float
    events: list[TrackerEvent] = field(default_factory=list)
    offline: list[OfflineRow] = field(default_factory=list)


@dataclass
class TrackerState:
    """Everything process_frame reads or writes; owned by one caller at a time."""

    params: TrackerParams
    n: int
    t_train: int
    P_star: Matrix
    P_new: Matrix
    lambda_train_minus: float
    thresh: float
    l_hat_prev: Vector
    phase: Phase = Phase.DETECT
    j: int = 0
    k: int = 0
    t: int = 0
    t_hat: list[int] = field(default_factory=list)
    block_buf: list[Vector] = field(default_factory=list)
    cluster_partition: list[int] = field(default_factory=list)
    G_done: list[Matrix] = field(default_factory=list)
    offline_buf: list[tuple[int, Vector, NDArray[np.int_]]] = field(default_factory=list)
    r_new_history: list[list[int]] = field(default_factory=list)
    partition_history: list[list[int]] = field(default_factory=list)

    @property
    def Phat(self) -> Matrix:
        if self.P_new.shape[1] == 0:
            return self.P_star
        return np.hstack([self.P_star, self.P_new])

    @property
    def rank(self) -> int:
        return self.P_star.shape[1] + self.P_new.shape[1]


# =============================================================================
# Initialization and per-frame parameters
# =============================================================================


def train_init(M_train: NDArray, params: TrackerParams) -> TrackerState:
    """
    Initialize from an outlier-free training prefix.

    P_star is the top-r0 eigenbasis of (1/t_train) sum m m', and the detection
    threshold is half its r0-th eigenvalue. With params.energy_fraction set and
    no explicit r0, r0 is the smallest rank holding that share of the trace.
    """
    M_train = as_matrix(M_train, "M_train")
    n, t_train = M_train.shape
    pair = sym_evd(sample_covariance(M_train))

    if params.r0 is not None:
        r0 = params.r0
        if r0 > min(n, t_train):
            raise ConfigError(f"r0 = {r0} exceeds min(n, t_train) = {min(n, t_train)}")
    else:
        assert params.energy_fraction is not None
        positive = np.clip(pair.values, 0.0, None)
        total = float(np.sum(positive))
        if total == 0.0:
            raise ConfigError("training data has no energy")
        cumulative = np.cumsum(positive) / total
        r0 = int(np.searchsorted(cumulative, params.energy_fraction - 1e-12) + 1)
        r0 = min(r0, min(n, t_train))
        logger.info(f"[Tracker] energy rule {params.energy_fraction} selected r0 = {r0}")

    lambda_minus = float(pair.values[r0 - 1])
    if not lambda_minus > 0:
        raise ConfigError(f"r0-th training eigenvalue is {lambda_minus:.3e}; choose a smaller r0")

    state = TrackerState(
        params=params,
        n=n,
        t_train=t_train,
        P_star=pair.vectors[:, :r0].copy(),
        P_new=empty_basis(n),
        lambda_train_minus=lambda_minus,
        thresh=lambda_minus / 2,
        l_hat_prev=M_train[:, -1].copy(),
        t=t_train,
    )
    logger.info(
        f"[Tracker] trained on {t_train} frames: n={n} r0={r0} "
        f"lambda_train_minus={lambda_minus:.4g} thresh={state.thresh:.4g}"
    )
    return state


def auto_params(
    state: TrackerState, m: Vector, l_hat_prev: Vector, q: float
) -> tuple[float, float]:
    """xi_t = ||Phi_t l_hat_{t-1}||_2 and omega_t = q sqrt(||m_t||^2 / n)."""
    xi = float(np.linalg.norm(proj_orth(state.Phat, l_hat_prev)))
    omega = q * math.sqrt(float(m @ m) / m.shape[0])
    return xi, omega


def _frame_params(state: TrackerState, m: Vector) -> tuple[float, float]:
    params = state.params
    xi_auto, omega_auto = auto_params(state, m, state.l_hat_prev, params.q)
    xi = xi_auto if params.xi_mode == "auto" else params.xi
    if params.omega_mode == "fixed":
        omega = params.omega
    elif params.omega_mode == "auto":
        omega = omega_auto
    else:
        omega = 7.0 * xi
    return xi, max(omega, OMEGA_FLOOR)


def theorem_params(zeta: float, r_new: int, g_plus: float = G_PLUS) -> tuple[int, float]:
    """K = ceil(log(0.85 r_new zeta) / log 0.2) and g_hat_plus = (g_plus + 0.06) / 0.94."""
    if not zeta > 0 or r_new < 1 or not 0.85 * r_new * zeta < 1:
        raise ConfigError(f"need zeta > 0 and 0.85 r_new zeta < 1 (zeta={zeta}, r_new={r_new})")
    ratio = math.log(0.85 * r_new * zeta) / math.log(0.2)
    K = max(1, math.ceil(ratio - 1e-9))
    return K, (g_plus + 0.06) / 0.94


# =============================================================================
# Phase handlers
# =============================================================================


def _block_max_eigenvalue(D: Matrix) -> float:
    if D.size == 0:
        return 0.0
    return float(sla.svdvals(D)[0] ** 2 / D.shape[1])


def detect_block(state: TrackerState, Lhat_block: Matrix) -> bool:
    """Declare a change when lambda_max((1/alpha) D D') >= thresh, D = (I - P_star P_star') L."""
    if state.phase is not Phase.DETECT:
        raise TrackerInvariantError(f"detect_block called in phase {state.phase.value}")
    D = proj_orth(state.P_star, Lhat_block)
    lam_max = _block_max_eigenvalue(D)
    logger.debug(f"[Tracker] t={state.t} detect lambda_max={lam_max:.4g} thresh={state.thresh:.4g}")
    if lam_max < state.thresh:
        return False
    state.phase = Phase.PPCA
    state.j += 1
    state.k = 0
    state.t_hat.append(state.t)
    state.r_new_history.append([])
    logger.info(f"[Tracker] change {state.j} detected at t={state.t} (lambda_max={lam_max:.4g})")
    return True


def _ppca_change(previous: Matrix, current: Matrix, L: Matrix) -> float:
    if previous.shape[1] == 0 or current.shape[1] == 0:
        return math.inf
    now = current @ (current.T @ L)
    before = previous @ (previous.T @ L)
    denominator = float(np.linalg.norm(now))
    if denominator == 0.0:
        return math.inf
    return float(np.linalg.norm(now - before)) / denominator


def ppca_block(state: TrackerState, Lhat_block: Matrix) -> tuple[Matrix, int]:
    """
    One projection-PCA step: P_new <- eigenvectors((1/alpha) D D', thresh).

    An empty estimate leaves P_new as it was. After K steps (or earlier, once
    the adaptive stopping rule fires) the phase moves on to cluster PCA.

    Returns:
        The current P_new and the estimated rank of this step
    """
    if state.phase is not Phase.PPCA:
        raise TrackerInvariantError(f"ppca_block called in phase {state.phase.value}")
    params = state.params
    if not state.k < params.K:
        raise TrackerInvariantError(f"pPCA step {state.k + 1} exceeds K = {params.K}")

    D = proj_orth(state.P_star, Lhat_block)
    candidate = eigenvectors_above(sample_covariance(D), state.thresh)
    r_hat = candidate.shape[1]
    previous = state.P_new
    if r_hat:
        r_star = state.P_star.shape[1]
        combined = orthonormalize(np.hstack([state.P_star, candidate]))
        state.P_star = combined[:, :r_star].copy()
        state.P_new = combined[:, r_star:].copy()
    state.k += 1
    if not state.r_new_history:
        state.r_new_history.append([])
    state.r_new_history[-1].append(r_hat)

    done = state.k >= params.K
    if not done and params.adaptive_k and state.k >= params.k_min:
        change = _ppca_change(previous, state.P_new, Lhat_block)
        logger.debug(f"[Tracker] t={state.t} pPCA relative change {change:.4g}")
        done = change < params.k_tol
    if done:
        state.phase = Phase.CPCA
        state.k = 0
    return state.P_new, r_hat


def cluster_estimate(state: TrackerState, Lhat_block: Matrix) -> list[int]:
    """Partition the block covariance spectrum into clusters; floor is 0.25 lambda_train_minus."""
    if state.phase is not Phase.CPCA or state.k != 0:
        raise TrackerInvariantError("cluster_estimate needs phase cpca with k = 0")
    values = sym_evd(sample_covariance(Lhat_block)).values
    sizes = partition_eigenvalues(
        values, state.params.g_hat_plus, CLUSTER_FLOOR * state.lambda_train_minus
    )
    state.cluster_partition = sizes
    state.G_done = []
    state.k = 1
    state.partition_history.append(list(sizes))
    if len(sizes) > state.params.vartheta_max:
        raise ClusterOverflowError(len(sizes), state.params.vartheta_max)
    return sizes


def cpca_block(state: TrackerState, Lhat_block: Matrix, k: int) -> Matrix:
    """Recover cluster k from the block covariance with clusters 1..k-1 projected out."""
    if state.phase is not Phase.CPCA or not 1 <= k <= len(state.cluster_partition):
        raise TrackerInvariantError(f"cpca_block step {k} outside the estimated partition")
    recovered = np.hstack(state.G_done) if state.G_done else empty_basis(state.n)
    G = deflated_top_eigenvectors(
        sample_covariance(Lhat_block), recovered, state.cluster_partition[k - 1]
    )
    state.G_done.append(G)
    state.k = k + 1
    return G


def finalize_cpca(state: TrackerState) -> TrackerState:
    """P_star <- orth([G_1 ... G_theta]), P_new <- [], back to detection."""
    if state.G_done:
        state.P_star = orthonormalize(np.hstack(state.G_done))
    state.P_new = empty_basis(state.n)
    state.G_done = []
    state.phase = Phase.DETECT
    state.k = 0
    logger.info(f"[Tracker] t={state.t} subspace finalized with rank {state.rank}")
    return state


def _merge_new(state: TrackerState) -> None:
    """Keep [P_star P_new] as the new P_star and return to detection."""
    if state.P_new.shape[1]:
        state.P_star = orthonormalize(state.Phat)
    state.P_new = empty_basis(state.n)
    state.G_done = []
    state.phase = Phase.DETECT
    state.k = 0


def offline_pass(state: TrackerState) -> list[OfflineRow]:
    """
    Re-solve the debiased LS of every buffered frame with the current Phi.

    A frame whose restricted system is singular is returned as failed; the rest
    of the batch goes on.
    """
    phi = ProjectionOperator(state.Phat)
    rows: list[OfflineRow] = []
    for t, m, support in state.offline_buf:
        y = phi.apply(m)
        try:
            x = debias_ls(phi, y, support)
        except SingularSystemError as exc:
            logger.warning(f"[Tracker] offline frame {t} failed: {exc}")
            rows.append(OfflineRow(t=t, x_hat=None, l_hat=None))
            continue
        rows.append(OfflineRow(t=t, x_hat=x, l_hat=m - x))
    if rows:
        logger.debug(f"[Tracker] offline flush of frames {rows[0].t}..{rows[-1].t}")
    state.offline_buf = []
    return rows


def finish(state: TrackerState) -> list[OfflineRow]:
    """End of stream: flush whatever the offline buffer still holds."""
    if not state.offline_buf:
        return []
    return offline_pass(state)


# =============================================================================
# Frame loop
# =============================================================================


def _check_state(state: TrackerState) -> None:
    if state.P_star.shape[0] != state.n or state.P_new.shape[0] != state.n:
        raise TrackerInvariantError(
            f"basis dimensions {state.P_star.shape}/{state.P_new.shape} disagree with n={state.n}"
        )
    if state.P_new.shape[1] and state.P_star.shape[1]:
        overlap = float(np.linalg.norm(state.P_star.T @ state.P_new, 2))
        if overlap > ORTHOGONALITY_TOL:
            raise TrackerInvariantError(f"P_star' P_new has norm {overlap:.3e}")


def _on_block_boundary(state: TrackerState) -> tuple[list[TrackerEvent], list[OfflineRow]]:
    L = np.column_stack(state.block_buf)
    t = state.t
    params = state.params
    events: list[TrackerEvent] = []
    offline: list[OfflineRow] = []

    if state.phase is Phase.DETECT:
        if detect_block(state, L):
            events.append(TrackerEvent(EventKind.CHANGE_DETECTED, t, f"j={state.j}"))

    elif state.phase is Phase.PPCA:
        _, r_hat = ppca_block(state, L)
        k = len(state.r_new_history[-1])
        if r_hat:
            events.append(TrackerEvent(EventKind.PPCA_STEP, t, f"k={k} r={r_hat}"))
        else:
            logger.warning(f"[Tracker] t={t} pPCA step {k} found no new direction")
            events.append(TrackerEvent(EventKind.PPCA_EMPTY, t, f"k={k}"))
        if state.phase is not Phase.PPCA:
            offline = offline_pass(state)
            if offline:
                events.append(
                    TrackerEvent(EventKind.OFFLINE_FLUSH, t, f"{offline[0].t}-{offline[-1].t}")
                )
            if params.vartheta_max == 0:
                _merge_new(state)
                events.append(TrackerEvent(EventKind.SUBSPACE_FINALIZED, t, f"rank={state.rank}"))

    elif state.k == 0:
        try:
            sizes = cluster_estimate(state, L)
        except ClusterOverflowError as exc:
            logger.error(f"[Tracker] t={t} {exc}; keeping the current subspace")
            events.append(
                TrackerEvent(EventKind.CLUSTERS_EXCEEDED, t, f"found={exc.found}")
            )
            _merge_new(state)
            return events, offline
        if not sizes:
            logger.warning(f"[Tracker] t={t} no eigenvalue above the cluster floor")
            events.append(TrackerEvent(EventKind.CLUSTERS_EMPTY, t))
            _merge_new(state)
        else:
            events.append(
                TrackerEvent(EventKind.CLUSTERS_ESTIMATED, t, "/".join(map(str, sizes)))
            )

    else:
        k = state.k
        try:
            cpca_block(state, L, k)
        except RankShortfallError as exc:
            logger.error(f"[Tracker] t={t} {exc}; keeping the current subspace")
            events.append(TrackerEvent(EventKind.CPCA_FAILED, t, f"k={k}"))
            _merge_new(state)
            return events, offline
        events.append(TrackerEvent(EventKind.CPCA_STEP, t, f"k={k}"))
        if k == len(state.cluster_partition):
            finalize_cpca(state)
            events.append(TrackerEvent(EventKind.SUBSPACE_FINALIZED, t, f"rank={state.rank}"))

    _check_state(state)
    return events, offline


def process_frame(state: TrackerState, m: NDArray) -> tuple[TrackerState, FrameOutput]:
    """
    Separate one frame and advance the automaton.

    Args:
        state: Tracker state, mutated in place
        m: Observed frame of dimension n

    Returns:
        The same state and the frame's output
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (state.n,):
        raise DimensionError(f"frame has shape {m.shape}, tracker dimension is {state.n}")
    _check_state(state)

    state.t += 1
    phase = state.phase
    xi, omega = _frame_params(state, m)
    recovered = recover_frame(state.Phat, m, state.params.recovery_params(xi, omega), t=state.t)
    state.block_buf.append(recovered.l_hat)
    state.offline_buf.append((state.t, m.copy(), recovered.support))
    state.l_hat_prev = recovered.l_hat

    output = FrameOutput(t=state.t, recovered=recovered, phase=phase, xi=xi, omega=omega)
    if (state.t - state.t_train) % state.params.alpha == 0:
        output.events, output.offline = _on_block_boundary(state)
        state.block_buf = []
    return state, output
