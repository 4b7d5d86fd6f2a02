"""
Synthetic streams m_t = l_t + x_t + w_t with retained ground truth.

Frames are indexed t = 1..t_max (column t-1 of every matrix); frames
1..t_train form the outlier-free training prefix.

Every matrix role draws from its own Philox4x64 counter-based stream keyed by
SeedSequence(seed, spawn_key=(role,)), so a stream can be reproduced without
replaying the others.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import NDArray

from app.core.errors import ConfigError, DimensionError
from app.core.linalg import Matrix, denseness_mu, orthonormalize
from app.core.schemas import CHI_PLUS, RectangleConfig, ScenarioConfig

logger = logging.getLogger(__name__)

ROLE_KEYS = {"bases": 1, "lowrank": 2, "sparse": 3, "noise": 4, "foreground": 5}


def role_rng(seed: int, role: str) -> np.random.Generator:
    """Independent Philox stream for one matrix role."""
    if role not in ROLE_KEYS:
        raise ConfigError(f"unknown generator role: {role}")
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(ROLE_KEYS[role],))
    return np.random.Generator(np.random.Philox(sequence))


@dataclass
class SubspaceEpoch:
    """Frames [start, end) sharing one basis and one coefficient law."""

    start: int
    end: int
    columns: NDArray[np.int_]
    half_ranges: NDArray[np.float64]
    basis: Matrix

    def partition(self) -> list[int]:
        """Cluster sizes: columns grouped by coefficient range, largest range first."""
        ranges = np.round(self.half_ranges[self.half_ranges > 0], 12)
        values, counts = np.unique(ranges, return_counts=True)
        order = np.argsort(-values)
        return [int(c) for c in counts[order]]


@dataclass
class GroundTruth:
    L: Matrix
    S: Matrix
    W: Matrix
    supports: list[NDArray[np.int_]]
    epochs: list[SubspaceEpoch]
    t_train: int
    background_mean: NDArray[np.float64] | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.L.shape[0]

    @property
    def t_max(self) -> int:
        return self.L.shape[1]

    @property
    def cluster_partitions(self) -> list[list[int]]:
        return [epoch.partition() for epoch in self.epochs]

    def epoch_at(self, t: int) -> SubspaceEpoch:
        for epoch in self.epochs:
            if epoch.start <= t < epoch.end:
                return epoch
        raise DimensionError(f"frame {t} outside [1, {self.t_max}]")

    def basis_at(self, t: int) -> Matrix:
        return self.epoch_at(t).basis


def gen_basis_sequence(config: ScenarioConfig, rng: np.random.Generator) -> list[SubspaceEpoch]:
    """
    Draw the basis schedule.

    One n x (r0 + sum r_new) Gaussian matrix is orthonormalized; P_0 takes the
    first r0 columns, each change appends the next r_new columns and deletes
    the r_old lowest-variance established columns. New columns use gamma_new
    until t_j + d and the destination cluster's range afterwards.
    """
    total = config.r0 + sum(config.r_new)
    if total > config.n:
        raise ConfigError(f"{total} basis columns requested in dimension {config.n}")
    full = orthonormalize(rng.standard_normal((config.n, total)))

    column_range: dict[int, float] = {}
    next_col = 0
    for spec in config.clusters:
        for _ in range(spec.size):
            column_range[next_col] = spec.half_range
            next_col += 1
    destination = config.clusters[config.destination_cluster].half_range

    # (frame, action) events, applied in time order
    events: list[tuple[int, int, str, Any]] = []
    for j, t_j in enumerate(config.change_times):
        events.append((t_j, 0, "change", j))
        if config.d > 0:
            events.append((t_j + config.d, 1, "settle", j))
    events.sort(key=lambda e: (e[0], e[1]))

    new_columns: dict[int, list[int]] = {}
    boundaries: list[tuple[int, dict[int, float]]] = [(1, dict(column_range))]
    active = dict(column_range)
    for frame, _, action, j in events:
        if action == "change":
            settling = {c for cols in new_columns.values() for c in cols}
            candidates = sorted(
                (c for c in active if c not in settling), key=lambda c: (active[c], c)
            )
            for c in candidates[: config.r_old[j]]:
                del active[c]
            added = list(range(next_col, next_col + config.r_new[j]))
            next_col += config.r_new[j]
            for c in added:
                active[c] = config.gamma_new if config.d > 0 else destination
            new_columns[j] = added
        else:
            for c in new_columns.pop(j, []):
                if c in active:
                    active[c] = destination
        if frame <= config.t_max:
            boundaries.append((frame, dict(active)))

    epochs: list[SubspaceEpoch] = []
    for k, (start, cols) in enumerate(boundaries):
        end = boundaries[k + 1][0] if k + 1 < len(boundaries) else config.t_max + 1
        if end <= start:
            continue
        ordered = np.array(sorted(cols), dtype=int)
        epochs.append(
            SubspaceEpoch(
                start=start,
                end=end,
                columns=ordered,
                half_ranges=np.array([cols[c] for c in ordered]),
                basis=full[:, ordered],
            )
        )
    return epochs


def gen_lowrank(
    config: ScenarioConfig, epochs: list[SubspaceEpoch], rng: np.random.Generator
) -> Matrix:
    """l_t = b l_{t-1} + P_t a_t with l_0 = 0 and independent coefficients a_t."""
    L = np.zeros((config.n, config.t_max))
    prev = np.zeros(config.n)
    for epoch in epochs:
        length = epoch.end - epoch.start
        r = epoch.columns.size
        if config.coef_law == "uniform":
            coeffs = rng.uniform(-1.0, 1.0, size=(r, length)) * epoch.half_ranges[:, None]
        else:
            coeffs = rng.standard_normal((r, length)) * (epoch.half_ranges[:, None] / np.sqrt(3.0))
        nu = epoch.basis @ coeffs
        for k in range(length):
            prev = config.b * prev + nu[:, k]
            L[:, epoch.start - 1 + k] = prev
    return L


def gen_support_walk(config: ScenarioConfig) -> list[NDArray[np.int_]]:
    """
    Walking-block supports: empty on the training prefix, then s contiguous
    indices moved down by step every beta frames. With wrap the block wraps
    around index n; without it the block restarts from the top once it would
    leave the bottom.
    """
    n = config.n
    sup = config.support
    positions = (n - sup.s) // sup.step + 1
    supports: list[NDArray[np.int_]] = []
    for t in range(1, config.t_max + 1):
        if t <= config.t_train:
            supports.append(np.zeros(0, dtype=int))
            continue
        epoch = (t - config.t_train - 1) // sup.beta
        if sup.wrap:
            start = epoch * sup.step
            supports.append(np.sort((start + np.arange(sup.s)) % n))
        else:
            start = (epoch % positions) * sup.step
            supports.append(start + np.arange(sup.s))
    return supports


def gen_sparse(
    supports: list[NDArray[np.int_]], n: int, x_min: float, rng: np.random.Generator
) -> Matrix:
    """Outlier magnitudes uniform on [x_min, 3 x_min] over each support."""
    if not x_min > 0:
        raise ConfigError(f"x_min must be positive, got {x_min}")
    S = np.zeros((n, len(supports)))
    for k, support in enumerate(supports):
        if support.size:
            S[support, k] = rng.uniform(x_min, 3.0 * x_min, size=support.size)
    return S


def gen_noise(n: int, t_max: int, eps_w: float, rng: np.random.Generator) -> Matrix:
    """Uniform direction on the sphere times a uniform radius in [0, eps_w]."""
    if eps_w < 0:
        raise ConfigError(f"eps_w must be non-negative, got {eps_w}")
    if eps_w == 0:
        return np.zeros((n, t_max))
    directions = rng.standard_normal((n, t_max))
    directions /= np.linalg.norm(directions, axis=0, keepdims=True)
    radii = rng.uniform(0.0, eps_w, size=t_max)
    return directions * radii


def assemble(gt: GroundTruth) -> Matrix:
    """M = L + S + W, with the outlier part forced to zero on the training prefix."""
    if not gt.L.shape == gt.S.shape == gt.W.shape:
        raise DimensionError(
            f"component shapes differ: L {gt.L.shape}, S {gt.S.shape}, W {gt.W.shape}"
        )
    gt.S[:, : gt.t_train] = 0.0
    return gt.L + gt.S + gt.W


@dataclass
class OverlayResult:
    M: Matrix
    S: Matrix
    supports: list[NDArray[np.int_]]
    background_mean: NDArray[np.float64] | None


def overlay_foreground(
    background: Matrix,
    rect: RectangleConfig,
    t_train: int = 0,
    noise: Matrix | None = None,
) -> OverlayResult:
    """
    Paint a moving rectangle of constant intensity over a background stream.

    Frames are row-major vectorized rows x cols images. The rectangle enters at
    frame t_train + 1 and shifts right by rect.dx columns per frame; observed
    pixels inside it equal rect.intensity.

    Args:
        background: n x t matrix of background frames
        rect: Rectangle geometry and intensity
        t_train: Number of leading frames left without foreground
        noise: Optional additive noise already present in the observation

    Returns:
        OverlayResult with the observation, the foreground part and supports
    """
    n, t_max = background.shape
    if rect.rows * rect.cols != n:
        raise ConfigError(f"grid {rect.rows}x{rect.cols} does not match n = {n}")
    if rect.top + rect.height > rect.rows:
        raise ConfigError("rectangle extends below the grid")
    last_left = rect.left + (t_max - t_train - 1) * rect.dx
    if not rect.wrap and (rect.left + rect.width > rect.cols or last_left + rect.width > rect.cols):
        raise ConfigError("rectangle leaves the grid and wrap is disabled")

    mean = None
    L = background
    if rect.subtract_mean and t_train > 0:
        mean = background[:, :t_train].mean(axis=1)
        L = background - mean[:, None]
    observed = L if noise is None else L + noise

    S = np.zeros_like(L)
    supports: list[NDArray[np.int_]] = []
    rows = np.arange(rect.top, rect.top + rect.height)
    for k in range(t_max):
        if k < t_train:
            supports.append(np.zeros(0, dtype=int))
            continue
        left = rect.left + (k - t_train) * rect.dx
        cols = np.arange(left, left + rect.width) % rect.cols
        support = np.sort((rows[:, None] * rect.cols + cols[None, :]).ravel())
        S[support, k] = rect.intensity - observed[support, k]
        supports.append(support)
    return OverlayResult(M=observed + S, S=S, supports=supports, background_mean=mean)


def scenario_diagnostics(
    config: ScenarioConfig,
    epochs: list[SubspaceEpoch],
    alpha: int | None = None,
    K: int | None = None,
) -> dict[str, Any]:
    """
    Model checks of a generated scenario.

    Covers support motion (rho, rho^2 beta), denseness of every basis (mu),
    cluster separation (consecutive configured variance ratios against chi+)
    and the slow-change band the new-direction variance should fall in. The
    notes entry lists the violated checks; alpha and K enable the block-length
    ones.
    """
    sup = config.support
    variances = [c.variance for c in config.clusters]
    ratios = [
        variances[i + 1] / variances[i] if variances[i] > 0 else math.inf
        for i in range(len(variances) - 1)
    ]
    return {
        "rho": sup.rho,
        "rho2_beta": sup.rho**2 * sup.beta,
        "mu": [denseness_mu(epoch.basis) for epoch in epochs if epoch.columns.size],
        "partitions": [epoch.partition() for epoch in epochs],
        "gamma": [float(np.sqrt(np.sum(epoch.half_ranges**2))) for epoch in epochs],
        "cluster_variances": variances,
        "cluster_variance_ratios": ratios,
        "chi_plus": CHI_PLUS,
        "new_variance": config.new_variance if config.J else None,
        "slow_change_band": config.slow_change_band(),
        "notes": config.model_notes(alpha, K),
    }


def generate(config: ScenarioConfig) -> GroundTruth:
    """Full scenario: bases, low-rank AR sequence, supports, outliers, noise."""
    epochs = gen_basis_sequence(config, role_rng(config.seed, "bases"))
    L = gen_lowrank(config, epochs, role_rng(config.seed, "lowrank"))
    W = gen_noise(config.n, config.t_max, config.eps_w, role_rng(config.seed, "noise"))

    mean = None
    if config.foreground is not None:
        overlay = overlay_foreground(L, config.foreground, config.t_train, noise=W)
        mean = overlay.background_mean
        if mean is not None:
            L = L - mean[:, None]
        S, supports = overlay.S, overlay.supports
    else:
        supports = gen_support_walk(config)
        S = gen_sparse(supports, config.n, config.x_min, role_rng(config.seed, "sparse"))

    gt = GroundTruth(
        L=L, S=S, W=W, supports=supports, epochs=epochs, t_train=config.t_train, background_mean=mean
    )
    gt.diagnostics = scenario_diagnostics(config, epochs)
    logger.info(
        f"[Datagen] n={config.n} t_max={config.t_max} changes={config.change_times} "
        f"partitions={gt.diagnostics['partitions']}"
    )
    return gt
