from __future__ import annotations

import logging
import math
from enum import Enum
from typing import Literal

from pydantic import BaseModel, Field, field_validator, model_validator

logger = logging.getLogger(__name__)

# Clustering-model constants used by the advisory checks
CHI_PLUS = 0.2
G_PLUS = 3.0


class Phase(str, Enum):
    DETECT = "detect"
    PPCA = "ppca"
    CPCA = "cpca"


# =============================================================================
# Solver / tracker parameters
# =============================================================================


class SparseRecoveryParams(BaseModel):
    """Per-frame parameters of the projected sparse-recovery step."""

    xi: float = Field(0.0, ge=0.0, description="Noise-ball radius of the l1 program")
    omega: float = Field(..., gt=0.0, description="Support threshold")
    solver_tol: float = Field(1e-9, gt=0.0)
    solver_max_iter: int = Field(5000, ge=1)

    @field_validator("xi")
    @classmethod
    def _finite_xi(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("xi must be finite")
        return value


class TrackerParams(BaseModel):
    """Algorithm parameters of the ReProCS-cPCA tracker."""

    alpha: int = Field(100, ge=1, description="Block length")
    K: int = Field(12, ge=1, description="Projection-PCA blocks per change")
    vartheta_max: int = Field(
        5, ge=0, description="Cluster cap; 0 disables cluster PCA (no deletion)"
    )
    xi_mode: Literal["fixed", "auto"] = "fixed"
    xi: float = Field(0.0, ge=0.0)
    omega_mode: Literal["fixed", "auto", "seven_xi"] = "fixed"
    omega: float = Field(1.0, gt=0.0)
    q: float = Field(1.0, gt=0.0, description="Scale of the automatic omega rule")
    g_hat_plus: float = Field(3.26, gt=1.0)
    r0: int | None = Field(None, ge=1, description="Initial rank; None means energy rule")
    energy_fraction: float | None = Field(None, gt=0.0, le=1.0)
    solver_tol: float = Field(1e-9, gt=0.0)
    solver_max_iter: int = Field(5000, ge=1)
    adaptive_k: bool = False
    k_min: int = Field(3, ge=1)
    k_tol: float = Field(0.01, gt=0.0)

    @model_validator(mode="after")
    def _rank_rule(self) -> TrackerParams:
        if self.r0 is None and self.energy_fraction is None:
            raise ValueError("either r0 or energy_fraction must be set")
        return self

    def recovery_params(self, xi: float, omega: float) -> SparseRecoveryParams:
        return SparseRecoveryParams(
            xi=xi,
            omega=omega,
            solver_tol=self.solver_tol,
            solver_max_iter=self.solver_max_iter,
        )


# =============================================================================
# Scenario (data generator) configuration
# =============================================================================


class ClusterSpec(BaseModel):
    """A group of coefficient directions drawn uniform on [-half_range, half_range]."""

    size: int = Field(..., ge=1)
    half_range: float = Field(..., ge=0.0)

    @property
    def variance(self) -> float:
        return self.half_range**2 / 3.0


class SupportModelConfig(BaseModel):
    """Walking-block outlier support: s contiguous indices moved by step every beta frames."""

    s: int = Field(10, ge=1)
    step: int = Field(5, ge=1)
    beta: int = Field(25, ge=1)
    wrap: bool = True

    @model_validator(mode="after")
    def _step_within_block(self) -> SupportModelConfig:
        if self.step > self.s:
            raise ValueError(f"support step {self.step} exceeds object length {self.s}")
        return self

    @property
    def rho(self) -> int:
        return math.ceil(self.s / self.step)


class RectangleConfig(BaseModel):
    """Moving rectangular foreground on a rows x cols frame grid."""

    rows: int = Field(..., ge=1)
    cols: int = Field(..., ge=1)
    top: int = Field(..., ge=0)
    left: int = Field(..., ge=0)
    height: int = Field(..., ge=1)
    width: int = Field(..., ge=1)
    dx: int = Field(1, ge=0, description="Columns moved per frame")
    intensity: float = 185.0
    wrap: bool = False
    subtract_mean: bool = False


class ScenarioConfig(BaseModel):
    """Parameters of the synthetic low-rank + sparse + noise stream."""

    n: int = Field(..., ge=1)
    t_max: int = Field(..., ge=2)
    t_train: int = Field(..., ge=1)
    change_times: list[int] = Field(default_factory=list)
    r0: int = Field(..., ge=1)
    r_new: list[int] = Field(default_factory=list)
    r_old: list[int] = Field(default_factory=list)
    b: float = Field(0.1, ge=0.0, lt=1.0, description="AR(1) coefficient")
    clusters: list[ClusterSpec] = Field(default_factory=list)
    new_cluster: int | None = Field(
        None, description="Cluster index new directions join after d frames (default: last)"
    )
    gamma_new: float = Field(1.0, ge=0.0)
    d: int = Field(1700, ge=0, description="Slow-change duration")
    eps_w: float = Field(0.0, ge=0.0)
    support: SupportModelConfig = Field(default_factory=SupportModelConfig)
    x_min: float = Field(20.0, gt=0.0)
    seed: int = 0
    coef_law: Literal["uniform", "gaussian"] = "uniform"
    foreground: RectangleConfig | None = None

    @model_validator(mode="after")
    def _consistent(self) -> ScenarioConfig:
        J = len(self.change_times)
        if len(self.r_new) == 1 and J > 1:
            self.r_new = self.r_new * J
        if len(self.r_old) == 1 and J > 1:
            self.r_old = self.r_old * J
        if not self.r_old and J:
            self.r_old = [0] * J
        if len(self.r_new) != J or len(self.r_old) != J:
            raise ValueError(f"r_new/r_old must have one entry per change ({J})")
        if any(a >= b for a, b in zip(self.change_times, self.change_times[1:])):
            raise ValueError("change_times must be strictly increasing")
        if J and (self.change_times[0] <= self.t_train or self.change_times[-1] >= self.t_max):
            raise ValueError("change_times must lie in (t_train, t_max)")
        if self.t_train >= self.t_max:
            raise ValueError("t_train must be smaller than t_max")
        if not self.clusters:
            self.clusters = [ClusterSpec(size=self.r0, half_range=1.0)]
        if sum(c.size for c in self.clusters) != self.r0:
            raise ValueError("cluster sizes must sum to r0")
        if self.r0 + sum(self.r_new) > self.n:
            raise ValueError("r0 + sum(r_new) basis columns exceed n")
        rank = self.r0
        for r_new, r_old in zip(self.r_new, self.r_old):
            if r_old > rank:
                raise ValueError("cannot delete more directions than the subspace holds")
            rank += r_new - r_old
        if self.support.s > self.n:
            raise ValueError("support length exceeds n")
        if self.new_cluster is not None and not 0 <= self.new_cluster < len(self.clusters):
            raise ValueError("new_cluster out of range")
        if self.foreground is not None and self.foreground.rows * self.foreground.cols != self.n:
            raise ValueError("foreground grid rows*cols must equal n")
        return self

    @property
    def J(self) -> int:
        return len(self.change_times)

    @property
    def destination_cluster(self) -> int:
        return len(self.clusters) - 1 if self.new_cluster is None else self.new_cluster

    def rank_after(self, j: int) -> int:
        """Rank of P_t after the j-th change (j = 0 is the initial subspace)."""
        return self.r0 + sum(self.r_new[:j]) - sum(self.r_old[:j])

    @property
    def new_variance(self) -> float:
        return self.gamma_new**2 / 3.0

    def slow_change_band(self) -> tuple[float, float] | None:
        """[lambda_minus, 3 lambda_minus] over the positive configured cluster variances."""
        positive = [c.variance for c in self.clusters if c.variance > 0]
        if not positive:
            return None
        lam_minus = min(positive)
        return lam_minus, 3 * lam_minus

    def model_notes(self, alpha: int | None = None, K: int | None = None) -> list[str]:
        """Model checks that are reported, never enforced."""
        notes: list[str] = []
        variances = [c.variance for c in self.clusters]
        for i in range(len(variances) - 1):
            if variances[i] > 0 and variances[i + 1] / variances[i] > CHI_PLUS:
                notes.append(
                    f"clusters {i}/{i + 1}: variance ratio "
                    f"{variances[i + 1] / variances[i]:.3f} > chi+ = {CHI_PLUS}"
                )
        band = self.slow_change_band()
        if band is not None and self.J:
            low, high = band
            if not low <= self.new_variance <= high:
                notes.append(
                    f"new-direction variance {self.new_variance:.4g} outside [{low:.4g}, {high:.4g}]"
                )
        if alpha is not None:
            rho = self.support.rho
            if rho**2 * self.support.beta > 1e-4 * alpha:
                notes.append(
                    f"support model: rho^2 beta = {rho**2 * self.support.beta} > 0.0001 alpha"
                )
            if K is not None:
                boundaries = [self.t_train, *self.change_times, self.t_max]
                for a, b in zip(boundaries[1:], boundaries[2:]):
                    if b - a <= (K + 2) * alpha:
                        notes.append(f"gap {b - a} after change at {a} is <= (K+2) alpha")
        return notes

    def advisory_warnings(self, alpha: int | None = None, K: int | None = None) -> list[str]:
        """model_notes, each logged as a warning."""
        notes = self.model_notes(alpha, K)
        for note in notes:
            logger.warning(f"[Scenario] {note}")
        return notes


# =============================================================================
# Evaluation records
# =============================================================================


class FrameRecord(BaseModel):
    t: int
    nmse_x: float | None = None
    err_l: float | None = None
    se: float | None = Field(None, ge=0.0, le=1.0)
    support_precision: float | None = Field(None, ge=0.0, le=1.0)
    support_recall: float | None = Field(None, ge=0.0, le=1.0)
    phase: Phase = Phase.DETECT
    events: str = ""


class ReplicateSummary(BaseModel):
    """Scalar outcomes of one simulated run."""

    seed: int
    failed: bool = False
    error: str | None = None
    change_times: list[int] = Field(default_factory=list)
    detected_times: list[int] = Field(default_factory=list)
    detection_delays: list[int] = Field(default_factory=list)
    true_partitions: list[list[int]] = Field(default_factory=list)
    estimated_partitions: list[list[int]] = Field(default_factory=list)
    cluster_recovered: list[bool] = Field(default_factory=list)
    ranks_after_finalize: list[int] = Field(default_factory=list)
    max_rank_during_ppca: list[int] = Field(default_factory=list)
    ppca_ranks: list[list[int]] = Field(default_factory=list)
    se_at_ppca_blocks: list[list[float]] = Field(default_factory=list)
    flush_delays: list[int] = Field(default_factory=list)
    offline_vs_online: list[tuple[float, float]] = Field(default_factory=list)
    support_exact_fraction: float | None = None
    mean_nmse: float | None = None
    mean_pcp_nmse: float | None = None
    runtime_s: float = 0.0


class ExperimentReport(BaseModel):
    """Per-frame mean curves and per-replicate outcomes over R runs."""

    replicates: int
    succeeded: int
    t: list[int] = Field(default_factory=list)
    nmse_curve: list[float] = Field(default_factory=list)
    nmse_offline_curve: list[float] = Field(default_factory=list)
    err_l_curve: list[float] = Field(default_factory=list)
    se_curve: list[float] = Field(default_factory=list)
    precision_curve: list[float] = Field(default_factory=list)
    recall_curve: list[float] = Field(default_factory=list)
    pcp_nmse_curve: list[float] = Field(default_factory=list)
    runs: list[ReplicateSummary] = Field(default_factory=list)

    @property
    def failed_seeds(self) -> list[int]:
        return [run.seed for run in self.runs if run.failed]

    @property
    def mean_nmse(self) -> float:
        values = [run.mean_nmse for run in self.runs if run.mean_nmse is not None]
        return float(sum(values) / len(values)) if values else float("nan")

    @property
    def mean_pcp_nmse(self) -> float:
        values = [run.mean_pcp_nmse for run in self.runs if run.mean_pcp_nmse is not None]
        return float(sum(values) / len(values)) if values else float("nan")
