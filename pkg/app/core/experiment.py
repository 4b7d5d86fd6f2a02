"""
Simulation harness: generate a scenario, train, stream it through the tracker,
score every frame against ground truth, and aggregate Monte Carlo replicates.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from app.core.datagen import GroundTruth, assemble, generate
from app.core.errors import ConfigError, ToolkitError
from app.core.linalg import Matrix, subspace_dif
from app.core.metrics import frame_nmse, nmse, support_metrics
from app.core.pcp import pcp_windowed
from app.core.schemas import (
    ExperimentReport,
    FrameRecord,
    Phase,
    ReplicateSummary,
    ScenarioConfig,
    TrackerParams,
)
from app.core.settings import get_settings
from app.core.tracker import (
    EventKind,
    OfflineRow,
    TrackerEvent,
    TrackerState,
    finish,
    process_frame,
    train_init,
)

logger = logging.getLogger(__name__)


def experiment_params(config: ScenarioConfig) -> tuple[float, float]:
    """
    Fixed (xi, omega) for a synthetic scenario.

    xi = sqrt(r_new / 2) gamma_new with the largest r_new, and
    omega = (x_min - 14 xi) / 2, raised to 7 xi when the formula falls below it.
    """
    r_new = max(config.r_new, default=0)
    xi = math.sqrt(r_new / 2) * config.gamma_new
    omega = (config.x_min - 14.0 * xi) / 2.0
    if omega < 7.0 * xi:
        logger.warning(
            f"[Experiment] omega = {omega:.4g} below 7 xi = {7 * xi:.4g}; using 7 xi "
            f"(x_min is too small for xi)"
        )
        omega = 7.0 * xi
    if omega <= 0:
        omega = config.x_min / 2.0
    return xi, omega


@dataclass
class RunResult:
    """Per-frame outputs of one streamed run, plus the tracker state it ended in."""

    t: list[int]
    x_hat: Matrix
    l_hat: Matrix
    x_offline: Matrix
    supports_hat: list[NDArray[np.int_]]
    phases: list[Phase]
    events: list[list[TrackerEvent]]
    se: list[float | None]
    ranks: list[int]
    state: TrackerState
    records: list[FrameRecord] = field(default_factory=list)

    @property
    def t_hat(self) -> list[int]:
        return list(self.state.t_hat)

    @property
    def r_new_history(self) -> list[list[int]]:
        return [list(h) for h in self.state.r_new_history]

    @property
    def all_events(self) -> list[TrackerEvent]:
        return [event for frame_events in self.events for event in frame_events]


def _store_offline(result: RunResult, rows: list[OfflineRow]) -> None:
    first_t = result.t[0] if result.t else result.state.t + 1
    for row in rows:
        k = row.t - first_t
        if row.x_hat is not None and 0 <= k < result.x_offline.shape[1]:
            result.x_offline[:, k] = row.x_hat


def stream(
    M: Matrix,
    t_train: int,
    params: TrackerParams,
    truth_bases: list[Matrix] | None = None,
    state: TrackerState | None = None,
    flush: bool = True,
) -> RunResult:
    """
    Train on the first t_train columns of M and track the rest.

    Args:
        M: n x t_max observation matrix
        t_train: Length of the outlier-free prefix
        params: Tracker parameters
        truth_bases: Optional true basis per tracked frame, for the SE column
        state: Resume from this state instead of training; frames up to state.t are skipped
        flush: Flush the offline buffer at the end of the stream

    Returns:
        RunResult with one entry per tracked frame; offline estimates are NaN
        for frames whose offline solve failed or was not flushed
    """
    n, t_max = M.shape
    if state is None:
        state = train_init(M[:, :t_train], params)
    start = state.t
    count = max(t_max - start, 0)
    result = RunResult(
        t=[],
        x_hat=np.zeros((n, count)),
        l_hat=np.zeros((n, count)),
        x_offline=np.full((n, count), np.nan),
        supports_hat=[],
        phases=[],
        events=[],
        se=[],
        ranks=[],
        state=state,
    )

    for col in range(start, t_max):
        state, output = process_frame(state, M[:, col])
        k = col - start
        result.x_hat[:, k] = output.recovered.x_hat
        result.l_hat[:, k] = output.recovered.l_hat
        result.t.append(output.t)
        result.supports_hat.append(output.recovered.support)
        result.phases.append(output.phase)
        result.events.append(output.events)
        result.ranks.append(state.rank)
        if truth_bases is not None:
            result.se.append(subspace_dif(state.Phat, truth_bases[k]))
        else:
            result.se.append(None)
        _store_offline(result, output.offline)

    if flush:
        finish_stream(result)
    return result


def finish_stream(result: RunResult) -> None:
    """Flush the tracker's remaining offline buffer into the result."""
    state = result.state
    rows = finish(state)
    _store_offline(result, rows)
    if rows and result.events:
        result.events[-1].append(
            TrackerEvent(EventKind.OFFLINE_FLUSH, state.t, f"{rows[0].t}-{rows[-1].t}")
        )


def score(result: RunResult, gt: GroundTruth) -> list[FrameRecord]:
    """Per-frame records against ground truth."""
    records: list[FrameRecord] = []
    for k, t in enumerate(result.t):
        col = t - 1
        x = gt.S[:, col]
        precision, recall = support_metrics(gt.supports[col], result.supports_hat[k])
        records.append(
            FrameRecord(
                t=t,
                nmse_x=frame_nmse(x, result.x_hat[:, k]),
                err_l=float(np.linalg.norm(gt.L[:, col] - result.l_hat[:, k])),
                se=result.se[k],
                support_precision=precision,
                support_recall=recall,
                phase=result.phases[k],
                events=";".join(str(e) for e in result.events[k]),
            )
        )
    result.records = records
    return records


def _summarize(
    config: ScenarioConfig,
    params: TrackerParams,
    gt: GroundTruth,
    result: RunResult,
) -> ReplicateSummary:
    t_train = config.t_train
    summary = ReplicateSummary(seed=config.seed, change_times=list(config.change_times))
    events = result.all_events

    for t_j in config.change_times:
        detected = [t for t in result.t_hat if t >= t_j]
        if detected:
            summary.detected_times.append(detected[0])
            summary.detection_delays.append(detected[0] - t_j)
    false_alarms = [
        t for t in result.t_hat if not any(t_j <= t for t_j in config.change_times)
    ]
    if false_alarms:
        logger.warning(f"[Experiment] seed {config.seed}: detections before any change {false_alarms}")

    for event in events:
        if event.kind is EventKind.CLUSTERS_ESTIMATED:
            truth = gt.epoch_at(event.t).partition()
            estimate = [int(s) for s in event.detail.split("/")]
            summary.true_partitions.append(truth)
            summary.estimated_partitions.append(estimate)
            summary.cluster_recovered.append(truth == estimate)
        elif event.kind is EventKind.SUBSPACE_FINALIZED:
            summary.ranks_after_finalize.append(int(event.detail.split("=")[1]))

    summary.ppca_ranks = result.r_new_history
    K = params.K
    alpha = params.alpha
    for t_hat in result.t_hat:
        in_ppca = [
            result.ranks[k]
            for k, t in enumerate(result.t)
            if t_hat < t <= t_hat + K * alpha and result.phases[k] is Phase.PPCA
        ]
        summary.max_rank_during_ppca.append(max(in_ppca, default=0))
        se_blocks = []
        for step in range(K + 1):
            t = t_hat + step * alpha
            k = t - t_train - 1
            if 0 <= k < len(result.se) and result.se[k] is not None:
                se_blocks.append(float(result.se[k]))
        summary.se_at_ppca_blocks.append(se_blocks)

    flushes = [e for e in events if e.kind is EventKind.OFFLINE_FLUSH]
    for t_j in config.change_times:
        after = [e.t for e in flushes if e.t >= t_j]
        if after:
            summary.flush_delays.append(after[0] - t_j)
    for event in flushes:
        first, last = (int(v) for v in event.detail.split("-"))
        ks = np.arange(first - t_train - 1, last - t_train)
        cols = ks + t_train
        truth = gt.S[:, cols]
        offline = result.x_offline[:, ks]
        valid = ~np.isnan(offline).any(axis=0)
        if not np.any(valid):
            continue
        offline_err = np.linalg.norm(truth[:, valid] - offline[:, valid], axis=0)
        online_err = np.linalg.norm(truth[:, valid] - result.x_hat[:, ks[valid]], axis=0)
        summary.offline_vs_online.append((float(offline_err.mean()), float(online_err.mean())))

    exact = [
        np.array_equal(np.sort(gt.supports[t - 1]), result.supports_hat[k])
        for k, t in enumerate(result.t)
    ]
    summary.support_exact_fraction = float(np.mean(exact)) if exact else None
    value = nmse(gt.S[:, t_train:], result.x_hat)
    summary.mean_nmse = None if math.isnan(value) else value
    return summary


def simulate(
    config: ScenarioConfig, params: TrackerParams
) -> tuple[GroundTruth, RunResult, ReplicateSummary]:
    """Generate, track and score one scenario."""
    started = time.perf_counter()
    config.advisory_warnings(params.alpha, params.K)
    gt = generate(config)
    M = assemble(gt)
    truth_bases = [gt.basis_at(t) for t in range(config.t_train + 1, config.t_max + 1)]
    result = stream(M, config.t_train, params, truth_bases)
    score(result, gt)
    summary = _summarize(config, params, gt, result)
    summary.runtime_s = time.perf_counter() - started
    logger.info(
        f"[Experiment] seed {config.seed}: nmse={summary.mean_nmse} "
        f"delays={summary.detection_delays} runtime={summary.runtime_s:.1f}s"
    )
    return gt, result, summary


def _curves(result: RunResult, gt: GroundTruth, t_train: int) -> dict[str, NDArray]:
    def column(values: list[float | None]) -> NDArray:
        return np.array([np.nan if v is None else v for v in values], dtype=np.float64)

    records = result.records
    offline = []
    for k, t in enumerate(result.t):
        x_off = result.x_offline[:, k]
        if np.isnan(x_off).any():
            offline.append(None)
        else:
            offline.append(frame_nmse(gt.S[:, t - 1], x_off))
    return {
        "nmse_x": column([r.nmse_x for r in records]),
        "err_l": column([r.err_l for r in records]),
        "se": column([r.se for r in records]),
        "precision": column([r.support_precision for r in records]),
        "recall": column([r.support_recall for r in records]),
        "nmse_offline": column(offline),
    }


def _replicate(
    config: ScenarioConfig, params: TrackerParams, with_pcp: bool, pcp_window: int
) -> tuple[ReplicateSummary, dict[str, NDArray] | None]:
    try:
        gt, result, summary = simulate(config, params)
    except ToolkitError as exc:
        logger.error(f"[Experiment] replicate seed {config.seed} failed: {exc}", exc_info=True)
        return ReplicateSummary(seed=config.seed, failed=True, error=str(exc)), None
    curves = _curves(result, gt, config.t_train)
    if with_pcp:
        S_pcp = pcp_windowed(assemble(gt), config.t_train, pcp_window)
        truth = gt.S[:, config.t_train :]
        estimate = S_pcp[:, config.t_train :]
        value = nmse(truth, estimate)
        summary.mean_pcp_nmse = None if math.isnan(value) else value
        curves["pcp_nmse"] = np.array(
            [
                np.nan if (v := frame_nmse(truth[:, k], estimate[:, k])) is None else v
                for k in range(truth.shape[1])
            ]
        )
    return summary, curves


def _aggregate(
    runs: list[tuple[ReplicateSummary, dict[str, NDArray] | None]], t: list[int]
) -> ExperimentReport:
    report = ExperimentReport(
        replicates=len(runs),
        succeeded=sum(1 for summary, _ in runs if not summary.failed),
        t=t,
        runs=[summary for summary, _ in runs],
    )
    curves = [c for _, c in runs if c is not None]
    if not curves:
        return report

    def mean_of(key: str) -> list[float]:
        if key not in curves[0]:
            return []
        stack = np.vstack([c[key] for c in curves])
        with np.errstate(invalid="ignore"):
            counts = np.sum(~np.isnan(stack), axis=0)
            sums = np.nansum(stack, axis=0)
            means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        return [float(v) for v in means]

    report.nmse_curve = mean_of("nmse_x")
    report.err_l_curve = mean_of("err_l")
    report.se_curve = mean_of("se")
    report.precision_curve = mean_of("precision")
    report.recall_curve = mean_of("recall")
    report.nmse_offline_curve = mean_of("nmse_offline")
    report.pcp_nmse_curve = mean_of("pcp_nmse")
    return report


def run_scenario(
    config: ScenarioConfig, params: TrackerParams, seed: int | None = None
) -> ExperimentReport:
    """One replicate, reported in the same shape as a Monte Carlo run."""
    if seed is not None:
        config = config.model_copy(update={"seed": seed})
    t = list(range(config.t_train + 1, config.t_max + 1))
    return _aggregate([_replicate(config, params, False, get_settings().pcp_window)], t)


def monte_carlo(
    config: ScenarioConfig,
    params: TrackerParams,
    R: int,
    base_seed: int = 0,
    max_workers: int | None = None,
    with_pcp: bool = False,
    seeds: list[int] | None = None,
) -> ExperimentReport:
    """
    R independent replicates with seeds base_seed + i, averaged per frame.

    Failed replicates stay in the report (failed=True) and are left out of the
    curves. Replicates run in a process pool when max_workers > 1
    (default: Settings.max_workers).
    """
    if R < 1:
        raise ConfigError(f"R must be at least 1, got {R}")
    settings = get_settings()
    workers = settings.max_workers if max_workers is None else max_workers
    seed_list = seeds if seeds is not None else [base_seed + i for i in range(R)]
    configs = [config.model_copy(update={"seed": s}) for s in seed_list]
    t = list(range(config.t_train + 1, config.t_max + 1))

    logger.info(f"[Experiment] {len(configs)} replicates on {max(1, workers)} worker(s)")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_replicate, c, params, with_pcp, settings.pcp_window) for c in configs
            ]
            runs = [f.result() for f in futures]
    else:
        runs = [_replicate(c, params, with_pcp, settings.pcp_window) for c in configs]

    report = _aggregate(runs, t)
    if report.failed_seeds:
        logger.warning(f"[Experiment] failed seeds: {report.failed_seeds}")
    return report
