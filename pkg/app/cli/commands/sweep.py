"""`sweep`: Monte Carlo replicates of a scenario."""

import argparse
import logging
from pathlib import Path

import numpy as np

from app.core.cluster_pca import sample_covariance, suggest_g_hat_plus
from app.core.datagen import assemble, generate
from app.core.errors import ConfigError
from app.core.experiment import experiment_params, monte_carlo
from app.core.linalg import sym_evd
from app.core.matrix_io import (
    format_float,
    read_kv,
    scenario_from_kv,
    tracker_from_kv,
    write_kv,
    write_report,
)
from app.core.schemas import ScenarioConfig

logger = logging.getLogger(__name__)

TRACKER_PREFIX = "tracker."
REPORT_HEADER = ["t", "nmse_x", "err_l", "se", "precision", "recall", "nmse_offline"]


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("sweep", help="Monte Carlo experiment over seeds")
    parser.add_argument(
        "--config",
        required=True,
        type=Path,
        help="Scenario keys plus tracker keys prefixed with 'tracker.'",
    )
    parser.add_argument("--reps", required=True, type=int, help="Number of replicates R")
    parser.add_argument("--out", required=True, type=Path, help="Report directory")
    parser.add_argument("--base-seed", type=int, default=None, help="Defaults to the config seed")
    parser.add_argument("--workers", type=int, default=None, help="Overrides REPROCS_MAX_WORKERS")
    parser.add_argument("--pcp", action="store_true", help="Also score the windowed PCP baseline")
    parser.set_defaults(handler=run)


def _suggested_g_hat_plus(config: ScenarioConfig) -> float | None:
    """From the training prefix of the base seed's stream."""
    M = assemble(generate(config))[:, : config.t_train]
    values = sym_evd(sample_covariance(M)).values
    floor = 0.25 * float(values[config.r0 - 1])
    if floor <= 0:
        return None
    try:
        return suggest_g_hat_plus(values, len(config.clusters), floor)
    except ConfigError as exc:
        logger.warning(f"[sweep] no g_hat_plus suggestion: {exc}")
        return None


def run(args: argparse.Namespace) -> int:
    path: Path = args.config
    entries = read_kv(path)
    tracker_entries = {
        key[len(TRACKER_PREFIX) :]: value
        for key, value in entries.items()
        if key.startswith(TRACKER_PREFIX)
    }
    config = scenario_from_kv(
        {k: v for k, v in entries.items() if not k.startswith(TRACKER_PREFIX)}, path
    )

    xi, omega = experiment_params(config)
    defaults = {"r0": str(config.r0), "xi": format_float(xi), "omega": format_float(omega)}
    for key, value in defaults.items():
        if key == "r0" and "energy_fraction" in tracker_entries:
            continue
        tracker_entries.setdefault(key, (value, 0))
    params = tracker_from_kv(tracker_entries, path)

    base_seed = config.seed if args.base_seed is None else args.base_seed
    report = monte_carlo(
        config, params, args.reps, base_seed=base_seed, max_workers=args.workers, with_pcp=args.pcp
    )

    out: Path = args.out
    header = list(REPORT_HEADER)
    columns = [
        report.t,
        report.nmse_curve,
        report.err_l_curve,
        report.se_curve,
        report.precision_curve,
        report.recall_curve,
        report.nmse_offline_curve,
    ]
    if report.pcp_nmse_curve:
        header.append("nmse_pcp")
        columns.append(report.pcp_nmse_curve)
    if report.succeeded:
        write_report(out / "report.csv", header, columns)

    runs = report.runs
    write_report(
        out / "runs.csv",
        [
            "seed",
            "failed",
            "mean_nmse",
            "mean_pcp_nmse",
            "support_exact_fraction",
            "detection_delays",
            "cluster_recovered",
            "ranks_after_finalize",
            "runtime_s",
        ],
        [
            [r.seed for r in runs],
            [r.failed for r in runs],
            [r.mean_nmse for r in runs],
            [r.mean_pcp_nmse for r in runs],
            [r.support_exact_fraction for r in runs],
            [" ".join(map(str, r.detection_delays)) for r in runs],
            [" ".join(str(int(v)) for v in r.cluster_recovered) for r in runs],
            [" ".join(map(str, r.ranks_after_finalize)) for r in runs],
            [round(r.runtime_s, 3) for r in runs],
        ],
    )

    recovered = [v for r in runs for v in r.cluster_recovered]
    delays = [d for r in runs for d in r.detection_delays]
    summary = {
        "replicates": report.replicates,
        "succeeded": report.succeeded,
        "failed_seeds": report.failed_seeds,
        "xi": params.xi,
        "omega": params.omega,
        "mean_nmse": report.mean_nmse,
        "mean_pcp_nmse": report.mean_pcp_nmse,
        "max_detection_delay": max(delays) if delays else None,
        "cluster_recovery_rate": float(np.mean(recovered)) if recovered else None,
        "mean_runtime_s": float(np.mean([r.runtime_s for r in runs if not r.failed] or [0.0])),
        "suggested_g_hat_plus": _suggested_g_hat_plus(config.model_copy(update={"seed": base_seed})),
    }
    write_kv(out / "summary.txt", summary)
    logger.info(
        f"[sweep] {report.succeeded}/{report.replicates} replicates, mean nmse {report.mean_nmse:.4g}"
    )
    return 0 if report.succeeded else 3
