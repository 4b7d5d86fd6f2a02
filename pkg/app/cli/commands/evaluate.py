"""`eval`: score tracker output against a gen directory."""

import argparse
import logging
from pathlib import Path

import numpy as np

from app.core.errors import DimensionError
from app.core.matrix_io import (
    read_kv,
    read_matrix,
    read_records,
    read_supports,
    write_kv,
    write_report,
)
from app.core.metrics import frame_nmse, nmse, support_metrics

logger = logging.getLogger(__name__)

REPORT_HEADER = ["t", "nmse_x", "err_l", "se", "precision", "recall", "nmse_offline"]


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("eval", help="Per-frame metrics of a tracked run")
    parser.add_argument("--records", required=True, type=Path, help="records.csv from track")
    parser.add_argument("--truth", required=True, type=Path, help="gen output directory")
    parser.add_argument("--out", required=True, type=Path, help="report.csv path")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    records = read_records(args.records)
    run_dir = args.records.parent
    x_hat = read_matrix(run_dir / "xhat.csv")
    l_hat = read_matrix(run_dir / "lhat.csv")
    x_offline = read_matrix(run_dir / "xhat_offline.csv")
    supports_hat = read_supports(run_dir / "support_hat.csv")

    truth: Path = args.truth
    S = read_matrix(truth / "S.csv")
    L = read_matrix(truth / "L.csv")
    supports = read_supports(truth / "supports.csv")
    if x_hat.shape[1] != len(records) or x_hat.shape[0] != S.shape[0]:
        raise DimensionError(
            f"xhat.csv is {x_hat.shape}, expected ({S.shape[0]}, {len(records)})"
        )

    columns: dict[str, list] = {key: [] for key in REPORT_HEADER}
    exact = 0
    for k, record in enumerate(records):
        col = record.t - 1
        x = S[:, col]
        precision, recall = support_metrics(supports.get(record.t, []), supports_hat.get(record.t, []))
        exact += int(precision == 1.0 and recall == 1.0)
        offline = x_offline[:, k]
        columns["t"].append(record.t)
        columns["nmse_x"].append(frame_nmse(x, x_hat[:, k]))
        columns["err_l"].append(float(np.linalg.norm(L[:, col] - l_hat[:, k])))
        columns["se"].append(record.se)
        columns["precision"].append(precision)
        columns["recall"].append(recall)
        columns["nmse_offline"].append(
            None if np.isnan(offline).any() else frame_nmse(x, offline)
        )
    write_report(args.out, REPORT_HEADER, [columns[key] for key in REPORT_HEADER])

    first = records[0].t - 1 if records else 0
    cols = slice(first, first + len(records))
    flushed = ~np.isnan(x_offline).any(axis=0)
    summary = {
        "frames": len(records),
        "mean_nmse": nmse(S[:, cols], x_hat),
        "mean_nmse_offline": nmse(S[:, cols][:, flushed], x_offline[:, flushed]),
        "support_exact_fraction": exact / len(records) if records else float("nan"),
        "detected_times": [r.t for r in records if "change_detected" in r.events],
    }
    scenario_file = truth / "scenario.txt"
    if scenario_file.exists():
        value = read_kv(scenario_file).get("change_times", ("", 0))[0]
        change_times = [int(v) for v in value.split(",") if v.strip()]
        summary["change_times"] = change_times
        delays = []
        for t_j in change_times:
            after = [t for t in summary["detected_times"] if t >= t_j]
            if after:
                delays.append(after[0] - t_j)
        summary["detection_delays"] = delays
    write_kv(args.out.parent / "summary.txt", summary)
    logger.info(f"[eval] mean nmse {summary['mean_nmse']:.4g} over {len(records)} frames")
    return 0
