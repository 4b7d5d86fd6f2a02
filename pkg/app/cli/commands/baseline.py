"""`baseline-pcp`: windowed batch PCP over a stream."""

import argparse
import logging
from pathlib import Path

import numpy as np

from app.core.errors import ConfigError
from app.core.matrix_io import read_matrix, read_meta, write_matrix, write_records
from app.core.metrics import frame_nmse, support_metrics
from app.core.pcp import pcp_windowed
from app.core.schemas import FrameRecord, Phase
from app.core.settings import get_settings

logger = logging.getLogger(__name__)

# entries of S_hat below this fraction of its largest magnitude are not support
SUPPORT_CUTOFF = 1e-3


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("baseline-pcp", help="Windowed batch PCP baseline")
    parser.add_argument("--data", required=True, type=Path, help="gen output directory or M.csv")
    parser.add_argument("--window", type=int, default=None, help="Defaults to REPROCS_PCP_WINDOW")
    parser.add_argument("--t-train", type=int, default=None, help="Overrides M.csv.meta")
    parser.add_argument("--out", required=True, type=Path, help="records_pcp.csv path")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    data: Path = args.data
    m_path = data / "M.csv" if data.is_dir() else data
    M = read_matrix(m_path)
    t_train = args.t_train if args.t_train is not None else read_meta(m_path).get("t_train", 0)
    window = args.window if args.window is not None else get_settings().pcp_window
    if not 0 <= t_train < M.shape[1]:
        raise ConfigError(f"t_train = {t_train} outside [0, {M.shape[1]})")

    S_hat = pcp_windowed(M, t_train, window)
    S_true = read_matrix(data / "S.csv") if data.is_dir() and (data / "S.csv").exists() else None
    scale = float(np.max(np.abs(S_hat))) if S_hat.size else 0.0

    records = []
    for col in range(t_train, M.shape[1]):
        x_hat = S_hat[:, col]
        record = FrameRecord(t=col + 1, phase=Phase.DETECT)
        if S_true is not None:
            x = S_true[:, col]
            support_hat = np.flatnonzero(np.abs(x_hat) > SUPPORT_CUTOFF * scale)
            record.nmse_x = frame_nmse(x, x_hat)
            record.support_precision, record.support_recall = support_metrics(
                np.flatnonzero(x), support_hat
            )
        records.append(record)

    out: Path = args.out
    write_records(out, records)
    write_matrix(out.parent / "xhat_pcp.csv", S_hat[:, t_train:])
    logger.info(f"[baseline-pcp] {len(records)} frames with window {window}")
    return 0
