"""`track`: run the tracker over an observation matrix."""

import argparse
import logging
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from app.core.checkpoint import load_checkpoint, save_checkpoint
from app.core.errors import ConfigError
from app.core.experiment import finish_stream, stream
from app.core.matrix_io import (
    basis_lookup,
    io_config,
    read_bases,
    read_matrix,
    read_meta,
    write_matrix,
    write_records,
    write_supports,
)
from app.core.schemas import FrameRecord, TrackerParams

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("track", help="Separate a stream into sparse and low-rank parts")
    parser.add_argument("--data", required=True, type=Path, help="gen output directory or M.csv")
    parser.add_argument("--params", required=True, type=Path, help="Tracker key = value file")
    parser.add_argument("--auto-xi", action="store_true", help="xi_t = ||Phi_t l_hat_{t-1}||")
    parser.add_argument("--q", type=float, default=None, help="Automatic omega with this q")
    parser.add_argument("--t-train", type=int, default=None, help="Overrides M.csv.meta")
    parser.add_argument("--out", required=True, type=Path, help="records.csv path")
    parser.add_argument(
        "--checkpoint",
        type=Path,
        default=None,
        help="Resume from this file when it exists; the final state is written back to it",
    )
    parser.set_defaults(handler=run)


def _params(args: argparse.Namespace) -> TrackerParams:
    _, params = io_config(args.params)
    assert params is not None
    updates = params.model_dump()
    if args.auto_xi:
        updates["xi_mode"] = "auto"
    if args.q is not None:
        updates["q"] = args.q
        updates["omega_mode"] = "auto"
    try:
        return TrackerParams.model_validate(updates)
    except ValidationError as exc:
        raise ConfigError(f"invalid tracker override: {exc}") from None


def run(args: argparse.Namespace) -> int:
    params = _params(args)
    data: Path = args.data
    m_path = data / "M.csv" if data.is_dir() else data
    M = read_matrix(m_path)
    t_train = args.t_train if args.t_train is not None else read_meta(m_path).get("t_train")
    if t_train is None:
        raise ConfigError("t_train is neither in M.csv.meta nor given with --t-train")

    state = None
    if args.checkpoint is not None and args.checkpoint.exists():
        state = load_checkpoint(args.checkpoint)
        if state.n != M.shape[0]:
            raise ConfigError(f"checkpoint has n = {state.n}, data has n = {M.shape[0]}")
        params = state.params
    start = state.t if state is not None else t_train

    truth_bases = None
    if data.is_dir() and (data / "bases" / "intervals.csv").exists():
        intervals = read_bases(data / "bases")
        truth_bases = [basis_lookup(intervals, t) for t in range(start + 1, M.shape[1] + 1)]

    result = stream(M, t_train, params, truth_bases, state=state, flush=False)
    if args.checkpoint is not None:
        save_checkpoint(args.checkpoint, result.state)
    finish_stream(result)

    records = [
        FrameRecord(
            t=t,
            se=result.se[k],
            phase=result.phases[k],
            events=";".join(str(e) for e in result.events[k]),
        )
        for k, t in enumerate(result.t)
    ]
    out: Path = args.out
    write_records(out, records)
    first_t = result.t[0] if result.t else start + 1
    write_matrix(out.parent / "xhat.csv", result.x_hat)
    write_matrix(out.parent / "lhat.csv", result.l_hat)
    write_matrix(out.parent / "xhat_offline.csv", result.x_offline)
    write_supports(out.parent / "support_hat.csv", result.supports_hat, first_t=first_t)

    failed = int(np.count_nonzero(np.isnan(result.x_offline).any(axis=0)))
    logger.info(
        f"[track] {len(records)} frames, changes detected at {result.t_hat}, "
        f"{failed} frames without offline estimate"
    )
    return 0
