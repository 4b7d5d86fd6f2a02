"""
Tracker checkpoints.

Layout:

    [params]
    key = value            (TrackerParams)
    [state]
    key = value            (phase, counters, thresholds, histories)
    [matrix <name> <rows> <cols>]
    <rows> CSV lines

List-valued state entries are JSON arrays. Matrices hold P_star, P_new, each
recovered cluster G_<i>, the current block buffer, the buffered offline frames
and the previous low-rank estimate, all written with exact float repr, so a
restored tracker continues bit-for-bit.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from app.core.errors import ParseError
from app.core.linalg import Matrix
from app.core.matrix_io import format_float, kv_text, parse_kv, parse_matrix_rows, tracker_from_kv
from app.core.schemas import Phase
from app.core.tracker import TrackerState

logger = logging.getLogger(__name__)


def _matrix_block(name: str, M: Matrix) -> list[str]:
    lines = [f"[matrix {name} {M.shape[0]} {M.shape[1]}]"]
    lines.extend(",".join(format_float(v) for v in row) for row in M)
    return lines


def _columns(vectors: list[np.ndarray], n: int) -> Matrix:
    return np.column_stack(vectors) if vectors else np.zeros((n, 0))


def save_checkpoint(path: str | Path, state: TrackerState) -> None:
    path = Path(path)
    lines = ["[params]"]
    for key, value in state.params.model_dump().items():
        lines.append(f"{key} = {kv_text(value)}")

    scalars = {
        "phase": state.phase.value,
        "n": state.n,
        "t_train": state.t_train,
        "t": state.t,
        "j": state.j,
        "k": state.k,
        "lambda_train_minus": format_float(state.lambda_train_minus),
        "thresh": format_float(state.thresh),
        "t_hat": json.dumps(state.t_hat),
        "cluster_partition": json.dumps(state.cluster_partition),
        "r_new_history": json.dumps(state.r_new_history),
        "partition_history": json.dumps(state.partition_history),
        "g_done": len(state.G_done),
        "offline_times": json.dumps([t for t, _, _ in state.offline_buf]),
        "offline_supports": json.dumps([[int(i) for i in s] for _, _, s in state.offline_buf]),
    }
    lines.append("[state]")
    lines.extend(f"{key} = {value}" for key, value in scalars.items())

    lines.extend(_matrix_block("P_star", state.P_star))
    lines.extend(_matrix_block("P_new", state.P_new))
    for i, G in enumerate(state.G_done):
        lines.extend(_matrix_block(f"G_{i}", G))
    lines.extend(_matrix_block("block_buf", _columns(state.block_buf, state.n)))
    lines.extend(_matrix_block("offline_m", _columns([m for _, m, _ in state.offline_buf], state.n)))
    lines.extend(_matrix_block("l_hat_prev", state.l_hat_prev[:, None]))

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    logger.info(f"[Checkpoint] saved t={state.t} phase={state.phase.value} to {path}")


def _sections(lines: list[str], path: Path) -> tuple[dict[str, list[str]], dict[str, Matrix]]:
    sections: dict[str, list[str]] = {}
    matrices: dict[str, Matrix] = {}
    current: str | None = None
    i = 0
    while i < len(lines):
        text = lines[i].strip()
        if text.startswith("[matrix "):
            parts = text.strip("[]").split()
            if len(parts) != 4:
                raise ParseError(str(path), i + 1, f"bad matrix header {text!r}")
            try:
                rows, cols = int(parts[2]), int(parts[3])
            except ValueError:
                raise ParseError(str(path), i + 1, f"bad matrix shape in {text!r}") from None
            body = lines[i + 1 : i + 1 + rows]
            if len(body) != rows:
                raise ParseError(str(path), i + 1, f"matrix {parts[1]} is truncated")
            M = parse_matrix_rows(body, path, first_line=i + 2)
            if M.shape != (rows, cols):
                raise ParseError(str(path), i + 1, f"matrix {parts[1]} has shape {M.shape}")
            matrices[parts[1]] = np.ascontiguousarray(M)
            current = None
            i += rows + 1
            continue
        if text in ("[params]", "[state]"):
            current = text.strip("[]")
            sections[current] = []
        elif text:
            if current is None:
                raise ParseError(str(path), i + 1, f"line outside any section: {text!r}")
            sections[current].append(lines[i])
        i += 1
    return sections, matrices


def load_checkpoint(path: str | Path) -> TrackerState:
    path = Path(path)
    lines = path.read_text().splitlines()
    sections, matrices = _sections(lines, path)
    for name in ("params", "state"):
        if name not in sections:
            raise ParseError(str(path), 1, f"missing [{name}] section")
    for name in ("P_star", "P_new", "block_buf", "offline_m", "l_hat_prev"):
        if name not in matrices:
            raise ParseError(str(path), 1, f"missing matrix {name}")

    params = tracker_from_kv(parse_kv(sections["params"], path), path)
    raw = {key: value for key, (value, _) in parse_kv(sections["state"], path).items()}
    try:
        offline_times = json.loads(raw["offline_times"])
        offline_supports = json.loads(raw["offline_supports"])
        offline_m = matrices["offline_m"]
        state = TrackerState(
            params=params,
            n=int(raw["n"]),
            t_train=int(raw["t_train"]),
            P_star=matrices["P_star"],
            P_new=matrices["P_new"],
            lambda_train_minus=float(raw["lambda_train_minus"]),
            thresh=float(raw["thresh"]),
            l_hat_prev=matrices["l_hat_prev"][:, 0].copy(),
            phase=Phase(raw["phase"]),
            j=int(raw["j"]),
            k=int(raw["k"]),
            t=int(raw["t"]),
            t_hat=json.loads(raw["t_hat"]),
            block_buf=[c.copy() for c in matrices["block_buf"].T],
            cluster_partition=json.loads(raw["cluster_partition"]),
            G_done=[matrices[f"G_{i}"] for i in range(int(raw["g_done"]))],
            offline_buf=[
                (int(t), offline_m[:, i].copy(), np.array(s, dtype=int))
                for i, (t, s) in enumerate(zip(offline_times, offline_supports))
            ],
            r_new_history=json.loads(raw["r_new_history"]),
            partition_history=json.loads(raw["partition_history"]),
        )
    except (KeyError, ValueError) as exc:
        raise ParseError(str(path), 1, f"incomplete state section: {exc}") from None
    logger.info(f"[Checkpoint] restored t={state.t} phase={state.phase.value} from {path}")
    return state
