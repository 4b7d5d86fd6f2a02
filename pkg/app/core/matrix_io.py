"""
File formats: matrix CSV with a .meta sidecar, supports, basis schedules,
per-frame records and flat key = value configuration files.

Floats are written with repr(), which round-trips float64 exactly and always
uses '.' as the decimal point.
"""

from __future__ import annotations

import csv
import logging
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any, TypeVar

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ValidationError

from app.core.errors import ConfigError, ParseError
from app.core.linalg import Matrix
from app.core.schemas import (
    ClusterSpec,
    FrameRecord,
    Phase,
    RectangleConfig,
    ScenarioConfig,
    SupportModelConfig,
    TrackerParams,
)

logger = logging.getLogger(__name__)

RECORD_HEADER = ["t", "nmse_x", "err_l", "se", "precision", "recall", "phase", "events"]

ModelT = TypeVar("ModelT", bound=BaseModel)


# =============================================================================
# Matrices
# =============================================================================


def format_float(value: float) -> str:
    return repr(float(value))


def _parse_float(text: str, path: Path, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(str(path), line, f"not a number: {text!r}") from None


def write_matrix(path: str | Path, M: NDArray, t_train: int | None = None) -> None:
    """n lines of t comma-separated values, plus <path>.meta with n, t_max, t_train."""
    path = Path(path)
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ConfigError(f"write_matrix needs a 2-D array, got shape {M.shape}")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        for row in M:
            writer.writerow([format_float(v) for v in row])
    meta = {"n": M.shape[0], "t_max": M.shape[1]}
    if t_train is not None:
        meta["t_train"] = t_train
    write_kv(meta_path(path), meta)


def meta_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def parse_matrix_rows(lines: Sequence[str], path: Path, first_line: int = 1) -> Matrix:
    """Rows of comma-separated floats; every row must have the same length."""
    rows: list[list[float]] = []
    width: int | None = None
    for offset, text in enumerate(lines):
        line = first_line + offset
        text = text.strip()
        values = [] if text == "" else [_parse_float(v.strip(), path, line) for v in text.split(",")]
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise ParseError(str(path), line, f"expected {width} values, found {len(values)}")
        rows.append(values)
    if not rows:
        raise ParseError(str(path), first_line, "empty matrix")
    return np.array(rows, dtype=np.float64).reshape(len(rows), width or 0)


def read_matrix(path: str | Path) -> Matrix:
    path = Path(path)
    with path.open() as f:
        lines = f.read().splitlines()
    M = parse_matrix_rows(lines, path)
    sidecar = meta_path(path)
    if sidecar.exists():
        meta = read_kv(sidecar)
        n = int(meta.get("n", (str(M.shape[0]), 0))[0])
        if n != M.shape[0]:
            raise ParseError(str(path), 1, f"{M.shape[0]} rows but meta says n = {n}")
    return M


def read_meta(path: str | Path) -> dict[str, int]:
    sidecar = meta_path(path)
    if not sidecar.exists():
        return {}
    return {key: int(value) for key, (value, _) in read_kv(sidecar).items()}


# =============================================================================
# Supports and bases
# =============================================================================


def write_supports(path: str | Path, supports: Iterable[NDArray[np.int_]], first_t: int = 1) -> None:
    """One line per frame: t,i1;i2;..."""
    path = Path(path)
    with path.open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        for offset, support in enumerate(supports):
            writer.writerow([first_t + offset, ";".join(str(int(i)) for i in support)])


def read_supports(path: str | Path) -> dict[int, NDArray[np.int_]]:
    path = Path(path)
    supports: dict[int, NDArray[np.int_]] = {}
    with path.open(newline="") as f:
        for line, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            try:
                t = int(row[0])
                cell = row[1] if len(row) > 1 else ""
                indices = [int(v) for v in cell.split(";") if v.strip()]
            except ValueError:
                raise ParseError(str(path), line, f"bad support row {row}") from None
            supports[t] = np.array(indices, dtype=int)
    return supports


def write_bases(directory: str | Path, intervals: Sequence[tuple[int, int, Matrix]]) -> None:
    """P_<k>.csv per interval plus intervals.csv (start,end,file; end exclusive)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / "intervals.csv").open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["start", "end", "file"])
        for k, (start, end, basis) in enumerate(intervals):
            name = f"P_{k}.csv"
            write_matrix(directory / name, basis)
            writer.writerow([start, end, name])


def read_bases(directory: str | Path) -> list[tuple[int, int, Matrix]]:
    directory = Path(directory)
    index = directory / "intervals.csv"
    intervals: list[tuple[int, int, Matrix]] = []
    with index.open(newline="") as f:
        reader = csv.reader(f)
        next(reader, None)
        for line, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise ParseError(str(index), line, f"expected start,end,file, got {row}")
            try:
                start, end = int(row[0]), int(row[1])
            except ValueError:
                raise ParseError(str(index), line, f"bad interval {row}") from None
            intervals.append((start, end, read_matrix(directory / row[2])))
    return intervals


def basis_lookup(intervals: Sequence[tuple[int, int, Matrix]], t: int) -> Matrix:
    for start, end, basis in intervals:
        if start <= t < end:
            return basis
    raise ConfigError(f"no basis interval covers frame {t}")


# =============================================================================
# Records
# =============================================================================


def _cell(value: float | None) -> str:
    return "" if value is None else format_float(value)


def write_records(path: str | Path, records: Iterable[FrameRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RECORD_HEADER)
        for r in records:
            writer.writerow(
                [
                    r.t,
                    _cell(r.nmse_x),
                    _cell(r.err_l),
                    _cell(r.se),
                    _cell(r.support_precision),
                    _cell(r.support_recall),
                    r.phase.value,
                    r.events,
                ]
            )


def read_records(path: str | Path) -> list[FrameRecord]:
    path = Path(path)

    def opt(text: str, line: int) -> float | None:
        return None if text == "" else _parse_float(text, path, line)

    records: list[FrameRecord] = []
    with path.open(newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != RECORD_HEADER:
            raise ParseError(str(path), 1, f"unexpected header {header}")
        for line, row in enumerate(reader, start=2):
            if len(row) != len(RECORD_HEADER):
                raise ParseError(str(path), line, f"expected {len(RECORD_HEADER)} fields")
            try:
                records.append(
                    FrameRecord(
                        t=int(row[0]),
                        nmse_x=opt(row[1], line),
                        err_l=opt(row[2], line),
                        se=opt(row[3], line),
                        support_precision=opt(row[4], line),
                        support_recall=opt(row[5], line),
                        phase=Phase(row[6]),
                        events=row[7],
                    )
                )
            except (ValueError, ValidationError) as exc:
                raise ParseError(str(path), line, str(exc)) from None
    return records


def write_report(path: str | Path, header: Sequence[str], columns: Sequence[Sequence[Any]]) -> None:
    """Column-oriented CSV: one header row, then one row per index of the columns."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow(
                ["" if v is None or (isinstance(v, float) and np.isnan(v)) else v for v in row]
            )


# =============================================================================
# key = value configuration
# =============================================================================


def parse_kv(lines: Sequence[str], path: Path, first_line: int = 1) -> dict[str, tuple[str, int]]:
    """`key = value` lines; '#' starts a comment. Returns value and line number per key."""
    entries: dict[str, tuple[str, int]] = {}
    for offset, raw in enumerate(lines):
        line = first_line + offset
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ParseError(str(path), line, f"expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in text.split("=", 1))
        if not key:
            raise ParseError(str(path), line, "empty key")
        if key in entries:
            raise ParseError(str(path), line, f"duplicate key {key!r}")
        entries[key] = (value, line)
    return entries


def read_kv(path: str | Path) -> dict[str, tuple[str, int]]:
    path = Path(path)
    with path.open() as f:
        return parse_kv(f.read().splitlines(), path)


def kv_text(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(kv_text(v) for v in value)
    if value is None:
        return "none"
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


def write_kv(path: str | Path, values: dict[str, Any]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        for key, value in values.items():
            f.write(f"{key} = {kv_text(value)}\n")


def _scalar(text: str) -> str | None:
    return None if text.lower() in ("", "none") else text


def _listed(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


LIST_FIELDS = {"change_times", "r_new", "r_old", "cluster_sizes", "cluster_ranges"}
SUPPORT_PREFIX = "support_"
FOREGROUND_PREFIX = "fg_"


def _build(model: type[ModelT], data: dict[str, Any], path: Path) -> ModelT:
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"{path}: invalid {model.__name__}: {exc}") from None


def tracker_from_kv(entries: dict[str, tuple[str, int]], path: Path) -> TrackerParams:
    data: dict[str, Any] = {}
    for key, (value, line) in entries.items():
        if key not in TrackerParams.model_fields:
            raise ConfigError(f"{path}:{line}: unknown tracker key {key!r}")
        data[key] = _scalar(value)
    return _build(TrackerParams, data, path)


def scenario_from_kv(entries: dict[str, tuple[str, int]], path: Path) -> ScenarioConfig:
    """
    Flat scenario keys. Clusters come as `cluster_sizes` / `cluster_ranges`
    lists, the support walk as `support_<field>` and an optional foreground
    rectangle as `fg_<field>`.
    """
    data: dict[str, Any] = {}
    support: dict[str, Any] = {}
    foreground: dict[str, Any] = {}
    sizes: list[str] = []
    ranges: list[str] = []
    for key, (value, line) in entries.items():
        if key == "cluster_sizes":
            sizes = _listed(value)
        elif key == "cluster_ranges":
            ranges = _listed(value)
        elif key.startswith(SUPPORT_PREFIX) and key[len(SUPPORT_PREFIX) :] in SupportModelConfig.model_fields:
            support[key[len(SUPPORT_PREFIX) :]] = value
        elif key.startswith(FOREGROUND_PREFIX) and key[len(FOREGROUND_PREFIX) :] in RectangleConfig.model_fields:
            foreground[key[len(FOREGROUND_PREFIX) :]] = value
        elif key in ScenarioConfig.model_fields and key not in ("clusters", "support", "foreground"):
            data[key] = _listed(value) if key in LIST_FIELDS else _scalar(value)
        else:
            raise ConfigError(f"{path}:{line}: unknown scenario key {key!r}")
    if len(sizes) != len(ranges):
        raise ConfigError(f"{path}: cluster_sizes and cluster_ranges differ in length")
    try:
        data["clusters"] = [
            ClusterSpec(size=int(s), half_range=float(r)) for s, r in zip(sizes, ranges)
        ]
    except (ValueError, ValidationError) as exc:
        raise ConfigError(f"{path}: invalid cluster list: {exc}") from None
    if support:
        data["support"] = support
    if foreground:
        data["foreground"] = foreground
    return _build(ScenarioConfig, data, path)


def scenario_to_kv(config: ScenarioConfig) -> dict[str, Any]:
    values: dict[str, Any] = {}
    for key in ScenarioConfig.model_fields:
        if key in ("clusters", "support", "foreground"):
            continue
        values[key] = getattr(config, key)
    values["cluster_sizes"] = [c.size for c in config.clusters]
    values["cluster_ranges"] = [c.half_range for c in config.clusters]
    for key in SupportModelConfig.model_fields:
        values[SUPPORT_PREFIX + key] = getattr(config.support, key)
    if config.foreground is not None:
        for key in RectangleConfig.model_fields:
            values[FOREGROUND_PREFIX + key] = getattr(config.foreground, key)
    return values


def io_config(
    path: str | Path, tracker_prefix: str | None = None
) -> tuple[ScenarioConfig | None, TrackerParams | None]:
    """
    Load a key = value file.

    Without tracker_prefix the file holds tracker keys only. With it, keys that
    start with the prefix are tracker keys and the rest describe a scenario.
    """
    path = Path(path)
    entries = read_kv(path)
    if tracker_prefix is None:
        return None, tracker_from_kv(entries, path)
    tracker_entries = {
        key[len(tracker_prefix) :]: v for key, v in entries.items() if key.startswith(tracker_prefix)
    }
    scenario_entries = {k: v for k, v in entries.items() if not k.startswith(tracker_prefix)}
    scenario = scenario_from_kv(scenario_entries, path)
    tracker = tracker_from_kv(tracker_entries, path) if tracker_entries else None
    return scenario, tracker
