"""
End-to-end runs of the reprocs command line through app.main.main.
"""

from pathlib import Path

import numpy as np
import pytest

from app.core.matrix_io import read_kv, read_matrix, read_records, write_matrix
from app.main import main

SCENARIO = """\
# one change of one direction
n = 24
t_max = 300
t_train = 60
change_times = 120
r0 = 3
r_new = 1
r_old = 0
cluster_sizes = 3
cluster_ranges = 1.0
gamma_new = 1.0
d = 0
support_s = 3
support_step = 1
support_beta = 5
x_min = 50
seed = 1
"""

TRACKER = """\
r0 = 3
alpha = 20
K = 2
xi = 0.7071067811865476
omega = 20.05
"""


@pytest.fixture
def generated(tmp_path: Path) -> Path:
    config = tmp_path / "scenario.txt"
    config.write_text(SCENARIO)
    out = tmp_path / "data"
    assert main(["gen", "--config", str(config), "--out", str(out)]) == 0
    return out


@pytest.fixture
def tracker_file(tmp_path: Path) -> Path:
    path = tmp_path / "tracker.txt"
    path.write_text(TRACKER)
    return path


def test_gen_writes_ground_truth(generated):
    for name in ("M.csv", "L.csv", "S.csv", "W.csv", "supports.csv", "scenario.txt", "diagnostics.txt"):
        assert (generated / name).exists()
    assert (generated / "bases" / "intervals.csv").exists()
    M = read_matrix(generated / "M.csv")
    assert M.shape == (24, 300)
    assert read_kv(generated / "M.csv.meta")["t_train"][0] == "60"
    np.testing.assert_allclose(
        M,
        read_matrix(generated / "L.csv")
        + read_matrix(generated / "S.csv")
        + read_matrix(generated / "W.csv"),
    )


def test_track_then_eval(generated, tracker_file, tmp_path):
    run = tmp_path / "run"
    records_path = run / "records.csv"
    assert main(["track", "--data", str(generated), "--params", str(tracker_file), "--out", str(records_path)]) == 0
    records = read_records(records_path)
    assert [r.t for r in records] == list(range(61, 301))
    assert any("change_detected" in r.events for r in records)
    assert all(r.se is not None for r in records)
    assert read_matrix(run / "xhat.csv").shape == (24, 240)

    report = run / "report.csv"
    assert main(["eval", "--records", str(records_path), "--truth", str(generated), "--out", str(report)]) == 0
    lines = report.read_text().splitlines()
    assert lines[0] == "t,nmse_x,err_l,se,precision,recall,nmse_offline"
    assert len(lines) == 241
    summary = read_kv(run / "summary.txt")
    assert summary["change_times"][0] == "120"
    delay = int(summary["detection_delays"][0])
    assert 0 <= delay <= 40


def test_track_resumes_from_checkpoint(generated, tracker_file, tmp_path):
    full = tmp_path / "full" / "records.csv"
    assert main(["track", "--data", str(generated), "--params", str(tracker_file), "--out", str(full)]) == 0

    M = read_matrix(generated / "M.csv")
    head = tmp_path / "head" / "M.csv"
    write_matrix(head, M[:, :200], t_train=60)
    checkpoint = tmp_path / "state.ckpt"
    first = tmp_path / "first" / "records.csv"
    assert main(
        ["track", "--data", str(head), "--params", str(tracker_file), "--out", str(first), "--checkpoint", str(checkpoint)]
    ) == 0
    assert checkpoint.exists()

    second = tmp_path / "second" / "records.csv"
    assert main(
        ["track", "--data", str(generated), "--params", str(tracker_file), "--out", str(second), "--checkpoint", str(checkpoint)]
    ) == 0
    resumed = read_records(second)
    assert [r.t for r in resumed] == list(range(201, 301))
    expected = read_matrix(full.parent / "xhat.csv")[:, 140:]
    np.testing.assert_array_equal(read_matrix(second.parent / "xhat.csv"), expected)
    np.testing.assert_array_equal(
        read_matrix(second.parent / "xhat_offline.csv"),
        read_matrix(full.parent / "xhat_offline.csv")[:, 140:],
    )
    assert [r.events for r in resumed] == [r.events for r in read_records(full)[140:]]


def test_track_with_automatic_parameters(generated, tmp_path):
    params = tmp_path / "tracker_auto.txt"
    params.write_text("r0 = 3\nalpha = 20\nK = 2\nomega = 20.05\n")
    records_path = tmp_path / "auto" / "records.csv"
    assert main(
        ["track", "--data", str(generated), "--params", str(params), "--auto-xi", "--out", str(records_path)]
    ) == 0
    records = read_records(records_path)
    assert [r.t for r in records] == list(range(61, 301))
    assert any("change_detected" in r.events for r in records)

    q_path = tmp_path / "auto_q" / "records.csv"
    assert main(
        ["track", "--data", str(generated), "--params", str(params), "--auto-xi", "--q", "0.5", "--out", str(q_path)]
    ) == 0
    assert len(read_records(q_path)) == 240


def test_sweep_and_baseline(generated, tmp_path):
    config = tmp_path / "sweep.txt"
    config.write_text(SCENARIO + "tracker.alpha = 20\ntracker.K = 2\n")
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(config), "--reps", "2", "--out", str(out), "--pcp"]) == 0
    header = (out / "report.csv").read_text().splitlines()[0]
    assert header.endswith("nmse_offline,nmse_pcp")
    assert len((out / "runs.csv").read_text().splitlines()) == 3
    summary = read_kv(out / "summary.txt")
    assert summary["succeeded"][0] == "2"
    assert float(summary["suggested_g_hat_plus"][0]) > 1.0

    records = tmp_path / "pcp" / "records_pcp.csv"
    assert main(["baseline-pcp", "--data", str(generated), "--window", "60", "--out", str(records)]) == 0
    rows = read_records(records)
    assert len(rows) == 240
    assert all(r.nmse_x is not None for r in rows)
    assert read_matrix(records.parent / "xhat_pcp.csv").shape == (24, 240)


def test_exit_codes(generated, tmp_path):
    bad_params = tmp_path / "bad.txt"
    bad_params.write_text("r0 = 3\nlearning_rate = 0.1\n")
    out = str(tmp_path / "run" / "records.csv")
    assert main(["track", "--data", str(generated), "--params", str(bad_params), "--out", out]) == 2

    assert main(["track", "--data", str(generated), "--params", str(tmp_path / "missing.txt"), "--out", out]) == 4

    broken = tmp_path / "broken" / "M.csv"
    broken.parent.mkdir()
    broken.write_text("1.0,2.0\n3.0,oops\n")
    good_params = tmp_path / "good.txt"
    good_params.write_text(TRACKER)
    assert main(["track", "--data", str(broken), "--params", str(good_params), "--t-train", "1", "--out", out]) == 4
