"""
Unit tests for app.core.metrics.
"""

import math

import numpy as np
import pytest

from app.core.errors import DimensionError
from app.core.metrics import frame_nmse, nmse, se_curve, support_metrics


def test_nmse_over_frames():
    S = np.array([[1.0, 0.0], [0.0, 2.0]])
    S_hat = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert nmse(S, S_hat) == pytest.approx(1.0 / 5.0)


def test_nmse_skips_zero_frames():
    S = np.array([[0.0, 3.0], [0.0, 4.0]])
    S_hat = np.array([[9.0, 3.0], [9.0, 4.0]])
    assert nmse(S, S_hat) == 0.0


def test_nmse_undefined_without_energy():
    assert math.isnan(nmse(np.zeros((2, 3)), np.ones((2, 3))))


def test_nmse_shape_mismatch():
    with pytest.raises(DimensionError):
        nmse(np.zeros((2, 3)), np.zeros((3, 2)))


def test_frame_nmse():
    assert frame_nmse(np.array([2.0, 0.0]), np.array([1.0, 0.0])) == pytest.approx(0.25)
    assert frame_nmse(np.zeros(2), np.ones(2)) is None


@pytest.mark.parametrize(
    "truth, estimate, expected",
    [
        ([1, 2, 3], [1, 2, 3], (1.0, 1.0)),
        ([1, 2, 3, 4], [3, 4, 5, 6], (0.5, 0.5)),
        ([1, 2], [], (1.0, 0.0)),
        ([], [4], (0.0, 1.0)),
        ([], [], (1.0, 1.0)),
    ],
)
def test_support_metrics(truth, estimate, expected):
    assert support_metrics(truth, estimate) == pytest.approx(expected)


def test_se_curve():
    I = np.eye(3)
    curve = se_curve([I[:, :1], I[:, :2]], [I[:, [1]], I[:, [1]]])
    assert curve == pytest.approx([1.0, 0.0])


def test_se_curve_length_mismatch():
    with pytest.raises(DimensionError):
        se_curve([np.eye(2)], [])
