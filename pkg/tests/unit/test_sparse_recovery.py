"""
Unit tests for app.core.sparse_recovery.

The l1 program is checked against a linear-programming oracle: with
y = Phi m and Phi = I - P P', the feasible set of the exact fit is
y + range(P), so min ||x||_1 is an LP in the r coefficients.
"""

import numpy as np
import pytest
from scipy.optimize import linprog

from app.core import sparse_recovery
from app.core.errors import ConvergenceError, DimensionError
from app.core.linalg import ProjectionOperator, empty_basis, orthonormalize
from app.core.schemas import SparseRecoveryParams
from app.core.sparse_recovery import (
    bpdn_solve,
    debias_ls,
    recover_frame,
    threshold_support,
)


def exact_fit_l1_oracle(P: np.ndarray, y: np.ndarray) -> float:
    """min ||y + P c||_1 over c."""
    n, r = P.shape
    cost = np.concatenate([np.zeros(r), np.ones(n)])
    A_ub = np.block([[P, -np.eye(n)], [-P, -np.eye(n)]])
    b_ub = np.concatenate([-y, y])
    bounds = [(None, None)] * r + [(0, None)] * n
    result = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    assert result.status == 0
    return float(result.fun)


def sparse_vector(rng: np.random.Generator, n: int, s: int, low: float, high: float) -> np.ndarray:
    x = np.zeros(n)
    support = rng.choice(n, size=s, replace=False)
    x[support] = rng.uniform(low, high, size=s) * rng.choice([-1.0, 1.0], size=s)
    return x


def bpdn_dual_value(phi: ProjectionOperator, y: np.ndarray, x: np.ndarray, xi: float) -> float:
    """Weak-duality lower bound y'mu - xi ||mu|| at mu = r / ||Phi r||_inf, r = y - Phi x."""
    r = y - phi.apply(x)
    scale = float(np.max(np.abs(phi.apply(r))))
    mu = r / scale
    return float(y @ mu) - xi * float(np.linalg.norm(mu))


def test_small_measurement_gives_zero():
    phi = ProjectionOperator.identity(3)
    np.testing.assert_array_equal(bpdn_solve(phi, np.array([0.1, 0.0, 0.0]), 0.5), np.zeros(3))


def test_identity_exact_fit_returns_measurement():
    phi = ProjectionOperator.identity(5)
    y = np.array([0.0, 3.0, 0.0, -1.5, 0.2])
    np.testing.assert_allclose(bpdn_solve(phi, y, 0.0), y, atol=1e-9)


def test_exact_fit_matches_lp_oracle():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(6, 13))
        r = int(rng.integers(1, 4))
        s = int(rng.integers(1, 4))
        P = orthonormalize(rng.standard_normal((n, r)))
        phi = ProjectionOperator(P)
        y = phi.apply(sparse_vector(rng, n, s, 1.0, 5.0))
        x = bpdn_solve(phi, y, 0.0)
        assert np.linalg.norm(y - phi.apply(x)) <= 1e-6
        best = exact_fit_l1_oracle(P, y)
        assert np.sum(np.abs(x)) == pytest.approx(best, rel=1e-5, abs=1e-8)


def test_exact_fit_tolerates_projection_round_off():
    rng = np.random.default_rng(15)
    P = orthonormalize(rng.standard_normal((64, 8)))
    phi = ProjectionOperator(P)
    for _ in range(20):
        y = phi.apply(sparse_vector(rng, 64, 4, 10.0, 20.0))
        x = bpdn_solve(phi, y, 0.0)
        assert np.linalg.norm(y - phi.apply(x)) <= 1e-6


def test_noise_ball_solution_is_feasible_and_no_worse_than_truth():
    rng = np.random.default_rng(12)
    for _ in range(30):
        n = int(rng.integers(8, 13))
        P = orthonormalize(rng.standard_normal((n, 2)))
        phi = ProjectionOperator(P)
        x_true = sparse_vector(rng, n, 2, 5.0, 10.0)
        noise = 0.05 * rng.standard_normal(n)
        y = phi.apply(x_true + noise)
        xi = float(np.linalg.norm(phi.apply(noise)))
        x = bpdn_solve(phi, y, xi)
        assert np.linalg.norm(y - phi.apply(x)) <= xi * (1 + 1e-5) + 1e-6
        assert np.sum(np.abs(x)) <= np.sum(np.abs(x_true)) * (1 + 1e-4)


def test_noise_ball_objective_meets_dual_bound():
    rng = np.random.default_rng(16)
    for _ in range(200):
        n = int(rng.integers(6, 13))
        r = int(rng.integers(1, 4))
        P = orthonormalize(rng.standard_normal((n, r)))
        phi = ProjectionOperator(P)
        y = phi.apply(sparse_vector(rng, n, int(rng.integers(1, 4)), 1.0, 5.0))
        y = y + phi.apply(0.1 * rng.standard_normal(n))
        xi = float(rng.uniform(0.02, 0.5)) * float(np.linalg.norm(y))
        x = bpdn_solve(phi, y, xi)
        primal = float(np.sum(np.abs(x)))
        assert np.linalg.norm(y - phi.apply(x)) <= xi * (1 + 1e-5) + 1e-6
        assert abs(primal - bpdn_dual_value(phi, y, x, xi)) <= 1e-5 * max(1.0, primal)


def test_infeasible_radius():
    P = np.eye(4)[:, :1]
    phi = ProjectionOperator(P)
    # y has a component in range(P), which Phi x can never reach
    with pytest.raises(ConvergenceError):
        bpdn_solve(phi, np.array([5.0, 0.0, 0.0, 0.0]), 0.1)


def test_wrong_measurement_shape():
    with pytest.raises(DimensionError):
        bpdn_solve(ProjectionOperator.identity(3), np.zeros(4), 0.0)


def test_threshold_is_strict():
    x = np.array([1.0, -2.0, 0.5, -1.0])
    np.testing.assert_array_equal(threshold_support(x, 1.0), [1])


def test_threshold_empty():
    assert threshold_support(np.zeros(4), 0.1).size == 0


def test_debias_empty_support():
    phi = ProjectionOperator.identity(4)
    np.testing.assert_array_equal(debias_ls(phi, np.ones(4), np.array([], dtype=int)), np.zeros(4))


def test_debias_recovers_values_on_support():
    rng = np.random.default_rng(13)
    P = orthonormalize(rng.standard_normal((20, 2)))
    phi = ProjectionOperator(P)
    x = np.zeros(20)
    x[[3, 9, 15]] = [7.0, -4.0, 11.0]
    np.testing.assert_allclose(debias_ls(phi, phi.apply(x), np.array([3, 9, 15])), x, atol=1e-10)


def test_exact_recovery_when_basis_spans_low_rank_part():
    rng = np.random.default_rng(14)
    n, r = 60, 2
    P = orthonormalize(rng.standard_normal((n, r)))
    params = SparseRecoveryParams(xi=1e-6, omega=5.0)
    for _ in range(10):
        l = P @ rng.uniform(-3.0, 3.0, size=r)
        x = sparse_vector(rng, n, 3, 20.0, 30.0)
        frame = recover_frame(P, l + x, params)
        np.testing.assert_array_equal(frame.support, np.flatnonzero(x))
        np.testing.assert_allclose(frame.x_hat, x, atol=1e-6)
        np.testing.assert_allclose(frame.l_hat, l, atol=1e-6)


def test_zero_radius_recovery_on_random_basis():
    rng = np.random.default_rng(17)
    n, r = 64, 8
    P = orthonormalize(rng.standard_normal((n, r)))
    params = SparseRecoveryParams(xi=0.0, omega=5.0)
    for t in range(1, 51):
        l = P @ rng.uniform(-3.0, 3.0, size=r)
        x = sparse_vector(rng, n, 4, 10.0, 20.0)
        frame = recover_frame(P, l + x, params, t=t)
        np.testing.assert_array_equal(frame.support, np.flatnonzero(x))
        np.testing.assert_allclose(frame.x_hat, x, atol=1e-8)


def test_without_basis_thresholds_the_frame():
    m = np.zeros(8)
    m[[2, 5]] = [10.0, -8.0]
    m[0] = 0.1
    frame = recover_frame(empty_basis(8), m, SparseRecoveryParams(xi=0.0, omega=1.0))
    np.testing.assert_array_equal(frame.support, [2, 5])
    np.testing.assert_allclose(frame.x_hat[[2, 5]], [10.0, -8.0], atol=1e-9)
    assert frame.l_hat[0] == pytest.approx(0.1)
    np.testing.assert_allclose(frame.x_hat + frame.l_hat, m)


def test_frame_dimension_mismatch():
    with pytest.raises(DimensionError):
        recover_frame(empty_basis(4), np.zeros(5), SparseRecoveryParams(omega=1.0))


def test_solver_errors_carry_frame_index(monkeypatch):
    def failing(*args, **kwargs):
        raise ConvergenceError(0.5)

    monkeypatch.setattr(sparse_recovery, "bpdn_solve", failing)
    with pytest.raises(ConvergenceError) as info:
        recover_frame(empty_basis(3), np.ones(3), SparseRecoveryParams(omega=1.0), t=7)
    assert str(info.value).startswith("frame 7: ")
    assert info.value.gap == 0.5
