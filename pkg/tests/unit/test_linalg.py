"""
Unit tests for app.core.linalg: eigensolvers, projections and subspace metrics.
"""

import itertools

import numpy as np
import pytest

from app.core.errors import ConfigError, DimensionError, SingularSystemError
from app.core.linalg import (
    ProjectionOperator,
    denseness_mu,
    eigenvectors_above,
    empty_basis,
    is_orthonormal,
    kappa_s,
    ls_restricted,
    orthonormalize,
    proj_orth,
    subspace_dif,
    sym_evd,
    top_r_eigenvectors,
)


def random_basis(rng: np.random.Generator, n: int, r: int) -> np.ndarray:
    return orthonormalize(rng.standard_normal((n, r)))


def random_symmetric(rng: np.random.Generator, n: int) -> np.ndarray:
    A = rng.standard_normal((n, n))
    return A + A.T


def assert_eigenpairs(S: np.ndarray, values: np.ndarray, vectors: np.ndarray) -> None:
    for lam, v in zip(values, vectors.T):
        assert np.linalg.norm(S @ v - lam * v) <= 1e-8 * (1.0 + abs(lam))


@pytest.mark.parametrize("method", ["jacobi", "lapack"])
def test_sym_evd_reconstructs_and_sorts(method):
    rng = np.random.default_rng(0)
    for n in (1, 2, 5, 12):
        S = random_symmetric(rng, n)
        pair = sym_evd(S, method=method)
        assert np.all(np.diff(pair.values) <= 1e-12)
        assert is_orthonormal(pair.vectors, tol=1e-9)
        residual = np.linalg.norm(S - (pair.vectors * pair.values) @ pair.vectors.T)
        assert residual <= 1e-8 * max(1.0, np.linalg.norm(S))
        assert_eigenpairs(S, pair.values, pair.vectors)


def test_sym_evd_diagonal_input():
    pair = sym_evd(np.diag([3.0, 1.0, 2.0]))
    np.testing.assert_allclose(pair.values, [3.0, 2.0, 1.0], atol=1e-14)
    np.testing.assert_allclose(pair.vectors, np.eye(3)[:, [0, 2, 1]], atol=1e-14)


def test_sym_evd_two_by_two():
    pair = sym_evd(np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(pair.values, [3.0, 1.0], atol=1e-12)
    root = 1.0 / np.sqrt(2.0)
    np.testing.assert_allclose(pair.vectors[:, 0], [root, root], atol=1e-12)
    np.testing.assert_allclose(pair.vectors[:, 1], [root, -root], atol=1e-12)


def test_jacobi_matches_lapack():
    rng = np.random.default_rng(1)
    S = random_symmetric(rng, 8)
    jac = sym_evd(S, method="jacobi")
    lap = sym_evd(S, method="lapack")
    np.testing.assert_allclose(jac.values, lap.values, atol=1e-10)
    # simple spectrum: eigenvectors agree up to the shared sign convention
    np.testing.assert_allclose(np.abs(jac.vectors.T @ lap.vectors), np.eye(8), atol=1e-7)


def test_sym_evd_residuals_on_random_matrices():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = int(rng.integers(1, 33))
        S = random_symmetric(rng, n)
        pair = sym_evd(S)
        assert_eigenpairs(S, pair.values, pair.vectors)


@pytest.mark.slow
def test_jacobi_residuals_on_thousand_matrices():
    rng = np.random.default_rng(20)
    for _ in range(1000):
        n = int(rng.integers(1, 33))
        S = random_symmetric(rng, n)
        pair = sym_evd(S, method="jacobi")
        assert_eigenpairs(S, pair.values, pair.vectors)


def test_sym_evd_zero_matrix():
    pair = sym_evd(np.zeros((4, 4)))
    np.testing.assert_array_equal(pair.values, np.zeros(4))
    assert is_orthonormal(pair.vectors)


def test_sym_evd_repeated_eigenvalues():
    pair = sym_evd(np.diag([2.0, 2.0, 1.0]))
    np.testing.assert_allclose(pair.values, [2.0, 2.0, 1.0])
    assert is_orthonormal(pair.vectors)


def test_sym_evd_rejects_non_symmetric():
    with pytest.raises(DimensionError):
        sym_evd(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_sym_evd_rejects_non_square():
    with pytest.raises(DimensionError):
        sym_evd(np.zeros((2, 3)))


def test_sym_evd_rejects_non_finite():
    with pytest.raises(DimensionError):
        sym_evd(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_sym_evd_unknown_method():
    with pytest.raises(ConfigError):
        sym_evd(np.eye(2), method="power")


def test_eigenvectors_above_includes_ties():
    V = eigenvectors_above(np.diag([5.0, 3.0, 1.0]), 3.0)
    assert V.shape == (3, 2)
    assert subspace_dif(V, np.eye(3)[:, :2]) < 1e-12


@pytest.mark.parametrize(
    ("diagonal", "rank"),
    [([5.0, 0.4, 0.1], 1), ([5.0, 3.0, 0.1], 2)],
)
def test_eigenvectors_above_half(diagonal, rank):
    V = eigenvectors_above(np.diag(diagonal), 0.5)
    assert V.shape == (3, rank)
    assert subspace_dif(V, np.eye(3)[:, :rank]) < 1e-12


def test_eigenvectors_above_spectrum_is_empty():
    assert eigenvectors_above(np.diag([5.0, 3.0]), 10.0).shape == (2, 0)


def test_eigenvectors_above_threshold_must_be_positive():
    with pytest.raises(ConfigError):
        eigenvectors_above(np.eye(2), 0.0)


def test_top_r_eigenvectors():
    V = top_r_eigenvectors(np.diag([1.0, 4.0, 2.0]), 2)
    assert subspace_dif(V, np.eye(3)[:, [1, 2]]) < 1e-12
    assert top_r_eigenvectors(np.eye(3), 0).shape == (3, 0)


def test_top_r_eigenvectors_out_of_range():
    with pytest.raises(DimensionError):
        top_r_eigenvectors(np.eye(3), 4)


def test_subspace_dif_identical_subspaces():
    rng = np.random.default_rng(3)
    P = random_basis(rng, 10, 3)
    rotated = P @ random_basis(rng, 3, 3)
    assert subspace_dif(rotated, P) < 1e-12


def test_subspace_dif_ignores_rotations():
    rng = np.random.default_rng(11)
    for _ in range(20):
        Phat = random_basis(rng, 12, 4)
        P = random_basis(rng, 12, 3)
        R = random_basis(rng, 4, 4)
        Q = random_basis(rng, 3, 3)
        assert abs(subspace_dif(Phat @ R, P @ Q) - subspace_dif(Phat, P)) <= 1e-10


def test_subspace_dif_orthogonal_subspaces():
    I = np.eye(4)
    assert subspace_dif(I[:, :2], I[:, 2:]) == pytest.approx(1.0)


def test_subspace_dif_empty_estimate_explains_nothing():
    assert subspace_dif(empty_basis(4), np.eye(4)[:, :1]) == pytest.approx(1.0)


def test_subspace_dif_larger_estimate_is_not_penalized():
    I = np.eye(5)
    assert subspace_dif(I[:, :3], I[:, :1]) < 1e-15


def test_subspace_dif_dimension_mismatch():
    with pytest.raises(DimensionError):
        subspace_dif(np.eye(3)[:, :1], np.eye(4)[:, :1])


def test_subspace_dif_empty_reference():
    with pytest.raises(DimensionError):
        subspace_dif(np.eye(3)[:, :1], empty_basis(3))


def test_projection_operator_matches_dense_projector():
    rng = np.random.default_rng(4)
    P = random_basis(rng, 9, 2)
    phi = ProjectionOperator(P)
    dense = np.eye(9) - P @ P.T
    idx = [1, 4, 7]
    np.testing.assert_allclose(phi.dense(), dense, atol=1e-14)
    np.testing.assert_allclose(phi.columns(idx), dense[:, idx], atol=1e-14)
    np.testing.assert_allclose(phi.gram(idx), dense[np.ix_(idx, idx)], atol=1e-14)
    v = rng.standard_normal(9)
    np.testing.assert_allclose(phi.apply(v), dense @ v, atol=1e-12)


def test_empty_basis_projects_to_identity():
    v = np.arange(4.0)
    np.testing.assert_array_equal(ProjectionOperator.identity(4).apply(v), v)
    np.testing.assert_array_equal(proj_orth(empty_basis(4), v), v)


def test_projection_is_idempotent():
    rng = np.random.default_rng(5)
    P = random_basis(rng, 6, 2)
    v = rng.standard_normal(6)
    once = proj_orth(P, v)
    np.testing.assert_allclose(proj_orth(P, once), once, atol=1e-13)


def test_projection_dimension_mismatch():
    with pytest.raises(DimensionError):
        proj_orth(np.eye(3)[:, :1], np.ones(4))


def test_orthonormalize_keeps_order_and_orientation():
    A = np.array([[2.0, 1.0], [0.0, 3.0], [0.0, 0.0]])
    Q = orthonormalize(A)
    np.testing.assert_allclose(Q, np.eye(3)[:, :2], atol=1e-14)


def test_orthonormalize_preserves_prefix():
    rng = np.random.default_rng(6)
    P = random_basis(rng, 8, 3)
    Q = orthonormalize(np.hstack([P, rng.standard_normal((8, 2))]))
    np.testing.assert_allclose(Q[:, :3], P, atol=1e-12)
    assert is_orthonormal(Q)


def test_orthonormalize_returns_row_major():
    rng = np.random.default_rng(12)
    assert orthonormalize(rng.standard_normal((7, 3))).flags.c_contiguous


def test_denseness_mu_scans_rows():
    rng = np.random.default_rng(7)
    P = random_basis(rng, 64, 4)
    expected = max(float(P[i] @ P[i]) for i in range(64)) * 64 / 4
    assert denseness_mu(P) == pytest.approx(expected)


def test_denseness_mu_of_coordinate_basis():
    assert denseness_mu(np.eye(4)[:, :2]) == pytest.approx(2.0)


def test_denseness_mu_empty():
    with pytest.raises(DimensionError):
        denseness_mu(empty_basis(3))


def test_kappa_exact_against_enumeration():
    rng = np.random.default_rng(8)
    P = random_basis(rng, 6, 2)
    brute = max(np.linalg.norm(P[list(rows)], 2) for rows in itertools.combinations(range(6), 2))
    assert kappa_s(P, 2) == pytest.approx(brute)


def test_kappa_exact_within_sqrt_s_of_single_row():
    rng = np.random.default_rng(13)
    for _ in range(20):
        P = random_basis(rng, 10, 2)
        for s in (1, 2, 3):
            assert kappa_s(P, s) <= np.sqrt(s) * kappa_s(P, 1) + 1e-12


def test_kappa_bound_dominates_exact():
    rng = np.random.default_rng(9)
    for _ in range(20):
        P = random_basis(rng, 10, 2)
        for s in (1, 2, 3):
            assert kappa_s(P, s, mode="bound") >= kappa_s(P, s) - 1e-12


def test_kappa_rejects_bad_size():
    with pytest.raises(ConfigError):
        kappa_s(np.eye(3)[:, :1], 0)
    with pytest.raises(ConfigError):
        kappa_s(np.eye(3)[:, :1], 1, mode="sampled")


def test_kappa_refuses_huge_enumeration():
    with pytest.raises(ConfigError):
        kappa_s(np.eye(64)[:, :2], 10)


def test_ls_restricted_exact_solution():
    rng = np.random.default_rng(10)
    A = rng.standard_normal((8, 3))
    z = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(ls_restricted(A, A @ z), z, atol=1e-12)


def test_ls_restricted_two_columns():
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    np.testing.assert_allclose(ls_restricted(A, np.array([2.0, 1.0])), [1.0, 1.0], atol=1e-14)


def test_ls_restricted_orthogonal_target():
    A = np.eye(3)[:, [1]]
    np.testing.assert_allclose(ls_restricted(A, np.array([1.0, 0.0, 2.0])), [0.0], atol=1e-15)


def test_ls_restricted_empty_column_set():
    assert ls_restricted(np.zeros((4, 0)), np.ones(4)).shape == (0,)


def test_ls_restricted_rank_deficient_columns():
    A = np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]])
    with pytest.raises(SingularSystemError) as info:
        ls_restricted(A, np.ones(3))
    assert info.value.n_cols == 2
