import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mlpdenoise.numerics import child_rng, gaussian, make_rng, mat_vec_mul, power_iteration, singular_values


def jacobi_eigenvalues(S, sweeps=100):
    """Classical two-sided Jacobi on a symmetric matrix; independent of the code under test."""
    S = np.array(S, dtype=float)
    n = S.shape[0]
    for _ in range(sweeps):
        off = np.sqrt(np.sum(S ** 2) - np.sum(np.diag(S) ** 2))
        if off < 1e-15 * np.linalg.norm(S):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if S[p, q] == 0:
                    continue
                theta = 0.5 * np.arctan2(2 * S[p, q], S[q, q] - S[p, p])
                c, s = np.cos(theta), np.sin(theta)
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q], J[q, p] = s, -s
                S = J.T @ S @ J
    return np.sort(np.diag(S))[::-1]


def test_mat_vec_mul_examples():
    assert np.array_equal(mat_vec_mul(np.eye(3), [1, 2, 3]), [1, 2, 3])
    assert np.array_equal(mat_vec_mul(np.zeros((2, 3)), [4, 5, 6]), [0, 0])
    assert np.array_equal(mat_vec_mul([[1, 2], [3, 4]], [1, 1]), [3, 7])


def test_mat_vec_mul_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension mismatch"):
        mat_vec_mul(np.eye(3), [1, 2])


@given(st.integers(0, 2 ** 32), st.floats(-10, 10), st.floats(-10, 10))
@settings(max_examples=50)
def test_mat_vec_mul_linear(seed, a, b):
    rng = make_rng(seed)
    A = rng.normal(size=(4, 6))
    x, y = rng.normal(size=6), rng.normal(size=6)
    lhs = mat_vec_mul(A, a * x + b * y)
    rhs = a * mat_vec_mul(A, x) + b * mat_vec_mul(A, y)
    scale = max(1.0, np.max(np.abs(rhs)), np.max(np.abs(a * mat_vec_mul(A, x))))
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale * 10


def test_singular_values_identity_and_diagonal():
    assert np.allclose(singular_values(np.eye(4)), 1.0, atol=1e-15)
    assert np.allclose(singular_values(np.diag([3.0, 2.0, 1.0])), [3, 2, 1], atol=1e-15)
    assert np.allclose(singular_values(np.diag([1.0, 3.0, 2.0])), [3, 2, 1], atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_singular_values_match_eigen_oracle(seed):
    A = make_rng(seed).normal(size=(5, 3))
    expected = np.sqrt(np.clip(jacobi_eigenvalues(A.T @ A), 0, None))
    got = singular_values(A)
    assert got.shape == (3,)
    assert np.max(np.abs(got - expected) / expected) < 1e-9
    assert np.allclose(got, np.linalg.svd(A, compute_uv=False), rtol=1e-12)


def test_singular_values_wide_and_rank_deficient():
    rng = make_rng(3)
    A = rng.normal(size=(3, 7))
    assert np.allclose(singular_values(A), np.linalg.svd(A, compute_uv=False), rtol=1e-12)
    u, v = rng.normal(size=6), rng.normal(size=4)
    sv = singular_values(np.outer(u, v))
    assert sv[0] == pytest.approx(np.linalg.norm(u) * np.linalg.norm(v), rel=1e-12)
    assert np.all(sv[1:] < 1e-12 * sv[0])


def test_singular_values_rejects_non_finite():
    with pytest.raises(ValueError, match="non-finite"):
        singular_values(np.array([[1.0, np.nan], [0.0, 1.0]]))


@given(st.integers(1, 12), st.integers(0, 2 ** 32))
@settings(max_examples=25, deadline=None)
def test_orthogonal_matrices_have_unit_singular_values(n, seed):
    Q, _ = np.linalg.qr(make_rng(seed).normal(size=(n, n)))
    sv = singular_values(Q)
    assert np.all(np.abs(sv - 1.0) < 1e-9)


@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=st.floats(-1e3, 1e3)))
@settings(max_examples=50, deadline=None)
def test_singular_values_sorted_nonnegative(A):
    sv = singular_values(A)
    assert len(sv) == min(A.shape)
    assert np.all(sv >= 0)
    assert np.all(np.diff(sv) <= 0)
    assert np.allclose(sv, np.linalg.svd(A, compute_uv=False), atol=1e-9 * max(1.0, np.abs(A).max()))


def test_gaussian_degenerate_and_deterministic():
    assert np.array_equal(gaussian(make_rng(1), 4, 0.0, 0.0), np.zeros(4))
    assert np.array_equal(gaussian(make_rng(5), 100, 0, 25), gaussian(make_rng(5), 100, 0, 25))
    with pytest.raises(ValueError):
        gaussian(make_rng(1), 3, 0, -1)


def test_gaussian_std_statistics():
    # std of the sample std for n=1e6 normal draws is sigma/sqrt(2n) ~ 0.018; [24.9, 25.1] is > 5 sd wide
    x = gaussian(make_rng(11), 10 ** 6, 0.0, 25.0)
    assert 24.9 <= x.std() <= 25.1


def test_child_streams_are_independent_and_reproducible():
    a = child_rng(7, 0).random(5)
    assert np.array_equal(a, child_rng(7, 0).random(5))
    assert not np.array_equal(a, child_rng(7, 1).random(5))
    assert not np.array_equal(a, child_rng(8, 0).random(5))


def test_power_iteration_matches_top_eigenvalue():
    A = make_rng(2).normal(size=(8, 5))
    G = A.T @ A
    assert power_iteration(G) == pytest.approx(np.linalg.eigvalsh(G)[-1], rel=1e-9)
