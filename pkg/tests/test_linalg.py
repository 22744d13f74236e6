import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from regionid.linalg import pseudoinverse, rank_with_tol, rotate90, thin_svd, ThinSvd


def test_single_unit_row():
    s = thin_svd([[1.0, 0.0]])
    assert s.singular_values == pytest.approx([1.0])
    assert np.allclose(s.V[:, 0], [1, 0])
    assert np.allclose(np.abs(s.V[:, 1]), [0, 1])


def test_parallel_rows_give_exact_zero():
    s = thin_svd([[1.0, 0.0], [2.0, 0.0]])
    assert s.singular_values[0] == pytest.approx(np.sqrt(5))
    assert s.singular_values[1] == 0.0
    assert np.allclose(s.V[:, 0], [1, 0])
    assert np.allclose(s.U[:, 0], np.array([1, 2]) / np.sqrt(5))


def test_single_row_v2_is_quarter_turn():
    a = np.array([3.0, -4.0])
    s = thin_svd(a[None, :])
    assert np.allclose(s.V[:, 0], a / 5)
    expected = rotate90(a / 5)
    assert np.allclose(s.V[:, 1], expected) or np.allclose(s.V[:, 1], -expected)


def test_zero_matrix():
    s = thin_svd(np.zeros((3, 2)))
    assert np.all(s.singular_values == 0)
    assert np.array_equal(s.V, np.eye(2))
    assert rank_with_tol(s, 1e-8) == 0
    assert np.array_equal(pseudoinverse(np.zeros((3, 2))), np.zeros((2, 3)))


def test_random_reconstruction_and_orthonormality():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        k = int(rng.integers(1, 17))
        A = rng.normal(size=(k, 2)) * rng.uniform(0.1, 10)
        s = thin_svd(A)
        scale = max(1.0, np.max(np.abs(A)))
        assert np.max(np.abs(s.reconstruct() - A)) <= 1e-10 * scale
        assert np.allclose(s.U.T @ s.U, np.eye(k), atol=1e-10)
        assert np.allclose(s.V.T @ s.V, np.eye(2), atol=1e-10)
        assert np.all(np.diff(s.singular_values) <= 0)


def test_sign_convention_is_deterministic():
    A = np.array([[-1.0, 2.0], [0.5, 0.3], [2.0, -1.0]])
    s = thin_svd(A)
    for j in range(2):
        col = s.V[:, j]
        first = col[np.argmax(np.abs(col) > 1e-12)]
        assert first > 0


@pytest.mark.parametrize("sv,expected", [
    ([np.sqrt(5), 0.0], 1),
    ([1.0, 1.0], 2),
    ([1.0, 1e-12], 1),
])
def test_rank_with_tol(sv, expected):
    s = ThinSvd(np.eye(2), np.array(sv), np.eye(2))
    assert rank_with_tol(s, 1e-8) == expected


def test_rank_tol_validated():
    with pytest.raises(ValueError):
        rank_with_tol(thin_svd([[1, 0]]), 0.0)


@given(arrays(np.float64, st.tuples(st.integers(2, 8), st.just(2)),
              elements=st.floats(-10, 10, allow_nan=False)),
       st.randoms(use_true_random=False))
@settings(max_examples=100, deadline=None)
def test_rank_invariant_under_row_permutation(A, rnd):
    perm = list(range(A.shape[0]))
    rnd.shuffle(perm)
    assert rank_with_tol(thin_svd(A)) == rank_with_tol(thin_svd(A[perm]))


def _penrose_ok(A, P, tol=1e-9):
    return (np.allclose(A @ P @ A, A, atol=tol) and np.allclose(P @ A @ P, P, atol=tol)
            and np.allclose((A @ P).T, A @ P, atol=tol) and np.allclose((P @ A).T, P @ A, atol=tol))


def test_pseudoinverse_examples():
    assert np.allclose(pseudoinverse(np.eye(2)), np.eye(2))
    A = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    assert _penrose_ok(A, pseudoinverse(A))
    assert np.allclose(pseudoinverse([[1.0, 0.0]]), [[1.0], [0.0]])


def test_pseudoinverse_random_penrose_and_lstsq():
    rng = np.random.default_rng(1)
    for _ in range(300):
        k = int(rng.integers(1, 9))
        A = rng.normal(size=(k, 2))
        if rng.random() < 0.3:
            A[:, 1] = 2.5 * A[:, 0]  # rank one
        P = pseudoinverse(A)
        assert _penrose_ok(A, P)
        b = rng.normal(size=k)
        if np.linalg.matrix_rank(A) == 2:
            # normal-equations oracle
            x = np.linalg.solve(A.T @ A, A.T @ b)
            assert np.allclose(P @ b, x, atol=1e-9)


@pytest.mark.parametrize("v,out", [((1, 0), (0, 1)), ((0, 1), (-1, 0)), ((3, 4), (-4, 3))])
def test_rotate90(v, out):
    r = rotate90(v)
    assert np.allclose(r, out)
    assert r @ np.asarray(v) == 0
