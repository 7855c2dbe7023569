import numpy as np
import pytest

from twofluid.errors import NonconvergenceError, SingularMatrixError
from twofluid.linalg import SparseMatrix, lu_solve_dense, solve_bicgstab, solve_cg


def _random_sparse(rng, n, density=0.2):
    dense = rng.standard_normal((n, n))
    dense[rng.random((n, n)) > density] = 0.0
    np.fill_diagonal(dense, rng.standard_normal(n) + 5.0)
    rows, cols = np.nonzero(dense)
    return SparseMatrix.from_coo(rows, cols, dense[rows, cols], (n, n)), dense


def _identity(n):
    idx = np.arange(n)
    return SparseMatrix.from_coo(idx, idx, np.ones(n), (n, n))


def test_from_coo_sums_duplicates():
    A = SparseMatrix.from_coo([0, 0, 1], [1, 1, 0], [2.0, 3.0, 4.0], (2, 2))
    with pytest.raises(ValueError):
        A.zero_rows([0])  # missing diagonal entry is detected
    assert A.to_dense() == pytest.approx(np.array([[0.0, 5.0], [4.0, 0.0]]))


def test_csr_invariants():
    rng = np.random.default_rng(0)
    A, dense = _random_sparse(rng, 30)
    assert np.all(np.diff(A.indptr) >= 0)
    for i in range(30):
        cols, _ = A.row_entries(i)
        assert np.all(np.diff(cols) > 0)
    x = rng.standard_normal(30)
    assert A.matvec(x) == pytest.approx(dense @ x, abs=1e-14)


def test_submatrix_matches_dense_slice():
    rng = np.random.default_rng(1)
    A, dense = _random_sparse(rng, 25)
    keep = rng.random(25) > 0.4
    sub = A.submatrix(keep)
    assert sub.to_dense() == pytest.approx(dense[np.ix_(keep, keep)])


def test_cg_identity():
    b = np.array([3.0, -1.0, 2.0])
    assert solve_cg(_identity(3), b) == pytest.approx(b)


def test_cg_diagonal():
    n = 5
    idx = np.arange(n)
    A = SparseMatrix.from_coo(idx, idx, np.arange(1.0, 6.0), (n, n))
    x = solve_cg(A, np.ones(n), tol=1e-14)
    assert x == pytest.approx(1.0 / np.arange(1.0, 6.0))


def test_cg_matches_dense_lu():
    rng = np.random.default_rng(2)
    B = rng.standard_normal((50, 50))
    dense = B.T @ B + np.eye(50)
    rows, cols = np.nonzero(dense)
    A = SparseMatrix.from_coo(rows, cols, dense[rows, cols], (50, 50))
    b = rng.standard_normal(50)
    x = solve_cg(A, b, tol=1e-12)
    assert x == pytest.approx(lu_solve_dense(dense, b), abs=1e-8)
    assert np.linalg.norm(A.matvec(x) - b) <= 1e-12 * np.linalg.norm(b)


def test_cg_converges_within_n_iterations_well_conditioned():
    rng = np.random.default_rng(3)
    n = 40
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    dense = q @ np.diag(rng.uniform(1.0, 4.0, n)) @ q.T
    rows, cols = np.nonzero(dense)
    A = SparseMatrix.from_coo(rows, cols, dense[rows, cols], (n, n))
    b = rng.standard_normal(n)
    x = solve_cg(A, b, tol=1e-12, max_iter=n)
    assert np.linalg.norm(A.matvec(x) - b) <= 1e-12 * np.linalg.norm(b)


def test_cg_nonconvergence_carries_residual():
    rng = np.random.default_rng(4)
    B = rng.standard_normal((30, 30))
    dense = B.T @ B + np.eye(30)
    rows, cols = np.nonzero(dense)
    A = SparseMatrix.from_coo(rows, cols, dense[rows, cols], (30, 30))
    with pytest.raises(NonconvergenceError) as exc:
        solve_cg(A, rng.standard_normal(30), tol=1e-14, max_iter=2)
    assert exc.value.residual is not None


def test_bicgstab_identity_and_hand_case():
    b = np.array([1.0, 2.0])
    assert solve_bicgstab(_identity(2), b) == pytest.approx(b)
    A = SparseMatrix.from_coo([0, 0, 1], [0, 1, 1], [2.0, 1.0, 3.0], (2, 2))
    x = solve_bicgstab(A, np.array([3.0, 3.0]), tol=1e-13)
    assert x == pytest.approx([1.0, 1.0])


def test_bicgstab_matches_dense_lu_on_nonsymmetric():
    rng = np.random.default_rng(5)
    n = 60
    dense = rng.standard_normal((n, n)) * 0.2 + np.diag(rng.uniform(3.0, 6.0, n))
    rows, cols = np.nonzero(dense)
    A = SparseMatrix.from_coo(rows, cols, dense[rows, cols], (n, n))
    b = rng.standard_normal(n)
    x = solve_bicgstab(A, b, tol=1e-12)
    assert x == pytest.approx(lu_solve_dense(dense, b), abs=1e-8)


def test_zero_rhs_returns_zero():
    assert solve_cg(_identity(4), np.zeros(4)) == pytest.approx(np.zeros(4))
    assert solve_bicgstab(_identity(4), np.zeros(4)) == pytest.approx(np.zeros(4))


def test_lu_identity_and_hilbert():
    assert lu_solve_dense(np.eye(3), np.arange(3.0)) == pytest.approx(np.arange(3.0))
    H = np.array([[1 / (i + j + 1) for j in range(3)] for i in range(3)])
    x = lu_solve_dense(H, H.sum(axis=1))
    assert x == pytest.approx(np.ones(3), abs=1e-10)


def test_lu_singular_raises():
    with pytest.raises(SingularMatrixError):
        lu_solve_dense(np.array([[1.0, 1.0], [1.0, 1.0]]), np.ones(2))


def test_zero_rows_and_columns():
    rng = np.random.default_rng(6)
    A, dense = _random_sparse(rng, 12)
    b = rng.standard_normal(12)
    values = np.array([0.5, -1.0])
    rows = np.array([3, 7])
    # zero_columns subtracts A[i, c] * v_c for every off-diagonal entry
    expect = b - dense[:, rows] @ values
    expect[rows] += np.diag(dense)[rows] * values
    A.zero_columns(rows, b, values)
    A.zero_rows(rows)
    ref = dense.copy()
    ref[:, rows] = 0.0
    ref[rows, :] = 0.0
    ref[rows, rows] = 1.0
    assert A.to_dense() == pytest.approx(ref)
    assert b == pytest.approx(expect)
