import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from frenetplan.errors import FactorizationError, ParameterError
from frenetplan.qpcore import (batch_affine_solve, factor_kkt, factorization_count, prefactor_kkt,
                               prefactor_kkt_gram, stack_rhs)


def _kkt(F, A, rho):
    n = A.shape[1]
    m = A.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = np.eye(n) + rho * F.T @ F
    K[:n, n:] = A.T
    K[n:, :n] = A
    return K


def _random(rng, n=12, m=4, r=30):
    return rng.normal(size=(r, n)), rng.normal(size=(m, n))


def test_zero_F_single_row_is_hyperplane_projection(rng):
    n = 8
    a = rng.normal(size=(1, n))
    f = prefactor_kkt(np.zeros((1, n)), a, rho=1.0)
    xi = rng.normal(size=n)
    b = np.array([0.7])
    sol = f.solve(np.concatenate([xi, b]))[:n]
    expected = xi - a.T @ np.linalg.solve(a @ a.T, a @ xi - b)
    assert np.allclose(sol, expected.ravel(), atol=1e-12)


def test_vanishing_rho_recovers_F_free_solution(rng):
    F, A = _random(rng)
    eta = rng.normal(size=16)
    s0 = prefactor_kkt(np.zeros_like(F), A, 1.0).solve(eta)
    s1 = prefactor_kkt(F, A, 1e-12).solve(eta)
    assert np.allclose(s0, s1, atol=1e-8)


def test_factor_inverts_kkt_matrix(rng):
    F, A = _random(rng)
    f = prefactor_kkt(F, A, 0.7)
    K = _kkt(F, A, 0.7)
    for _ in range(10):
        v = rng.normal(size=16)
        assert np.allclose(K @ f.solve(v), v, atol=1e-8)
        assert np.allclose(K.T @ f.solve_transposed(v), v, atol=1e-8)
    assert np.allclose(f.inverse() @ K, np.eye(16), atol=1e-8)


def test_dense_solve_agreement(rng):
    F, A = _random(rng)
    f = prefactor_kkt(F, A, 2.0)
    eta = rng.normal(size=(50, 16))
    dense = np.linalg.solve(_kkt(F, A, 2.0), eta.T).T
    assert np.max(np.abs(f.solve(eta) - dense)) <= 1e-8


def test_gram_and_matrix_forms_agree(rng):
    F, A = _random(rng)
    eta = rng.normal(size=16)
    assert np.allclose(prefactor_kkt(F, A, 1.3).solve(eta), prefactor_kkt_gram(F.T @ F, A, 1.3).solve(eta))


def test_batch_equals_sequential(rng):
    F, A = _random(rng)
    f = prefactor_kkt(F, A, 1.0)
    eta = rng.normal(size=(256, 16))
    batch = batch_affine_solve(f, eta)
    seq = np.stack([f.solve(e) for e in eta])
    assert np.max(np.abs(batch.xi - seq[:, :12])) <= 1e-10
    assert np.max(np.abs(batch.nu - seq[:, 12:])) <= 1e-10
    assert np.allclose(A @ batch.xi.T, eta[:, 12:].T, atol=1e-8)


def test_batch_of_one_is_bitwise_single_solve(rng):
    F, A = _random(rng)
    f = prefactor_kkt(F, A, 1.0)
    eta = rng.normal(size=16)
    assert np.array_equal(batch_affine_solve(f, eta[None]).xi[0], f.solve(eta[None])[0, :12])


def test_permutation_is_preserved(rng):
    F, A = _random(rng)
    f = prefactor_kkt(F, A, 1.0)
    eta = rng.normal(size=(400, 16))
    perm = rng.permutation(400)
    assert batch_affine_solve(f, eta).xi.shape == (400, 12)
    assert np.allclose(batch_affine_solve(f, eta[perm]).xi, batch_affine_solve(f, eta).xi[perm], atol=1e-14)


def test_rank_deficient_A_is_rejected(rng):
    F, A = _random(rng)
    A[1] = A[0]
    with pytest.raises(FactorizationError, match="equality block"):
        prefactor_kkt(F, A, 1.0)


def test_singular_cost_block_is_rejected():
    with pytest.raises(FactorizationError, match="cost block"):
        factor_kkt(np.zeros((4, 4)), np.ones((1, 4)))


def test_bad_inputs(rng):
    F, A = _random(rng)
    with pytest.raises(ParameterError):
        prefactor_kkt(F, A, 0.0)
    f = prefactor_kkt(F, A, 1.0)
    with pytest.raises(ParameterError):
        f.solve(np.zeros(15))
    with pytest.raises(ParameterError):
        batch_affine_solve(f, np.zeros(16))


def test_counter_counts_factorizations(rng):
    F, A = _random(rng)
    c0 = factorization_count()
    f = prefactor_kkt(F, A, 1.0)
    assert factorization_count() == c0 + 1
    for _ in range(20):
        f.solve(rng.normal(size=16))
    assert factorization_count() == c0 + 1


def test_stack_rhs_broadcasts_b():
    top = np.zeros((3, 5))
    out = stack_rhs(top, np.array([1.0, 2.0]))
    assert out.shape == (3, 7) and np.all(out[:, 5:] == [1.0, 2.0])


@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_primal_satisfies_equalities(seed, rho):
    r = np.random.default_rng(seed)
    F, A = _random(r, n=10, m=3, r=15)
    f = prefactor_kkt(F, A, rho)
    eta = r.normal(size=(8, 13))
    sol = batch_affine_solve(f, eta)
    assert np.allclose(sol.xi @ A.T, eta[:, 10:], atol=1e-8)
