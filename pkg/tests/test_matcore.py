import numpy as np
import pytest

from core.errors import NonDiagonalizable
from core.matcore import (
    cluster_eigenvalues,
    eig_general,
    is_density_matrix,
    kron,
    numerical_radius,
    partial_trace,
    schatten_norms,
    trace_norms,
    unvec,
    unvec_columns,
    vec,
)
from core.systems import SIGMA_MINUS, SIGMA_X, SIGMA_Z


def test_column_stacking_identity(rng):
    a, x, b = (rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3)) for _ in range(3))
    assert np.allclose(vec(a @ x @ b), kron(b.T, a) @ vec(x))
    assert np.allclose(unvec(vec(x), 3), x)


def test_unvec_columns_matches_unvec(rng):
    vectors = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
    stack = unvec_columns(vectors, 2)
    for i in range(3):
        assert np.allclose(stack[i], unvec(vectors[:, i], 2))


def test_partial_trace_of_product():
    a = np.array([[0.25, 0.1], [0.1, 0.75]])
    b = np.diag([0.5, 0.3, 0.2])
    joint = np.kron(a, b)
    assert np.allclose(partial_trace(joint, 2, 3, keep="A"), a)
    assert np.allclose(partial_trace(joint, 2, 3, keep="B"), b)
    with pytest.raises(ValueError):
        partial_trace(joint, 3, 3)


def test_schatten_norms_of_pauli():
    norms = schatten_norms(SIGMA_Z)
    assert norms.trace_norm == pytest.approx(2.0)
    assert norms.hs_norm == pytest.approx(np.sqrt(2.0))
    assert norms.op_norm == pytest.approx(1.0)
    assert np.allclose(trace_norms(np.array([SIGMA_Z, SIGMA_MINUS])), [2.0, 1.0])


def test_is_density_matrix():
    assert is_density_matrix(np.eye(2) / 2)
    assert not is_density_matrix(np.eye(2))
    assert not is_density_matrix(np.diag([1.5, -0.5]))


def test_numerical_radius():
    # w(sigma_minus) = 1/2, w of a Hermitian matrix is its spectral norm
    assert numerical_radius(SIGMA_MINUS) == pytest.approx(0.5, abs=1e-9)
    assert numerical_radius(SIGMA_X + 0.5 * SIGMA_Z) == pytest.approx(np.sqrt(1.25), abs=1e-9)
    with pytest.raises(ValueError):
        numerical_radius(SIGMA_X, theta_grid=8)


def test_eig_general_biorthonormal(rng):
    m = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    system = eig_general(m)
    assert np.allclose(system.left_vectors.conj().T @ system.right_vectors, np.eye(6), atol=1e-10)
    assert np.allclose(m @ system.right_vectors, system.right_vectors * system.values, atol=1e-10)


def test_eig_general_rejects_jordan_block():
    with pytest.raises(NonDiagonalizable):
        eig_general(np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_cluster_eigenvalues_chains_neighbours():
    values = np.array([0.0, 1.0, 1.0 + 1e-10, 1.0 + 2e-10, 2.0j])
    clusters = sorted(tuple(sorted(c.tolist())) for c in cluster_eigenvalues(values, 1.5e-10))
    assert clusters == [(0,), (1, 2, 3), (4,)]
