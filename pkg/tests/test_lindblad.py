import numpy as np
import pytest
import scipy.linalg as sla

from core.errors import DegenerateMode, DegenerateSteadyState, DenseLimitExceeded, InvalidModel, ModeIndexError
from core.lindblad import (
    LindbladModel,
    Normalization,
    apply_adjoint,
    apply_lindbladian,
    build_adjoint_superoperator,
    build_superoperator,
    pairwise_overlap_matrix,
    perturb_cluster,
    perturb_eigenvalue,
    propagate,
    slowest_modes,
    spectral_decompose,
)
from core.matcore import hs_norms, is_density_matrix, trace_norms, vec
from core.models import ChainParams, TFIMParams
from core.systems import SIGMA_MINUS, SIGMA_PLUS, SIGMA_X, SIGMA_Z, build_chain, build_tfim, dephasing_generator

from conftest import QUBIT, random_density


def test_superoperator_matches_direct_action(tfim_model, rng):
    x = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    sup = build_superoperator(tfim_model)
    assert np.allclose(sup @ vec(x), vec(apply_lindbladian(tfim_model, x)))
    assert np.allclose(build_adjoint_superoperator(tfim_model) @ vec(x), vec(apply_adjoint(tfim_model, x)))


def test_adjoint_is_hilbert_schmidt_adjoint(tfim_model):
    assert np.allclose(build_adjoint_superoperator(tfim_model), build_superoperator(tfim_model).conj().T)


def test_trace_preservation(tfim_model):
    sup = build_superoperator(tfim_model)
    assert np.allclose(vec(np.eye(4)).conj() @ sup, 0.0, atol=1e-12)


def test_qubit_eigenvalues(qubit):
    assert np.allclose(qubit.eigenvalues, [0.0, -0.5 - 1j, -0.5 + 1j, -1.0], atol=1e-10)
    assert qubit.gap == pytest.approx(0.5)


def test_qubit_modes(qubit):
    expected_right = [np.diag([0.7, 0.3]), SIGMA_MINUS, SIGMA_PLUS, SIGMA_Z / 2]
    expected_left = [np.eye(2), SIGMA_MINUS, SIGMA_PLUS, np.diag([0.6, -1.4])]
    for k in range(1, 5):
        assert np.allclose(qubit.right(k), expected_right[k - 1], atol=1e-9)
        assert np.allclose(qubit.left(k), expected_left[k - 1], atol=1e-9)
    assert qubit.left_norms[3] == pytest.approx(2.0 * np.sqrt(0.58))
    assert np.conj(qubit.left_traces[3]) == pytest.approx(-0.8)


def test_heisenberg_action_on_sigma_z(qubit_model):
    # L^dag(sz) = -(g0 + g1) sz + (g1 - g0) I
    s = QUBIT.gamma0 + QUBIT.gamma1
    expected = -s * SIGMA_Z + (QUBIT.gamma1 - QUBIT.gamma0) * np.eye(2)
    assert np.allclose(apply_adjoint(qubit_model, SIGMA_Z), expected)


def test_biorthonormal_eigenpairs(tfim_model, tfim):
    assert np.allclose(pairwise_overlap_matrix(tfim), np.eye(tfim.n_modes), atol=1e-8)
    for k in range(1, tfim.n_modes + 1):
        lam = tfim.eigenvalue(k)
        assert np.allclose(apply_lindbladian(tfim_model, tfim.right(k)), lam * tfim.right(k), atol=1e-8)
        assert np.allclose(apply_adjoint(tfim_model, tfim.left(k)), np.conj(lam) * tfim.left(k), atol=1e-8)


def test_mode_order_and_steady_state(tfim_model, tfim):
    assert abs(tfim.eigenvalues[0]) < 1e-9
    real_parts = tfim.eigenvalues[1:].real
    assert np.all(np.diff(real_parts) <= 1e-8)
    assert is_density_matrix(tfim.stationary_state, 1e-8)
    assert np.allclose(apply_lindbladian(tfim_model, tfim.stationary_state), 0.0, atol=1e-10)
    assert np.allclose(tfim.left(1), np.eye(4), atol=1e-8)


@pytest.mark.parametrize("normalization, norm", [
    (Normalization.TRACE, trace_norms),
    (Normalization.HS, hs_norms),
])
def test_normalization_and_phase(tfim_model, normalization, norm):
    decomp = spectral_decompose(tfim_model, normalization)
    assert np.allclose(norm(decomp.right_modes[1:]), 1.0)
    flat = decomp.right_modes[1:].reshape(decomp.n_modes - 1, -1)
    lead = flat[np.arange(flat.shape[0]), np.argmax(np.abs(flat) >= np.abs(flat).max(axis=1, keepdims=True) * (1 - 1e-9), axis=1)]
    assert np.allclose(lead.imag, 0.0, atol=1e-12)
    assert np.all(lead.real > 0)


def test_condition_numbers_do_not_depend_on_normalization(tfim_model):
    a = spectral_decompose(tfim_model, Normalization.TRACE)
    b = spectral_decompose(tfim_model, Normalization.HS)
    assert np.allclose(a.condition_numbers, b.condition_numbers, rtol=1e-8)
    assert np.all(a.condition_numbers >= 1.0 - 1e-9)


def test_dense_limit(qubit_model):
    with pytest.raises(DenseLimitExceeded):
        spectral_decompose(qubit_model, max_superdim=3)


def test_degenerate_steady_state():
    with pytest.raises(DegenerateSteadyState):
        spectral_decompose(dephasing_generator(1, 0.5))


def test_invalid_model():
    with pytest.raises(InvalidModel):
        LindbladModel(dim=2, hamiltonian=np.array([[0, 1], [0, 0]]))
    with pytest.raises(InvalidModel):
        LindbladModel(dim=2, hamiltonian=np.zeros((2, 2)), jumps=(np.eye(3),))


def test_mode_index_is_one_based(qubit):
    assert qubit.eigenvalue(1) == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(ModeIndexError):
        qubit.eigenvalue(5)
    with pytest.raises(ModeIndexError):
        qubit.left(0)


def test_propagate_matches_matrix_exponential(tfim_model, tfim, rng):
    rho0 = random_density(rng, 4)
    t = 0.7
    expected = (sla.expm(t * build_superoperator(tfim_model)) @ vec(rho0)).reshape(4, 4, order="F")
    assert np.allclose(propagate(tfim, rho0, t), expected, atol=1e-9)
    with pytest.raises(ValueError):
        propagate(tfim, rho0, -1.0)


def test_degenerate_chain_clusters_resolved():
    model = build_chain(ChainParams(N=2, E=1.0, gamma0=0.3, gamma1=0.7))
    decomp = spectral_decompose(model)
    assert decomp.cluster_size(2) == 2
    assert np.allclose(pairwise_overlap_matrix(decomp), np.eye(16), atol=1e-8)
    for k in range(1, 17):
        assert np.allclose(apply_lindbladian(model, decomp.right(k)), decomp.eigenvalue(k) * decomp.right(k), atol=1e-8)


def test_perturbation_of_dephasing_is_exact(qubit):
    # dephasing gamma_D shifts the coherence modes by -2 gamma_D
    delta = build_superoperator(dephasing_generator(1, 0.25))
    assert perturb_eigenvalue(qubit, delta, 2) == pytest.approx(-0.5, abs=1e-10)
    assert perturb_eigenvalue(qubit, delta, 4) == pytest.approx(0.0, abs=1e-10)


def test_perturbation_matches_finite_difference(qubit_model, qubit):
    eps = 1e-5
    dh = SIGMA_X + SIGMA_Z
    delta = -1j * (np.kron(np.eye(2), dh) - np.kron(dh.T, np.eye(2)))
    predicted = perturb_eigenvalue(qubit, delta, 2)
    assert predicted == pytest.approx(-2j, abs=1e-10)
    moved = LindbladModel(dim=2, hamiltonian=qubit_model.hamiltonian + eps * dh, jumps=qubit_model.jumps)
    values = spectral_decompose(moved).eigenvalues
    shifted = values[np.argmin(np.abs(values - qubit.eigenvalue(2)))]
    assert abs(shifted - qubit.eigenvalue(2) - eps * predicted) < 1e-8


def test_perturb_cluster_on_degenerate_pair():
    decomp = spectral_decompose(build_chain(ChainParams(N=2, E=1.0, gamma0=0.3, gamma1=0.7)))
    site_dephasing = LindbladModel(dim=4, hamiltonian=np.zeros((4, 4)), jumps=(np.kron(SIGMA_Z, np.eye(2)),))
    delta = build_superoperator(site_dephasing)
    with pytest.raises(DegenerateMode):
        perturb_eigenvalue(decomp, delta, 2)
    assert np.allclose(perturb_cluster(decomp, delta, 2), [0.0, -2.0], atol=1e-9)


def test_random_perturbations_follow_first_order(rng):
    model = build_chain(ChainParams(N=2, E=1.0, gamma0=0.3, gamma1=0.7))
    decomp = spectral_decompose(model)
    sup = build_superoperator(model)
    eps = 1e-6
    for _ in range(50):
        delta = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
        delta *= eps / np.linalg.norm(delta, 2)
        moved = sla.eigvals(sup + delta)
        for k in range(1, 17):
            if decomp.cluster_size(k) == 1:
                shifts = np.array([perturb_eigenvalue(decomp, delta, k)])
                assert abs(shifts[0]) <= decomp.condition_number(k) * eps * (1 + 1e-9)
            else:
                shifts = perturb_cluster(decomp, delta, k)
            predicted = decomp.eigenvalue(k) + shifts
            # second-order residual
            residual = np.abs(moved[None, :] - predicted[:, None]).min(axis=1)
            assert residual.max() < 1e-10


def test_dephasing_commutes_with_chain_and_keeps_eigenmatrices():
    gamma_d = 0.4
    plain = build_chain(ChainParams(N=2, E=1.0, gamma0=0.3, gamma1=0.7))
    dephased = build_chain(ChainParams(N=2, E=1.0, gamma0=0.3, gamma1=0.7, gamma_dephasing=gamma_d))
    dephasing = dephasing_generator(2, gamma_d)
    a, b = build_superoperator(plain), build_superoperator(dephasing)
    assert np.abs(a @ b - b @ a).max() < 1e-12
    assert np.allclose(build_superoperator(dephased), a + b, atol=1e-12)

    decomp = spectral_decompose(plain)
    expected = []
    for k in range(1, 17):
        r = decomp.right(k)
        mu = np.vdot(r, apply_lindbladian(dephasing, r)) / np.vdot(r, r)
        # -2 gamma_D per coherence factor
        assert np.allclose(apply_lindbladian(dephasing, r), mu * r, atol=1e-10)
        assert min(abs(mu + 2 * gamma_d * m) for m in range(3)) < 1e-10
        assert np.allclose(apply_lindbladian(dephased, r), (decomp.eigenvalue(k) + mu) * r, atol=1e-10)
        expected.append(decomp.eigenvalue(k) + mu)
    moved = spectral_decompose(dephased).eigenvalues
    gaps = np.abs(moved[None, :] - np.array(expected)[:, None])
    assert gaps.min(axis=0).max() < 1e-9
    assert gaps.min(axis=1).max() < 1e-9


def test_slowest_modes_match_dense():
    model = build_tfim(TFIMParams(N=3, J=1.0, g=0.7, beta=1.0, gamma=0.5))
    dense = spectral_decompose(model)
    partial = slowest_modes(model, n_modes=4)
    assert not partial.complete
    assert np.allclose(partial.eigenvalues[:2], dense.eigenvalues[:2], atol=1e-8)
    assert np.allclose(partial.stationary_state, dense.stationary_state, atol=1e-7)
    assert np.allclose(pairwise_overlap_matrix(partial), np.eye(partial.n_modes), atol=1e-7)
    with pytest.raises(ValueError):
        slowest_modes(model, n_modes=1)


@pytest.mark.parametrize("n_modes", [2, 3, 5])
def test_slowest_modes_keep_degenerate_clusters_whole(n_modes):
    # N = 3 chain: lambda = -0.5 -+ i each appear three times
    model = build_chain(ChainParams(N=3, E=1.0, gamma0=0.3, gamma1=0.7))
    dense = spectral_decompose(model)
    partial = slowest_modes(model, n_modes=n_modes)
    m = partial.n_modes
    assert m >= n_modes
    assert partial.cluster_size(2) == 3
    assert m == 4 or m == 7
    assert np.allclose(partial.eigenvalues, dense.eigenvalues[:m], atol=1e-8)
    assert np.allclose(partial.left_norms, dense.left_norms[:m], atol=1e-6)
    assert np.allclose(partial.condition_numbers, dense.condition_numbers[:m], atol=1e-6)
    assert partial.condition_number(2) == pytest.approx(dense.condition_number(2), abs=1e-6)
    assert np.allclose(pairwise_overlap_matrix(partial), np.eye(m), atol=1e-7)
