import numpy as np
import pytest
from scipy.stats import ks_2samp

from core.ensembles import (
    EnsembleKind,
    EnsembleSpec,
    chunk_sizes,
    derive_seed,
    draw_states,
    haar_unitaries,
    make_rng,
    sample_chunk,
    sample_haar_unitary,
    sample_state,
)
from core.errors import InvalidEnsemble
from core.matcore import is_density_matrix

D = 4
PURE = np.diag([1.0, 0.0, 0.0, 0.0])


def test_streams_are_reproducible_and_distinct():
    a = make_rng(7, stream=2).standard_normal(5)
    b = make_rng(7, stream=2).standard_normal(5)
    c = make_rng(7, stream=3).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)


def test_derive_seed():
    assert derive_seed(5, 1, 2) == derive_seed(5, 1, 2)
    assert derive_seed(5, 1, 2) != derive_seed(5, 2, 1)
    assert 0 <= derive_seed(5, 0) < 2 ** 64


def test_haar_unitaries_are_unitary():
    u = haar_unitaries(make_rng(1), 3, 10)
    assert np.allclose(u @ np.conj(np.swapaxes(u, 1, 2)), np.eye(3), atol=1e-12)
    single = sample_haar_unitary(3, seed=1)
    assert np.allclose(single @ single.conj().T, np.eye(3), atol=1e-12)
    with pytest.raises(ValueError):
        sample_haar_unitary(0, seed=1)


def test_haar_average_is_maximally_mixed():
    # E[U rho U^dag] = I/d for any reference state
    states = draw_states(EnsembleSpec.two_design(PURE), make_rng(3), 4000)
    assert np.allclose(states.mean(axis=0), np.eye(D) / D, atol=0.03)



def test_haar_fourth_moment():
    # E|U_00|^4 = 2 / (d(d + 1)) = 1/3 for d = 2
    n = 20000
    x = np.abs(haar_unitaries(make_rng(4), 2, n)[:, 0, 0]) ** 4
    assert abs(x.mean() - 1.0 / 3.0) < 5 * x.std() / np.sqrt(n)


def test_two_design_preserves_spectrum():
    reference = np.diag([0.5, 0.3, 0.2, 0.0])
    states = draw_states(EnsembleSpec.two_design(reference), make_rng(8), 100)
    spectra = np.linalg.eigvalsh(states)
    assert np.allclose(spectra, np.sort(np.diag(reference)), atol=1e-12)


def test_square_induced_is_hilbert_schmidt():
    def purities(spec, seed):
        states = draw_states(spec, make_rng(seed), 2000)
        return np.einsum("nij,nji->n", states, states).real

    hs = purities(EnsembleSpec.hilbert_schmidt(D), 5)
    assert ks_2samp(purities(EnsembleSpec.induced(D, D), 6), hs).pvalue > 1e-3
    assert ks_2samp(purities(EnsembleSpec.induced(D, 2), 6), hs).pvalue < 1e-6

@pytest.mark.parametrize("spec", [
    EnsembleSpec.two_design(PURE),
    EnsembleSpec.hilbert_schmidt(D),
    EnsembleSpec.induced(D, 2),
    EnsembleSpec.constrained_pure(np.eye(2 * D), D, 2),
], ids=lambda s: s.label)
def test_draws_are_density_matrices(spec):
    states = draw_states(spec, make_rng(11), 50)
    assert states.shape == (50, D, D)
    assert all(is_density_matrix(rho, 1e-10) for rho in states)


def test_constrained_pure_without_environment_is_pure():
    spec = EnsembleSpec.constrained_pure(np.eye(D), D)
    rho = sample_state(spec, seed=4)
    assert np.trace(rho @ rho).real == pytest.approx(1.0)


def test_constrained_pure_stays_in_subspace():
    # P projects onto span{|0>, |1>}: every draw is supported there
    projector = np.diag([1.0, 1.0, 0.0, 0.0])
    spec = EnsembleSpec.constrained_pure(projector, D)
    assert spec.rank == 2
    states = draw_states(spec, make_rng(2), 20)
    assert np.allclose(states[:, 2:, :], 0.0)
    assert np.allclose(states[:, :, 2:], 0.0)


def test_point_mass_two_design():
    spec = EnsembleSpec.two_design(np.eye(D) / D)
    assert spec.is_point_mass
    assert np.array_equal(draw_states(spec, make_rng(0), 3), np.broadcast_to(np.eye(D) / D, (3, D, D)))


def test_chunks_depend_only_on_seed_and_index():
    spec = EnsembleSpec.hilbert_schmidt(D)
    assert np.array_equal(sample_chunk(spec, 9, 3, 10), sample_chunk(spec, 9, 3, 10))
    assert not np.allclose(sample_chunk(spec, 9, 3, 10), sample_chunk(spec, 9, 4, 10))
    assert chunk_sizes(1200, 500) == [500, 500, 200]
    assert chunk_sizes(1000, 500) == [500, 500]


def test_invalid_ensembles():
    with pytest.raises(InvalidEnsemble):
        EnsembleSpec.two_design(np.eye(2))
    with pytest.raises(InvalidEnsemble):
        EnsembleSpec.induced(D, 0)
    with pytest.raises(InvalidEnsemble):
        EnsembleSpec.constrained_pure(np.ones((D, D)), D)
    with pytest.raises(InvalidEnsemble):
        EnsembleSpec.constrained_pure(np.eye(D), D, dim_e=2)
    with pytest.raises(InvalidEnsemble):
        EnsembleSpec(EnsembleKind.HILBERT_SCHMIDT, 0)


def test_labels():
    assert EnsembleSpec.induced(D, 3).label == "Induced(3)"
    assert EnsembleSpec.constrained_pure(np.eye(2 * D), D, 2).label == "ConstrainedPure(d_R=8,d_E=2)"
    assert EnsembleSpec.hilbert_schmidt(D).label == "HilbertSchmidt"
