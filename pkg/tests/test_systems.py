import math

import numpy as np
import pytest

from core.ensembles import make_rng
from core.errors import InvalidModel, RateProfileViolation
from core.lindblad import Normalization, apply_lindbladian, spectral_decompose
from core.models import ChainParams, TFIMParams
from core.systems import (
    SIGMA_X,
    SIGMA_Z,
    analytic_chain_oracle,
    build_chain,
    build_davies,
    build_tfim,
    chain_mode_table,
    chain_rates,
    compare_with_oracle,
    gibbs_pairing_residual,
    gibbs_state,
    match_modes,
    qdb_bound_check,
    qubit_davies,
    random_hamiltonian,
    site_operator,
)


def test_site_operator_ordering():
    # site 0 is the leftmost Kronecker factor
    assert np.allclose(site_operator(SIGMA_Z, 0, 2), np.kron(SIGMA_Z, np.eye(2)))
    assert np.allclose(site_operator(SIGMA_Z, 1, 2), np.kron(np.eye(2), SIGMA_Z))


@pytest.mark.parametrize("n_sites", [2, 3])
@pytest.mark.parametrize("normalization", [Normalization.TRACE, Normalization.HS])
def test_chain_matches_analytic_oracle(n_sites, normalization):
    params = ChainParams(N=n_sites, E=1.0, gamma0=0.3, gamma1=0.7)
    oracle = analytic_chain_oracle(params, normalization)
    numeric = spectral_decompose(build_chain(params), normalization)
    comparison = compare_with_oracle(oracle, numeric)
    assert comparison.mismatches == 0, comparison
    assert comparison.eigenvalue_error < 1e-7


def test_oracle_ordering_lines_up_with_solver():
    params = ChainParams(N=2, E=1.0, gamma0=0.3, gamma1=0.7)
    oracle = analytic_chain_oracle(params)
    numeric = spectral_decompose(build_chain(params))
    assert match_modes(oracle, numeric) == [(i, i) for i in range(16)]
    assert np.allclose(oracle.eigenvalues, numeric.eigenvalues, atol=1e-8)


def test_oracle_modes_are_eigenmatrices():
    params = ChainParams(N=2, E=0.8, gamma0=0.2, gamma1=0.5, gamma_dephasing=0.1)
    model = build_chain(params)
    oracle = analytic_chain_oracle(params)
    for k in range(1, oracle.n_modes + 1):
        r = oracle.right(k)
        assert np.allclose(apply_lindbladian(model, r), oracle.eigenvalue(k) * r, atol=1e-12)


def test_chain_mode_table_matches_oracle():
    params = ChainParams(N=3, E=1.0, gamma0=0.3, gamma1=0.7)
    table = chain_mode_table(params)
    oracle = analytic_chain_oracle(params, Normalization.TRACE)
    assert np.allclose(table.eigenvalues, oracle.eigenvalues)
    assert np.allclose(table.left_norms, oracle.left_norms)
    assert np.allclose(table.right_norms, oracle.right_norms)
    assert np.allclose(np.conj(table.left_traces), oracle.left_traces)


def test_dephasing_shifts_coherences():
    # gamma_D adds -2 gamma_D to the coherence modes and leaves populations alone
    params = ChainParams(N=1, E=1.0, gamma0=0.3, gamma1=0.7, gamma_dephasing=0.25)
    decomp = spectral_decompose(build_chain(params))
    # equal real parts are ordered by imaginary part
    assert np.allclose(decomp.eigenvalues, [0.0, -1.0 - 1j, -1.0, -1.0 + 1j], atol=1e-10)


def test_chain_rates():
    p = TFIMParams(N=2, beta=0.0, gamma=0.5)
    assert chain_rates(p) == pytest.approx((0.5, 0.5))
    hot, cold = chain_rates(TFIMParams(N=2, beta=2.0, gamma=0.5))
    assert cold / hot == pytest.approx(math.exp(2.0))
    assert hot + cold == pytest.approx(1.0)
    assert chain_rates(TFIMParams(N=2, beta=1.0, gamma0=0.1, gamma1=0.9)) == (0.1, 0.9)


def test_tfim_builder():
    model = build_tfim(TFIMParams(N=3, J=1.0, g=0.5, beta=1.0))
    assert model.dim == 8
    assert len(model.jumps) == 6
    assert np.allclose(model.hamiltonian, model.hamiltonian.conj().T)


@pytest.fixture(scope="module")
def davies():
    h0 = random_hamiltonian(4, make_rng(3, index=1))
    return qubit_davies(2, 1.0, h0=h0)


def test_davies_steady_state_is_gibbs(davies):
    decomp = spectral_decompose(davies.model)
    assert np.allclose(decomp.stationary_state, davies.rho_beta, atol=1e-9)
    assert np.allclose(davies.rho_beta, gibbs_state(davies.h0, 1.0))


def test_davies_detailed_balance_and_bound(davies):
    decomp = spectral_decompose(davies.model)
    check = qdb_bound_check(davies, decomp)
    assert check.holds
    assert check.max_Ok <= check.bound * (1 + 1e-8)
    assert check.kms_residual < 1e-8
    assert check.gns_residual < 1e-8
    assert gibbs_pairing_residual(davies, decomp) < 1e-7


@pytest.mark.parametrize("n_sites", [1, 2])
def test_davies_infinite_temperature_is_well_conditioned(n_sites):
    davies = qubit_davies(n_sites, 0.0, h0=random_hamiltonian(2 ** n_sites, make_rng(5, index=1)))
    decomp = spectral_decompose(davies.model)
    assert davies.delta_e > 0
    assert decomp.condition_numbers.max() == pytest.approx(1.0, abs=1e-8)


def test_davies_bound_over_instances():
    for i in range(5):
        davies = qubit_davies(2, 2.0, h0=random_hamiltonian(4, make_rng(11, stream=i, index=1)))
        check = qdb_bound_check(davies, spectral_decompose(davies.model), strict=False)
        assert check.holds, check


@pytest.mark.slow
@pytest.mark.parametrize("beta", [0.25, 0.5, 1.0])
@pytest.mark.parametrize("n_sites, instances", [(2, 20), (3, 10)])
def test_davies_detailed_balance_over_instances(n_sites, instances, beta):
    d = 2 ** n_sites
    for i in range(instances):
        davies = qubit_davies(n_sites, beta, h0=random_hamiltonian(d, make_rng(29, stream=i, index=n_sites)))
        decomp = spectral_decompose(davies.model)
        check = qdb_bound_check(davies, decomp)
        assert check.kms_residual < 1e-9, (i, check)
        assert check.gns_residual < 1e-9, (i, check)
        assert gibbs_pairing_residual(davies, decomp) < 1e-8, i
        assert check.holds, (i, check)


def test_davies_rejects_bad_rates():
    with pytest.raises(RateProfileViolation):
        build_davies(-0.5 * SIGMA_Z, [SIGMA_X], beta=1.0, rate_profile=lambda omega: 1.0)
    with pytest.raises(RateProfileViolation):
        build_davies(-0.5 * SIGMA_Z, [SIGMA_X], beta=1.0, rate_profile=lambda omega: -1.0)
    with pytest.raises(InvalidModel):
        build_davies(np.array([[0, 1], [0, 0]]), [SIGMA_X], beta=1.0)
