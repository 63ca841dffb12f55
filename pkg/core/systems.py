"""Physical model builders, the analytic chain oracle and detailed-balance checks.

Qubit conventions: |0> is the first basis vector, sigma_z = diag(1, -1),
sigma_minus = |0><1| and sigma_plus = |1><0|. Site 1 is the leftmost
Kronecker factor.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.special import expit

from config import config
from .errors import BoundViolated, InvalidModel, RateProfileViolation
from .lindblad import (
    LindbladModel,
    Normalization,
    SpectralDecomposition,
    build_superoperator,
    component_weights,
    normalize_modes,
    order_modes,
)
from .matcore import as_cmatrix, cluster_eigenvalues, hs_norms, kron, kron_all, spectral_norm
from .models import ChainParams, TFIMParams

logger = logging.getLogger(__name__)

IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_PLUS = np.array([[0, 0], [1, 0]], dtype=complex)


def site_operator(op: np.ndarray, site: int, n_sites: int) -> np.ndarray:
    """``op`` acting on 0-based ``site`` of an ``n_sites`` qubit register."""
    return kron_all([op if i == site else IDENTITY for i in range(n_sites)])


# ====================== CHAIN ======================
def _local_terms(n_sites: int, site: int, gamma0: float, gamma1: float, gamma_d: float) -> list:
    jumps = []
    if gamma1 > 0:
        jumps.append(math.sqrt(gamma1) * site_operator(SIGMA_MINUS, site, n_sites))
    if gamma0 > 0:
        jumps.append(math.sqrt(gamma0) * site_operator(SIGMA_PLUS, site, n_sites))
    if gamma_d > 0:
        jumps.append(math.sqrt(gamma_d) * site_operator(SIGMA_Z, site, n_sites))
    return jumps


def build_chain(p: ChainParams) -> LindbladModel:
    """H = sum (E/2) sigma_z_i with local decay, pump and optional dephasing.

    The per-site generators are attached as commuting components.
    """
    d = 2 ** p.N
    components = []
    for site in range(p.N):
        components.append(LindbladModel(
            dim=d,
            hamiltonian=0.5 * p.E * site_operator(SIGMA_Z, site, p.N),
            jumps=tuple(_local_terms(p.N, site, p.gamma0, p.gamma1, p.gamma_dephasing)),
            label=f"chain-site{site + 1}"
        ))
    return LindbladModel(
        dim=d,
        hamiltonian=sum(c.hamiltonian for c in components),
        jumps=tuple(j for c in components for j in c.jumps),
        label=f"chain(N={p.N},E={p.E},g0={p.gamma0},g1={p.gamma1},gD={p.gamma_dephasing})",
        components=tuple(components)
    )


def _single_qubit_table(p: ChainParams):
    """(eigenvalues, right, left) of one site in the order 1..4 of the slowest-first table."""
    s = p.gamma0 + p.gamma1
    shift = 2.0 * p.gamma_dephasing
    values = np.array([0.0, -s / 2 - 1j * p.E - shift, -s / 2 + 1j * p.E - shift, -s], dtype=complex)
    right = np.array([
        np.diag([p.gamma1, p.gamma0]) / s,
        SIGMA_MINUS,
        SIGMA_PLUS,
        SIGMA_Z / 2
    ], dtype=complex)
    left = np.array([
        IDENTITY,
        SIGMA_MINUS,
        SIGMA_PLUS,
        np.diag([p.gamma0, -p.gamma1]) * 2 / s
    ], dtype=complex)
    return values, right, left


class ChainModeTable(NamedTuple):
    """Analytic per-mode data without building any d x d matrix."""
    indices: list
    eigenvalues: np.ndarray
    left_norms: np.ndarray
    right_norms: np.ndarray
    left_traces: np.ndarray


def _sorted_tuples(p: ChainParams, values_1q: np.ndarray):
    tuples = list(itertools.product(range(4), repeat=p.N))
    values = np.array([values_1q[list(t)].sum() for t in tuples])
    scale = max(float(np.abs(values).max()), 1.0)
    order = order_modes(values, 0, config.EIG_CLUSTER_TOL * scale)
    values = values[order]
    tuples = [tuples[i] for i in order]

    # within a degenerate cluster, follow the component-weighted ordering used by the solver
    weights = component_weights(p.N)
    clusters = cluster_eigenvalues(values, config.EIG_CLUSTER_TOL * scale)
    for members in clusters:
        if members.size < 2:
            continue
        mu = np.array([np.dot(weights, values_1q[list(tuples[i])]) for i in members])
        inner = members[np.lexsort((mu.imag, -mu.real))]
        reordered = [tuples[i] for i in inner]
        for slot, t in zip(np.sort(members), reordered):
            tuples[slot] = t
        values[np.sort(members)] = values[inner]
    return tuples, values, clusters


def chain_mode_table(p: ChainParams) -> ChainModeTable:
    """Eigenvalues, ||L||_2, ||R||_2 and tr L of every chain mode from the single-site table."""
    values_1q, right_1q, left_1q = _single_qubit_table(p)
    tuples, values, _ = _sorted_tuples(p, values_1q)
    l_norms = hs_norms(left_1q)
    r_norms = hs_norms(right_1q)
    l_traces = np.trace(left_1q, axis1=1, axis2=2)
    return ChainModeTable(
        indices=tuples,
        eigenvalues=values,
        left_norms=np.array([np.prod(l_norms[list(t)]) for t in tuples]),
        right_norms=np.array([np.prod(r_norms[list(t)]) for t in tuples]),
        left_traces=np.array([np.prod(l_traces[list(t)]) for t in tuples])
    )


def analytic_chain_oracle(
    p: ChainParams,
    normalization: Normalization = Normalization.TRACE
) -> SpectralDecomposition:
    """All 4^N chain modes as tensor products of the single-site eigenmatrices."""
    values_1q, right_1q, left_1q = _single_qubit_table(p)
    tuples, values, clusters = _sorted_tuples(p, values_1q)

    right = np.array([kron_all(right_1q[list(t)]) for t in tuples])
    left = np.array([kron_all(left_1q[list(t)]) for t in tuples])
    right, left = normalize_modes(right, left, normalization)

    cluster_ids = np.empty(values.size, dtype=int)
    for label_id, members in enumerate(clusters):
        cluster_ids[members] = label_id

    return SpectralDecomposition(
        d=2 ** p.N,
        eigenvalues=values,
        right_modes=right,
        left_modes=left,
        condition_numbers=hs_norms(left) * hs_norms(right),
        stationary_state=right[0].copy(),
        normalization=Normalization(normalization),
        cluster_ids=cluster_ids,
        complete=True,
        label=f"chain-oracle(N={p.N})"
    )


def chain_rates(p: TFIMParams) -> tuple:
    """(gamma0, gamma1) of the TFIM: explicit overrides, or the sum-normalized thermal split."""
    if p.gamma0 is not None:
        return p.gamma0, p.gamma1
    x = p.beta * p.E
    return 2.0 * p.gamma * float(expit(-x)), 2.0 * p.gamma * float(expit(x))


# ====================== TFIM ======================
def build_tfim(p: TFIMParams) -> LindbladModel:
    """H = -J sum sz_i sz_{i+1} - g sum sx_i (open chain) with the chain's local jumps."""
    n = p.N
    d = 2 ** n
    h = np.zeros((d, d), dtype=complex)
    for i in range(n - 1):
        h -= p.J * site_operator(SIGMA_Z, i, n) @ site_operator(SIGMA_Z, i + 1, n)
    for i in range(n):
        h -= p.g * site_operator(SIGMA_X, i, n)

    gamma0, gamma1 = chain_rates(p)
    jumps = [j for site in range(n) for j in _local_terms(n, site, gamma0, gamma1, p.gamma_dephasing)]
    logger.debug(f"TFIM rates | beta: {p.beta} | gamma0: {gamma0:.6g} | gamma1: {gamma1:.6g}")
    return LindbladModel(
        dim=d,
        hamiltonian=h,
        jumps=tuple(jumps),
        label=f"tfim(N={n},J={p.J},g={p.g},beta={p.beta},gamma={p.gamma})"
    )


# ====================== DAVIES ======================
@dataclass(frozen=True, eq=False)
class DaviesModel:
    model: LindbladModel
    h0: np.ndarray
    beta: float
    rho_beta: np.ndarray
    delta_e: float
    bohr_frequencies: tuple


def default_rate_profile(beta: float, gamma: float = 1.0) -> Callable[[float], float]:
    """gamma(omega) = gamma * exp(beta*omega/2); omega > 0 lowers the energy."""
    return lambda omega: gamma * math.exp(0.5 * beta * omega)


def _merge(values: np.ndarray, tol: float) -> np.ndarray:
    """Representative value for each entry, merging sorted runs closer than ``tol``."""
    order = np.argsort(values)
    merged = values.copy()
    anchor = values[order[0]]
    for i in order:
        if values[i] - anchor > tol:
            anchor = values[i]
        merged[i] = anchor
    return merged


def gibbs_state(h0: np.ndarray, beta: float) -> np.ndarray:
    energies, vectors = sla.eigh(h0)
    weights = np.exp(-beta * (energies - energies.min()))
    return (vectors * (weights / weights.sum())) @ vectors.conj().T


def build_davies(
    h0,
    couplings: Sequence,
    beta: float,
    rate_profile: Callable[[float], float] | None = None,
    gamma: float = 1.0
) -> DaviesModel:
    """Davies generator: each coupling split into Bohr components A(omega) with rates gamma(omega)."""
    h0 = as_cmatrix(h0)
    d = h0.shape[0]
    if np.max(np.abs(h0 - h0.conj().T)) > config.HERMITICITY_TOL * max(1.0, float(np.abs(h0).max())):
        raise InvalidModel("H0 is not Hermitian")
    rate_profile = rate_profile or default_rate_profile(beta, gamma)

    energies, vectors = sla.eigh(h0)
    tol = config.BOHR_MERGE_TOL * max(spectral_norm(h0), 1.0)
    levels = _merge(energies, tol)
    level_values = np.unique(levels)
    projectors = [
        vectors[:, levels == e] @ vectors[:, levels == e].conj().T for e in level_values
    ]

    gaps = np.subtract.outer(level_values, level_values)   # gaps[a, b] = e_a - e_b
    frequencies = np.unique(_merge(-gaps.ravel(), tol))

    jumps = []
    used = set()
    for a_op in couplings:
        a_op = as_cmatrix(a_op)
        blocks = {}
        for a, pa in enumerate(projectors):
            for b, pb in enumerate(projectors):
                # maps level b to level a, lowering the energy by omega = e_b - e_a
                omega = frequencies[np.argmin(np.abs(frequencies - (level_values[b] - level_values[a])))]
                block = pa @ a_op @ pb
                if np.max(np.abs(block)) > 1e-14:
                    blocks[omega] = blocks.get(omega, 0) + block
        for omega, component in sorted(blocks.items()):
            rate = rate_profile(float(omega))
            if rate < 0:
                raise RateProfileViolation(f"Negative rate {rate} at omega={omega:.6g}")
            if rate > 0:
                jumps.append(math.sqrt(rate) * component)
            used.add(float(omega))

    for omega in sorted(used):
        forward, backward = rate_profile(omega), rate_profile(-omega)
        expected = math.exp(-beta * omega) * forward
        if not math.isclose(backward, expected, rel_tol=1e-9, abs_tol=1e-300):
            raise RateProfileViolation(
                f"gamma(-omega) = {backward:.6g} but exp(-beta*omega)*gamma(omega) = {expected:.6g} "
                f"at omega = {omega:.6g}"
            )

    model = LindbladModel(dim=d, hamiltonian=h0, jumps=tuple(jumps), label=f"davies(d={d},beta={beta})")
    logger.debug(
        f"Davies model | d: {d} | beta: {beta} | levels: {level_values.size} | "
        f"frequencies: {len(used)} | jumps: {len(jumps)}"
    )
    return DaviesModel(
        model=model,
        h0=h0,
        beta=beta,
        rho_beta=gibbs_state(h0, beta),
        delta_e=float(energies.max() - energies.min()),
        bohr_frequencies=tuple(sorted(used))
    )


def random_hamiltonian(d: int, rng: np.random.Generator) -> np.ndarray:
    """GUE matrix scaled to unit operator norm."""
    g = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / math.sqrt(2.0)
    h = 0.5 * (g + g.conj().T)
    return h / np.linalg.norm(h, 2)


def qubit_davies(n_sites: int, beta: float, h0=None, gamma: float = 1.0, E: float = 1.0) -> DaviesModel:
    """Davies model on ``n_sites`` qubits with sigma_x coupled on every site."""
    if h0 is None:
        h0 = sum(-0.5 * E * site_operator(SIGMA_Z, i, n_sites) for i in range(n_sites))
    couplings = [site_operator(SIGMA_X, i, n_sites) for i in range(n_sites)]
    return build_davies(h0, couplings, beta, gamma=gamma)


class BoundCheck(NamedTuple):
    max_Ok: float
    bound: float
    kms_residual: float
    gns_residual: float

    @property
    def holds(self) -> bool:
        return self.max_Ok <= self.bound * (1.0 + 1e-8)


def _left_right_superop(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Superoperator of X -> left X right under column stacking."""
    return np.kron(right.T, left)


def _symmetry_residual(dissipator: np.ndarray, weight: np.ndarray, weight_inv: np.ndarray) -> float:
    residual = dissipator - weight @ dissipator.conj().T @ weight_inv
    return float(np.linalg.norm(residual) / max(np.linalg.norm(dissipator), 1e-300))


def qdb_bound_check(davies: DaviesModel, decomp: SpectralDecomposition, strict: bool = True) -> BoundCheck:
    """O_k <= exp(beta*dE/2) plus relative KMS and GNS symmetry residuals of the dissipator.

    With ``strict`` a violated bound raises BoundViolated; otherwise the caller
    compares ``max_Ok`` with ``bound`` itself.
    """
    d = davies.model.dim
    eye = np.eye(d, dtype=complex)
    energies, vectors = sla.eigh(davies.h0)
    weights = np.exp(-davies.beta * (energies - energies.min()))
    weights /= weights.sum()

    def _power(exponent: float) -> np.ndarray:
        return (vectors * weights ** exponent) @ vectors.conj().T

    h0 = davies.h0
    hamiltonian_part = -1j * (np.kron(eye, h0) - np.kron(h0.T, eye))
    dissipator = build_superoperator(davies.model) - hamiltonian_part

    root, root_inv = _power(0.5), _power(-0.5)
    kms = _symmetry_residual(
        dissipator,
        _left_right_superop(root, root),
        _left_right_superop(root_inv, root_inv)
    )
    gns = _symmetry_residual(
        dissipator,
        _left_right_superop(eye, _power(1.0)),
        _left_right_superop(eye, _power(-1.0))
    )

    bound = math.exp(0.5 * davies.beta * davies.delta_e)
    max_ok = float(decomp.condition_numbers.max())
    result = BoundCheck(max_Ok=max_ok, bound=bound, kms_residual=kms, gns_residual=gns)
    logger.debug(
        f"QDB check | {davies.model.label} | max O_k: {max_ok:.10g} | bound: {bound:.10g} | "
        f"KMS: {kms:.2e} | GNS: {gns:.2e}"
    )
    if strict and not result.holds:
        raise BoundViolated(f"max O_k = {max_ok:.12g} exceeds exp(beta*dE/2) = {bound:.12g}")
    return result


def gibbs_pairing_residual(davies: DaviesModel, decomp: SpectralDecomposition) -> float:
    """Largest relative distance of L_k from span(R_k rho_beta^-1) over nondegenerate modes."""
    rho_inv = np.linalg.inv(davies.rho_beta)
    worst = 0.0
    for k in range(1, decomp.n_modes + 1):
        if decomp.cluster_size(k) > 1:
            continue
        target = decomp.right(k) @ rho_inv
        left = decomp.left(k)
        c = np.vdot(target, left) / np.vdot(target, target)
        worst = max(worst, float(np.linalg.norm(left - c * target) / np.linalg.norm(left)))
    return worst


# ====================== MODE MATCHING ======================
def match_modes(reference: SpectralDecomposition, candidate: SpectralDecomposition) -> list:
    """Greedy pairing of modes by eigenvalue, ties broken by |<R_ref, R_cand>|.

    Returns 0-based (reference_index, candidate_index) pairs in reference order.
    """
    scale = max(float(np.abs(reference.eigenvalues).max()), 1.0)
    tie = max(config.EIG_CLUSTER_TOL * scale, 1e-9)
    free = np.ones(candidate.n_modes, dtype=bool)
    pairs = []
    for i, lam in enumerate(reference.eigenvalues):
        distance = np.where(free, np.abs(candidate.eigenvalues - lam), np.inf)
        best = float(distance.min())
        near = np.flatnonzero(distance <= best + tie)
        if near.size > 1:
            r = reference.right_modes[i].ravel()
            overlaps = [
                abs(np.vdot(r, candidate.right_modes[j].ravel())) / candidate.right_norms[j] for j in near
            ]
            j = int(near[int(np.argmax(overlaps))])
        else:
            j = int(near[0])
        free[j] = False
        pairs.append((i, j))
    return pairs


class OracleComparison(NamedTuple):
    eigenvalue_error: float
    left_norm_error: float
    left_trace_error: float
    mismatches: int


def compare_with_oracle(
    oracle: SpectralDecomposition,
    numeric: SpectralDecomposition,
    tol: float = 1e-7
) -> OracleComparison:
    """Largest per-mode deviations of (lambda, ||L||_2, tr L) after matching."""
    pairs = match_modes(oracle, numeric)
    i, j = np.array(pairs).T
    ev = np.abs(oracle.eigenvalues[i] - numeric.eigenvalues[j])
    ln = np.abs(oracle.left_norms[i] - numeric.left_norms[j])
    lt = np.abs(oracle.left_traces[i] - numeric.left_traces[j])
    mismatches = int(np.sum((ev > tol) | (ln > tol) | (lt > tol)))
    return OracleComparison(float(ev.max()), float(ln.max()), float(lt.max()), mismatches)


def dephasing_generator(n_sites: int, gamma_d: float) -> LindbladModel:
    """Pure dephasing gamma_D sum_i (sz_i rho sz_i - rho)."""
    d = 2 ** n_sites
    return LindbladModel(
        dim=d,
        hamiltonian=np.zeros((d, d)),
        jumps=tuple(math.sqrt(gamma_d) * site_operator(SIGMA_Z, i, n_sites) for i in range(n_sites)),
        label=f"dephasing(N={n_sites})"
    )


__all__ = [
    "BoundCheck",
    "ChainModeTable",
    "DaviesModel",
    "OracleComparison",
    "analytic_chain_oracle",
    "build_chain",
    "build_davies",
    "build_tfim",
    "chain_mode_table",
    "chain_rates",
    "compare_with_oracle",
    "default_rate_profile",
    "dephasing_generator",
    "gibbs_pairing_residual",
    "gibbs_state",
    "match_modes",
    "qdb_bound_check",
    "qubit_davies",
    "random_hamiltonian",
    "site_operator",
]
