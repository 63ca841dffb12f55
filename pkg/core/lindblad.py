"""Lindbladian superoperators, biorthonormal spectral decomposition and
first-order eigenvalue response.

Vectorization is column stacking throughout: ``vec(A X B) = (B^T (x) A) vec(X)``.
Mode indices in the public functions are 1-based (k = 1 is the steady state).
"""

import hashlib
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, eigs, gmres

from config import config
from .errors import (
    DegenerateMode,
    DegenerateSteadyState,
    DenseLimitExceeded,
    InvalidModel,
    ModeIndexError,
    NumericalError,
)
from .matcore import (
    as_cmatrix,
    cluster_eigenvalues,
    eig_general,
    hermitian_part,
    hs_norms,
    spectral_norm,
    trace_norms,
    unvec,
    unvec_columns,
    vec,
)

logger = logging.getLogger(__name__)


class Normalization(str, Enum):
    TRACE = "TraceNorm"
    HS = "HSNorm"


# ====================== MODEL ======================
@dataclass(frozen=True)
class LindbladModel:
    """H and jump operators of a GKSL generator on C^dim.

    ``components`` optionally lists commuting sub-generators that sum to this
    one; they are used to pick a canonical basis inside degenerate clusters.
    """
    dim: int
    hamiltonian: np.ndarray
    jumps: tuple = ()
    label: str = "model"
    components: tuple = field(default=(), repr=False)

    def __post_init__(self):
        h = as_cmatrix(self.hamiltonian)
        if h.shape != (self.dim, self.dim):
            raise InvalidModel(f"Hamiltonian shape {h.shape} does not match dim {self.dim}")
        scale = max(1.0, float(np.max(np.abs(h), initial=0.0)))
        if np.max(np.abs(h - h.conj().T), initial=0.0) > config.HERMITICITY_TOL * scale:
            raise InvalidModel("Hamiltonian is not Hermitian")
        jumps = tuple(as_cmatrix(j) for j in self.jumps)
        for index, j in enumerate(jumps):
            if j.shape != (self.dim, self.dim):
                raise InvalidModel(f"Jump {index} has shape {j.shape}, expected {(self.dim, self.dim)}")
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def superdim(self) -> int:
        return self.dim * self.dim

    def fingerprint(self) -> str:
        """Content hash used as the decomposition cache key (label excluded)."""
        digest = hashlib.sha256()
        digest.update(f"dim={self.dim};jumps={len(self.jumps)}".encode())
        digest.update(np.ascontiguousarray(self.hamiltonian).tobytes())
        for j in self.jumps:
            digest.update(np.ascontiguousarray(j).tobytes())
        for component in self.components:
            digest.update(component.fingerprint().encode())
        return digest.hexdigest()


# ====================== SUPEROPERATORS ======================
def build_superoperator(model: LindbladModel) -> np.ndarray:
    """d^2 x d^2 matrix of L under column stacking."""
    d = model.dim
    eye = np.eye(d, dtype=complex)
    h = model.hamiltonian
    sup = -1j * (np.kron(eye, h) - np.kron(h.T, eye))
    for j in model.jumps:
        jdj = j.conj().T @ j
        sup += np.kron(j.conj(), j) - 0.5 * (np.kron(eye, jdj) + np.kron(jdj.T, eye))
    return sup


def build_adjoint_superoperator(model: LindbladModel) -> np.ndarray:
    """Matrix of the Heisenberg-picture generator L^dagger(O) = i[H,O] + sum J^dag O J - {J^dag J, O}/2."""
    d = model.dim
    eye = np.eye(d, dtype=complex)
    h = model.hamiltonian
    sup = 1j * (np.kron(eye, h) - np.kron(h.T, eye))
    for j in model.jumps:
        jdj = j.conj().T @ j
        sup += np.kron(j.T, j.conj().T) - 0.5 * (np.kron(eye, jdj) + np.kron(jdj.T, eye))
    return sup


def apply_lindbladian(model: LindbladModel, x: np.ndarray) -> np.ndarray:
    """Evaluate L(X) directly; ``x`` may be a stack (..., d, d)."""
    h = model.hamiltonian
    out = -1j * (h @ x - x @ h)
    for j in model.jumps:
        jd = j.conj().T
        jdj = jd @ j
        out += j @ x @ jd - 0.5 * (jdj @ x + x @ jdj)
    return out


def apply_adjoint(model: LindbladModel, x: np.ndarray) -> np.ndarray:
    h = model.hamiltonian
    out = 1j * (h @ x - x @ h)
    for j in model.jumps:
        jd = j.conj().T
        jdj = jd @ j
        out += jd @ x @ j - 0.5 * (jdj @ x + x @ jdj)
    return out


# ====================== DECOMPOSITION ======================
@dataclass(frozen=True)
class SpectralDecomposition:
    """Biorthonormal eigenmodes, tr(L_j^dag R_k) = delta_jk, sorted slowest first.

    Arrays are 0-based internally: ``eigenvalues[0]`` is the steady state.
    A partial decomposition (``complete=False``) only holds the slowest modes.
    """
    d: int
    eigenvalues: np.ndarray
    right_modes: np.ndarray
    left_modes: np.ndarray
    condition_numbers: np.ndarray
    stationary_state: np.ndarray
    normalization: Normalization
    cluster_ids: np.ndarray
    complete: bool = True
    label: str = "model"

    @property
    def n_modes(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def gap(self) -> float:
        """|Re lambda_2|."""
        return abs(float(self.eigenvalues[1].real)) if self.n_modes > 1 else 0.0

    @cached_property
    def left_norms(self) -> np.ndarray:
        return hs_norms(self.left_modes)

    @cached_property
    def right_norms(self) -> np.ndarray:
        return hs_norms(self.right_modes)

    @cached_property
    def left_traces(self) -> np.ndarray:
        """tr(L_k^dagger) for every mode."""
        return np.conj(np.trace(self.left_modes, axis1=1, axis2=2))

    def index(self, k: int) -> int:
        """0-based array index of 1-based mode ``k``."""
        if not 1 <= k <= self.n_modes:
            raise ModeIndexError(f"Mode {k} out of range 1..{self.n_modes}")
        return k - 1

    def eigenvalue(self, k: int) -> complex:
        return complex(self.eigenvalues[self.index(k)])

    def right(self, k: int) -> np.ndarray:
        return self.right_modes[self.index(k)]

    def left(self, k: int) -> np.ndarray:
        return self.left_modes[self.index(k)]

    def condition_number(self, k: int) -> float:
        return float(self.condition_numbers[self.index(k)])

    def cluster_members(self, k: int) -> np.ndarray:
        """0-based indices of all modes sharing mode k's eigenvalue cluster."""
        i = self.index(k)
        return np.flatnonzero(self.cluster_ids == self.cluster_ids[i])

    def cluster_size(self, k: int) -> int:
        return int(self.cluster_members(k).size)


def component_weights(n: int) -> np.ndarray:
    # generic, fixed weights so that joint eigenvalue tuples map to distinct sums
    return np.sqrt(2.0 + np.arange(n))


def _resolve_cluster(model: LindbladModel, right: np.ndarray, left: np.ndarray):
    """Rotate a degenerate cluster onto the joint eigenbasis of the model's components."""
    d = model.dim
    right_ops = unvec_columns(right, d)
    weights = component_weights(len(model.components))
    applied = sum(w * apply_lindbladian(c, right_ops) for w, c in zip(weights, model.components))
    applied_vecs = applied.transpose(0, 2, 1).reshape(right.shape[1], -1).T
    restricted = left.conj().T @ applied_vecs
    mu, rotation = sla.eig(restricted, check_finite=False)
    order = np.lexsort((mu.imag, -mu.real))
    rotation = rotation[:, order]
    new_right = right @ rotation
    new_left = left @ sla.inv(rotation, check_finite=False).conj().T
    return new_right, new_left


def _orthonormalize_cluster(right: np.ndarray, left: np.ndarray):
    """Orthonormal right basis for a cluster; the left block follows by the inverse factor."""
    q, r = sla.qr(right, mode="economic", check_finite=False)
    return q, left @ r.conj().T


def normalize_modes(right: np.ndarray, left: np.ndarray, normalization: Normalization):
    """Fix norms and phases of modes k >= 2 (stack index >= 1) and the steady pair.

    R_k gets unit trace or HS norm and a real positive largest entry (first in
    row-major order on ties); L_k absorbs the inverse factor.
    """
    right = right.copy()
    left = left.copy()

    trace = np.trace(right[0])
    right[0] = hermitian_part(right[0] / trace)
    left[0] = left[0] * np.conj(trace)

    if right.shape[0] > 1:
        decaying = right[1:]
        norms = trace_norms(decaying) if normalization == Normalization.TRACE else hs_norms(decaying)
        decaying = decaying / norms[:, None, None]
        flat = decaying.reshape(decaying.shape[0], -1)
        magnitude = np.abs(flat)
        peak = magnitude.max(axis=1, keepdims=True)
        first = np.argmax(magnitude >= peak * (1.0 - 1e-9), axis=1)
        lead = flat[np.arange(flat.shape[0]), first]
        phase = np.conj(lead / np.abs(lead))
        right[1:] = decaying * phase[:, None, None]
        left[1:] = left[1:] * norms[:, None, None] * phase[:, None, None]
    return right, left


def order_modes(values: np.ndarray, steady: int, resolution: float) -> np.ndarray:
    rest = np.array([i for i in range(values.size) if i != steady], dtype=int)
    quantized = np.round(-values[rest].real / resolution)
    order = rest[np.lexsort((values[rest].imag, quantized))]
    return np.concatenate([[steady], order]).astype(int)


def _find_steady(values: np.ndarray, tol: float) -> int:
    shift = values.real.max()
    candidates = np.flatnonzero(np.abs(values - shift) < tol)
    if abs(shift) > tol or candidates.size == 0:
        raise DegenerateSteadyState(f"No eigenvalue within {tol:.0e} of zero (max Re = {shift:.3e})")
    if candidates.size > 1:
        raise DegenerateSteadyState(
            f"{candidates.size} eigenvalues within {tol:.0e} of zero: the steady state is not unique"
        )
    return int(candidates[0])


def _assemble(values, right_vecs, left_vecs, d, normalization, clusters, complete, label):
    right = unvec_columns(right_vecs, d)
    left = unvec_columns(left_vecs, d)
    right, left = normalize_modes(right, left, normalization)
    cluster_ids = np.empty(values.size, dtype=int)
    for label_id, members in enumerate(clusters):
        cluster_ids[members] = label_id
    stationary = right[0].copy()
    if np.linalg.eigvalsh(stationary)[0] < -1e-8:
        logger.warning(f"Steady state of {label} has a negative eigenvalue beyond 1e-8")
    return SpectralDecomposition(
        d=d,
        eigenvalues=values,
        right_modes=right,
        left_modes=left,
        condition_numbers=hs_norms(left) * hs_norms(right),
        stationary_state=stationary,
        normalization=Normalization(normalization),
        cluster_ids=cluster_ids,
        complete=complete,
        label=label
    )


def spectral_decompose(
    model: LindbladModel,
    normalization: Normalization = Normalization.TRACE,
    max_superdim: int = config.DENSE_MAX_SUPERDIM
) -> SpectralDecomposition:
    """Dense biorthonormal decomposition of the model's generator."""
    if model.superdim > max_superdim:
        raise DenseLimitExceeded(
            f"d^2 = {model.superdim} exceeds the dense limit {max_superdim}; "
            f"use the iterative slowest-mode path"
        )
    start = time.time()
    sup = build_superoperator(model)
    system = eig_general(sup)
    values = system.values
    scale = max(spectral_norm(sup), 1.0)

    steady = _find_steady(values, config.STEADY_STATE_TOL)
    order = order_modes(values, steady, config.EIG_CLUSTER_TOL * scale)
    position = np.empty_like(order)
    position[order] = np.arange(order.size)

    values = values[order].copy()
    right = system.right_vectors[:, order]
    left = system.left_vectors[:, order]
    clusters = tuple(np.sort(position[members]) for members in system.clusters)

    resolved = 0
    for members in clusters:
        if members.size < 2:
            continue
        if model.components:
            right[:, members], left[:, members] = _resolve_cluster(model, right[:, members], left[:, members])
        else:
            right[:, members], left[:, members] = _orthonormalize_cluster(right[:, members], left[:, members])
        values[members] = np.einsum("ij,ij->j", left[:, members].conj(), sup @ right[:, members])
        resolved += 1
    if resolved:
        logger.debug(
            f"Resolved {resolved} degenerate clusters | "
            f"{'components: ' + str(len(model.components)) if model.components else 'orthonormalized'}"
        )

    decomp = _assemble(values, right, left, model.dim, normalization, clusters, True, model.label)
    logger.debug(
        f"Decomposed {model.label} | d: {model.dim} | modes: {decomp.n_modes} | "
        f"gap: {decomp.gap:.6g} | max O_k: {decomp.condition_numbers.max():.4g} | "
        f"time: {time.time() - start:.2f}s"
    )
    return decomp


# ====================== ITERATIVE PATH ======================
def _arnoldi(op, k, sigma, solve, tol):
    if sigma is None:
        return eigs(op, k=k, which="LR", tol=tol)
    return eigs(op, k=k, sigma=sigma, OPinv=solve(op, sigma), tol=tol)


def _reach(values, sigma):
    return -values.real if sigma is None else np.abs(values - sigma)


def _pair_clusters(values, right, adj_values, left, n_modes, tol, sigma=None):
    """Ordered (values, right, left, clusters) over the whole clusters covering the first n_modes.

    Returns None when either ARPACK set stops inside the tier of the last kept
    cluster (a tie may hide further copies), the forward and adjoint
    multiplicities disagree, or a cluster Gram block is singular; the caller
    then asks ARPACK for more.
    """
    steady = _find_steady(values, config.STEADY_STATE_TOL)
    order = order_modes(values, steady, tol)
    values, right = values[order], right[:, order]
    clusters = sorted(cluster_eigenvalues(values, tol), key=lambda members: members.min())

    kept, count = [], 0
    for members in clusters:
        members = np.sort(members)
        if count >= n_modes:
            break
        kept.append(members)
        count += members.size

    adjoint = np.conj(adj_values)
    frontier = _reach(values[np.concatenate(kept)], sigma).max() + tol
    if _reach(values, sigma).max() <= frontier or _reach(adjoint, sigma).max() <= frontier:
        return None

    left_blocks = []
    for members in kept:
        center = values[members].mean()
        partners = np.flatnonzero(np.abs(adjoint - center) < tol * max(members.size, 1))
        if partners.size != members.size:
            return None
        gram = left[:, partners].conj().T @ right[:, members]
        if np.linalg.cond(gram) > 1.0 / config.EIG_DEFECT_TOL:
            return None
        left_blocks.append(left[:, partners] @ sla.inv(gram, check_finite=False).conj().T)

    index = np.concatenate(kept)
    return values[index].copy(), right[:, index], np.concatenate(left_blocks, axis=1), kept


def slowest_modes(
    model: LindbladModel,
    n_modes: int = 2,
    normalization: Normalization = Normalization.TRACE,
    sigma: float | None = None,
    tol: float = config.ARPACK_TOL
) -> SpectralDecomposition:
    """Rightmost eigenpairs from ARPACK on matrix-free operators.

    The result holds whole degenerate clusters, so it can carry more than
    ``n_modes`` modes; ARPACK is rerun with a larger subspace until the
    cluster of mode ``n_modes`` is complete on both sides. With ``sigma`` set,
    shift-invert is used and each inverse application is a GMRES solve.
    Returns a partial decomposition.
    """
    d = model.dim
    n = model.superdim
    if n_modes < 2 or n_modes > n - 2:
        raise ValueError(f"n_modes must be in [2, {n - 2}], got {n_modes}")

    forward = LinearOperator(
        (n, n), matvec=lambda v: vec(apply_lindbladian(model, unvec(v, d))), dtype=complex
    )
    backward = LinearOperator(
        (n, n), matvec=lambda v: vec(apply_adjoint(model, unvec(v, d))), dtype=complex
    )

    def _solve(op, shift):
        shifted = LinearOperator((n, n), matvec=lambda v: op.matvec(v) - shift * v, dtype=complex)

        def _inverse(b):
            x, info = gmres(shifted, b, rtol=tol)
            if info != 0:
                raise NumericalError(f"GMRES did not converge in shift-invert (info={info})")
            return x
        return LinearOperator((n, n), matvec=_inverse, dtype=complex)

    start = time.time()
    k = min(2 * n_modes + 2, n - 2)
    while True:
        values, right = _arnoldi(forward, k, sigma, _solve, tol)
        adj_values, left = _arnoldi(backward, k, sigma, _solve, tol)
        right = right / np.linalg.norm(right, axis=0)
        scale = max(float(np.abs(values).max()), 1.0)
        paired = _pair_clusters(
            values, right, adj_values, left, n_modes, config.EIG_CLUSTER_TOL * scale, sigma
        )
        if paired is not None:
            break
        if k == n - 2:
            raise NumericalError(
                f"ARPACK could not resolve whole clusters for {n_modes} modes with k = {k}; "
                f"use the dense decomposition"
            )
        logger.debug(f"Cluster of mode {n_modes} incomplete at k = {k}; retrying")
        k = min(2 * k, n - 2)

    values, right, left, kept = paired
    offset = 0
    clusters = []
    for members in kept:
        block = np.arange(offset, offset + members.size)
        offset += members.size
        clusters.append(block)
        if block.size < 2:
            continue
        if model.components:
            right[:, block], left[:, block] = _resolve_cluster(model, right[:, block], left[:, block])
        else:
            right[:, block], left[:, block] = _orthonormalize_cluster(right[:, block], left[:, block])
        applied = apply_lindbladian(model, unvec_columns(right[:, block], d))
        applied_vecs = applied.transpose(0, 2, 1).reshape(block.size, -1).T
        values[block] = np.einsum("ij,ij->j", left[:, block].conj(), applied_vecs)

    decomp = _assemble(values, right, left, d, normalization, tuple(clusters), False, model.label)
    logger.info(
        f"Iterative slowest modes | {model.label} | d: {d} | modes: {decomp.n_modes} | "
        f"arnoldi k: {k} | gap: {decomp.gap:.6g} | time: {time.time() - start:.2f}s"
    )
    return decomp


# ====================== DYNAMICS ======================
def mode_coefficients(decomp: SpectralDecomposition, rho: np.ndarray) -> np.ndarray:
    """All overlaps a_k = tr(L_k^dagger rho) as a 0-based array."""
    return np.einsum("kij,ij->k", decomp.left_modes.conj(), np.asarray(rho, dtype=complex))


def evolve_deviation(decomp: SpectralDecomposition, coefficients: np.ndarray, times: Sequence[float]) -> np.ndarray:
    """rho(t) - rho_ss for every time, as a (T, d, d) stack."""
    weights = np.exp(np.outer(np.asarray(times, dtype=float), decomp.eigenvalues[1:])) * coefficients[1:]
    return hermitian_part(np.tensordot(weights, decomp.right_modes[1:], axes=1))


def propagate(decomp: SpectralDecomposition, rho0: np.ndarray, t: float) -> np.ndarray:
    """rho(t) = rho_ss + sum_{k>=2} exp(lambda_k t) a_k R_k."""
    if not decomp.complete:
        raise ValueError("propagate needs a complete decomposition")
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    coefficients = mode_coefficients(decomp, rho0)
    deviation = evolve_deviation(decomp, coefficients, [t])[0]
    return decomp.stationary_state * coefficients[0] + deviation


# ====================== PERTURBATION ======================
def _as_dense_perturbation(decomp: SpectralDecomposition, delta) -> np.ndarray:
    delta = np.asarray(delta, dtype=complex)
    if delta.shape != (decomp.d ** 2, decomp.d ** 2):
        raise ValueError(f"Perturbation must be {decomp.d ** 2}x{decomp.d ** 2}, got {delta.shape}")
    return delta


def perturb_eigenvalue(decomp: SpectralDecomposition, delta, k: int) -> complex:
    """First-order shift tr(L_k^dagger dL(R_k)) of a non-degenerate eigenvalue."""
    delta = _as_dense_perturbation(decomp, delta)
    if decomp.cluster_size(k) > 1:
        raise DegenerateMode(f"Mode {k} belongs to a cluster of size {decomp.cluster_size(k)}")
    return complex(np.vdot(vec(decomp.left(k)), delta @ vec(decomp.right(k))))


def perturb_cluster(decomp: SpectralDecomposition, delta, k: int) -> np.ndarray:
    """First-order shifts of every eigenvalue in mode k's cluster.

    Eigenvalues of the cluster-restricted perturbation W^dag dL V, sorted like modes.
    """
    delta = _as_dense_perturbation(decomp, delta)
    members = decomp.cluster_members(k)
    right = np.stack([vec(decomp.right_modes[i]) for i in members], axis=1)
    left = np.stack([vec(decomp.left_modes[i]) for i in members], axis=1)
    shifts = sla.eigvals(left.conj().T @ delta @ right, check_finite=False)
    return shifts[np.lexsort((shifts.imag, -shifts.real))]


def pairwise_overlap_matrix(decomp: SpectralDecomposition) -> np.ndarray:
    """tr(L_j^dagger R_k) for all j, k; identity for a valid decomposition."""
    left = decomp.left_modes.reshape(decomp.n_modes, -1)
    right = decomp.right_modes.reshape(decomp.n_modes, -1)
    return left.conj() @ right.T


__all__ = [
    "LindbladModel",
    "Normalization",
    "SpectralDecomposition",
    "apply_adjoint",
    "apply_lindbladian",
    "build_adjoint_superoperator",
    "build_superoperator",
    "evolve_deviation",
    "mode_coefficients",
    "pairwise_overlap_matrix",
    "perturb_cluster",
    "perturb_eigenvalue",
    "propagate",
    "slowest_modes",
    "spectral_decompose",
]
