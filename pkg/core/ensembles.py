"""Random initial-state ensembles with counter-based, schedule-independent seeding.

Every draw comes from a Philox generator keyed by ``SeedSequence(seed,
spawn_key=(stream, index))``. Monte-Carlo batches use stream ``c`` for chunk
``c`` of ``config.MC_CHUNK_SIZE`` samples, so the n-th sample is the same no
matter how chunks are spread over workers.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from config import config
from .errors import InvalidEnsemble
from .matcore import as_cmatrix, dagger, hermitian_part, is_density_matrix

logger = logging.getLogger(__name__)


class EnsembleKind(str, Enum):
    TWO_DESIGN = "TwoDesign"
    HILBERT_SCHMIDT = "HilbertSchmidt"
    INDUCED = "Induced"
    CONSTRAINED_PURE = "ConstrainedPure"


@dataclass(frozen=True, eq=False)
class EnsembleSpec:
    """Tagged initial-state ensemble on C^dim.

    TwoDesign: ``reference`` rotated by Haar unitaries.
    HilbertSchmidt / Induced: normalized Ginibre ``G G^dag`` with G of shape
    (dim, env_dim).
    ConstrainedPure: Haar pure state on range(``projector``) inside
    C^dim (x) C^dim_e, reduced to the system factor.
    """
    kind: EnsembleKind
    dim: int
    reference: np.ndarray | None = None
    env_dim: int | None = None
    projector: np.ndarray | None = None
    dim_e: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", EnsembleKind(self.kind))
        if self.dim < 1:
            raise InvalidEnsemble(f"Ensemble dimension must be >= 1, got {self.dim}")

        if self.kind == EnsembleKind.TWO_DESIGN:
            if self.reference is None:
                raise InvalidEnsemble("TwoDesign needs a reference state")
            ref = as_cmatrix(self.reference)
            if ref.shape != (self.dim, self.dim) or not is_density_matrix(ref, config.DENSITY_TOL):
                raise InvalidEnsemble("Reference state is not a valid density matrix of the ensemble dimension")
            object.__setattr__(self, "reference", ref)

        elif self.kind == EnsembleKind.HILBERT_SCHMIDT:
            object.__setattr__(self, "env_dim", self.dim)

        elif self.kind == EnsembleKind.INDUCED:
            if self.env_dim is None or self.env_dim < 1:
                raise InvalidEnsemble(f"Induced ensemble needs env_dim >= 1, got {self.env_dim}")

        elif self.kind == EnsembleKind.CONSTRAINED_PURE:
            if self.projector is None or self.dim_e < 1:
                raise InvalidEnsemble("ConstrainedPure needs a projector and dim_e >= 1")
            p = as_cmatrix(self.projector)
            total = self.dim * self.dim_e
            if p.shape != (total, total):
                raise InvalidEnsemble(f"Projector must be {total}x{total}, got {p.shape}")
            tol = config.PROJECTOR_TOL
            if np.max(np.abs(p - dagger(p))) > tol or np.max(np.abs(p @ p - p)) > tol:
                raise InvalidEnsemble("Projector is not an orthogonal projector (P^2 = P = P^dag)")
            if int(round(np.trace(p).real)) < 1:
                raise InvalidEnsemble("Projector has rank zero")
            object.__setattr__(self, "projector", p)

    # -------- constructors --------
    @classmethod
    def two_design(cls, reference) -> "EnsembleSpec":
        ref = as_cmatrix(reference)
        return cls(EnsembleKind.TWO_DESIGN, ref.shape[0], reference=ref)

    @classmethod
    def hilbert_schmidt(cls, dim: int) -> "EnsembleSpec":
        return cls(EnsembleKind.HILBERT_SCHMIDT, dim)

    @classmethod
    def induced(cls, dim: int, env_dim: int) -> "EnsembleSpec":
        return cls(EnsembleKind.INDUCED, dim, env_dim=env_dim)

    @classmethod
    def constrained_pure(cls, projector, dim: int, dim_e: int = 1) -> "EnsembleSpec":
        return cls(EnsembleKind.CONSTRAINED_PURE, dim, projector=projector, dim_e=dim_e)

    # -------- derived quantities --------
    @property
    def rank(self) -> int:
        """d_R = round(tr P_R); only meaningful for ConstrainedPure."""
        if self.projector is None:
            return self.dim
        return int(round(np.trace(self.projector).real))

    @cached_property
    def subspace_basis(self) -> np.ndarray:
        """Orthonormal columns spanning range(P_R), from pivoted QR of the projector."""
        q, _, _ = sla.qr(self.projector, pivoting=True)
        return q[:, :self.rank]

    @cached_property
    def reference_purity(self) -> float:
        return float(np.real(np.trace(self.reference @ self.reference)))

    @property
    def is_point_mass(self) -> bool:
        """True for a 2-design over the maximally mixed state, which every unitary fixes."""
        if self.kind != EnsembleKind.TWO_DESIGN:
            return False
        return bool(np.allclose(self.reference, np.eye(self.dim) / self.dim, rtol=0.0, atol=config.DENSITY_TOL))

    @property
    def label(self) -> str:
        if self.kind == EnsembleKind.INDUCED:
            return f"Induced({self.env_dim})"
        if self.kind == EnsembleKind.CONSTRAINED_PURE:
            return f"ConstrainedPure(d_R={self.rank},d_E={self.dim_e})"
        return self.kind.value


# ====================== RNG ======================
def make_rng(seed: int, stream: int = 0, index: int = 0) -> np.random.Generator:
    sequence = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(index)))
    return np.random.Generator(np.random.Philox(sequence))


def derive_seed(seed: int, *key: int) -> int:
    """64-bit child seed for a sub-task (ensemble, sweep point, instance)."""
    words = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)).generate_state(2, dtype=np.uint32)
    return int(words[0]) | (int(words[1]) << 32)


def _ginibre(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


# ====================== SAMPLERS ======================
def haar_unitaries(rng: np.random.Generator, d: int, count: int) -> np.ndarray:
    """(count, d, d) Haar unitaries: Ginibre QR with the R-diagonal phases removed."""
    q, r = np.linalg.qr(_ginibre(rng, (count, d, d)))
    diag = np.diagonal(r, axis1=1, axis2=2)
    phases = diag / np.abs(diag)
    return q * phases[:, None, :]


def sample_haar_unitary(d: int, seed: int) -> np.ndarray:
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    return haar_unitaries(make_rng(seed), d, 1)[0]


def draw_states(spec: EnsembleSpec, rng: np.random.Generator, count: int) -> np.ndarray:
    """``count`` density matrices from ``spec`` as a (count, d, d) stack."""
    d = spec.dim
    if spec.kind == EnsembleKind.TWO_DESIGN:
        if spec.is_point_mass:
            return np.broadcast_to(spec.reference, (count, d, d)).copy()
        u = haar_unitaries(rng, d, count)
        states = u @ spec.reference @ dagger(u)

    elif spec.kind in (EnsembleKind.HILBERT_SCHMIDT, EnsembleKind.INDUCED):
        g = _ginibre(rng, (count, d, spec.env_dim))
        states = g @ dagger(g)
        states /= np.trace(states, axis1=1, axis2=2).real[:, None, None]

    else:
        basis = spec.subspace_basis
        psi = _ginibre(rng, (count, spec.rank)) @ basis.T
        psi /= np.linalg.norm(psi, axis=1, keepdims=True)
        blocks = psi.reshape(count, d, spec.dim_e)
        states = blocks @ dagger(blocks)

    return hermitian_part(states)


def sample_state(spec: EnsembleSpec, seed: int) -> np.ndarray:
    return draw_states(spec, make_rng(seed), 1)[0]


def chunk_sizes(n: int, chunk: int = config.MC_CHUNK_SIZE) -> list:
    full, rest = divmod(n, chunk)
    return [chunk] * full + ([rest] if rest else [])


def sample_chunk(spec: EnsembleSpec, seed: int, chunk_index: int, size: int) -> np.ndarray:
    """Samples of chunk ``chunk_index``; the stream depends only on (seed, chunk_index)."""
    return draw_states(spec, make_rng(seed, stream=chunk_index), size)


__all__ = [
    "EnsembleKind",
    "EnsembleSpec",
    "chunk_sizes",
    "derive_seed",
    "draw_states",
    "haar_unitaries",
    "make_rng",
    "sample_chunk",
    "sample_haar_unitary",
    "sample_state",
]
