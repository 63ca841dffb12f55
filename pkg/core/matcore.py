"""Dense complex linear algebra shared by the rest of the package.

Matrices are plain ``numpy`` arrays of dtype complex128. Superoperators act
on column-stacked vectors: ``vec(X) = X.reshape(-1, order="F")``.
"""

import logging
from dataclasses import dataclass
from functools import reduce
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.linalg.interpolative import estimate_spectral_norm
from scipy.optimize import minimize_scalar
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from config import config
from .errors import NonDiagonalizable

logger = logging.getLogger(__name__)


class SchattenNorms(NamedTuple):
    trace_norm: float
    hs_norm: float
    op_norm: float


@dataclass(frozen=True)
class EigenSystem:
    """Eigenpairs of a square matrix with biorthonormal left vectors.

    ``left_vectors[:, k].conj() @ right_vectors[:, j] == delta_kj``; the left
    vectors are eigenvectors of ``m^dagger`` for ``values.conj()``.
    ``clusters`` lists index arrays of eigenvalues equal within tolerance.
    """
    values: np.ndarray
    right_vectors: np.ndarray
    left_vectors: np.ndarray
    clusters: tuple

    def cluster_of(self, index: int) -> np.ndarray:
        for members in self.clusters:
            if index in members:
                return members
        raise IndexError(f"Eigenvalue index {index} not in any cluster")


# ====================== BASIC OPERATIONS ======================
def as_cmatrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2:
        raise ValueError(f"Expected a 2-D matrix, got shape {m.shape}")
    return m


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def kron(a, b) -> np.ndarray:
    """Kronecker product; the row/column dimensions multiply."""
    return np.kron(as_cmatrix(a), as_cmatrix(b))


def kron_all(factors: Sequence) -> np.ndarray:
    return reduce(kron, factors)


def vec(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=complex).reshape(-1, order="F")


def unvec(v: np.ndarray, d: int) -> np.ndarray:
    return np.asarray(v, dtype=complex).reshape((d, d), order="F")


def unvec_columns(vectors: np.ndarray, d: int) -> np.ndarray:
    """Columns of a (d*d, n) array as an (n, d, d) stack of matrices."""
    return np.ascontiguousarray(
        np.asarray(vectors).T.reshape(-1, d, d).transpose(0, 2, 1)
    )


def hermitian_part(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + dagger(a))


def is_hermitian(a: np.ndarray, tol: float = config.HERMITICITY_TOL) -> bool:
    return bool(np.max(np.abs(a - dagger(a)), initial=0.0) <= tol)


def is_density_matrix(rho: np.ndarray, tol: float = config.DENSITY_TOL) -> bool:
    """Hermitian, positive semidefinite and unit trace within ``tol``."""
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        return False
    if not is_hermitian(rho, tol):
        return False
    if abs(np.trace(rho) - 1.0) > tol:
        return False
    return bool(np.linalg.eigvalsh(hermitian_part(rho))[0] >= -tol)


def partial_trace(x, dim_a: int, dim_b: int, keep: str = "A") -> np.ndarray:
    """Trace out one factor of an operator on C^dim_a (x) C^dim_b."""
    x = as_cmatrix(x)
    if x.shape != (dim_a * dim_b, dim_a * dim_b):
        raise ValueError(
            f"Dimension mismatch: operator {x.shape} vs factors {dim_a}x{dim_b}"
        )
    blocks = x.reshape(dim_a, dim_b, dim_a, dim_b)
    keep = keep.upper()
    if keep == "A":
        return np.einsum("ijkj->ik", blocks)
    if keep == "B":
        return np.einsum("ijil->jl", blocks)
    raise ValueError(f"keep must be 'A' or 'B', got {keep!r}")


# ====================== NORMS ======================
def schatten_norms(a) -> SchattenNorms:
    s = sla.svdvals(as_cmatrix(a), check_finite=False)
    return SchattenNorms(
        trace_norm=float(np.sum(s)),
        hs_norm=float(np.sqrt(np.sum(s ** 2))),
        op_norm=float(s[0]) if s.size else 0.0
    )


def trace_norms(stack: np.ndarray) -> np.ndarray:
    """Trace norms of an (n, d, d) stack via batched SVD."""
    return np.linalg.svd(stack, compute_uv=False).sum(axis=-1)


def hs_norms(stack: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(stack) ** 2, axis=(-2, -1)))


def spectral_norm(m: np.ndarray) -> float:
    """Exact operator norm for moderate sizes, randomized estimate above."""
    if max(m.shape) <= config.EXACT_NORM_MAX_DIM:
        return float(np.linalg.norm(m, 2)) if m.size else 0.0
    return float(estimate_spectral_norm(np.asarray(m, dtype=complex), its=30))


# ====================== EIGENDECOMPOSITION ======================
def cluster_eigenvalues(values: np.ndarray, tol: float) -> tuple:
    """Group eigenvalues whose chained pairwise distance is below ``tol``."""
    n = values.size
    if n == 0:
        return ()
    points = np.column_stack([values.real, values.imag])
    pairs = cKDTree(points).query_pairs(r=tol, output_type="ndarray")
    graph = coo_matrix(
        (np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])) if len(pairs)
        else (np.zeros(0), (np.zeros(0, dtype=int), np.zeros(0, dtype=int))),
        shape=(n, n)
    )
    _, labels = connected_components(graph, directed=False)
    groups = {}
    for index, label in enumerate(labels):
        groups.setdefault(label, []).append(index)
    return tuple(np.array(members) for members in groups.values())


def eig_general(
    m,
    cluster_tol: float = config.EIG_CLUSTER_TOL,
    defect_tol: float = config.EIG_DEFECT_TOL
) -> EigenSystem:
    """Right eigenvectors from LAPACK, left ones from inverting the right basis.

    Raises NonDiagonalizable when the right basis is singular or an
    eigenvalue's left/right overlap falls below ``defect_tol``.
    """
    m = as_cmatrix(m)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"eig_general needs a square matrix, got {m.shape}")

    values, right = sla.eig(m, check_finite=False)
    right = right / np.linalg.norm(right, axis=0)
    try:
        left = sla.inv(right, check_finite=False).conj().T
    except (np.linalg.LinAlgError, sla.LinAlgError) as e:
        logger.warning(f"Right eigenbasis is singular | n: {m.shape[0]} | {str(e)}")
        raise NonDiagonalizable("Right eigenvector matrix is singular") from e

    overlaps = 1.0 / np.linalg.norm(left, axis=0)
    worst = int(np.argmin(overlaps)) if overlaps.size else 0
    if overlaps.size and overlaps[worst] < defect_tol:
        raise NonDiagonalizable(
            f"Eigenvalue {values[worst]:.6g} has left/right overlap "
            f"{overlaps[worst]:.2e} < {defect_tol:.0e} (Jordan block)"
        )

    scale = max(spectral_norm(m), np.finfo(float).tiny)
    clusters = cluster_eigenvalues(values, cluster_tol * scale)
    logger.debug(
        f"Eigendecomposition | n: {m.shape[0]} | clusters: {len(clusters)} | "
        f"min overlap: {overlaps.min() if overlaps.size else 1.0:.2e}"
    )
    return EigenSystem(values=values, right_vectors=right, left_vectors=left, clusters=clusters)


# ====================== NUMERICAL RADIUS ======================
def _rotated_top_eigenvalue(a: np.ndarray, theta: float) -> float:
    rotated = 0.5 * (np.exp(-1j * theta) * a + np.exp(1j * theta) * a.conj().T)
    return float(np.linalg.eigvalsh(rotated)[-1])


def numerical_radius(
    a,
    theta_grid: int = config.NUMERICAL_RADIUS_GRID,
    refine_tol: float = config.NUMERICAL_RADIUS_TOL
) -> float:
    """max over unit-trace states of |tr(a^dagger rho)|, via the rotated Hermitian part."""
    a = as_cmatrix(a)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"numerical_radius needs a square matrix, got {a.shape}")
    if theta_grid < 64:
        raise ValueError(f"theta_grid must be >= 64, got {theta_grid}")

    thetas = 2.0 * np.pi * np.arange(theta_grid) / theta_grid
    scan = np.array([_rotated_top_eigenvalue(a, t) for t in thetas])
    best = int(np.argmax(scan))
    step = 2.0 * np.pi / theta_grid

    refined = minimize_scalar(
        lambda t: -_rotated_top_eigenvalue(a, t),
        bounds=(thetas[best] - step, thetas[best] + step),
        method="bounded",
        options={"xatol": refine_tol}
    )
    return max(float(scan[best]), float(-refined.fun))
