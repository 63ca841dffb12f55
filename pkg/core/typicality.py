"""Overlap statistics, concentration diagnostics and relaxation / mixing times."""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import bisect
from scipy.stats import linregress

from config import config
from .ensembles import EnsembleKind, EnsembleSpec, chunk_sizes, sample_chunk
from .errors import DegenerateFit, EmptyTypicalSet, GapClosed, InvalidEnsemble, NotReached
from .lindblad import SpectralDecomposition, evolve_deviation, mode_coefficients
from .matcore import numerical_radius, trace_norms

logger = logging.getLogger(__name__)


class Regime(str, Enum):
    CONCENTRATING = "Concentrating"
    MARGINAL = "Marginal"
    DIVERGING = "Diverging"


@dataclass(frozen=True, eq=False)
class OverlapStatistics:
    mode: int
    mean: complex
    variance: float
    mc_mean: complex
    mc_variance: float
    mc_samples: int
    mc_standard_error: float
    mc_variance_standard_error: float
    ensemble: EnsembleSpec

    @property
    def mean_z_score(self) -> float:
        if self.mc_standard_error == 0.0:
            return 0.0 if abs(self.mc_mean - self.mean) <= config.ZERO_MEAN_TOL else math.inf
        return abs(self.mc_mean - self.mean) / self.mc_standard_error

    @property
    def variance_z_score(self) -> float:
        if self.mc_variance_standard_error == 0.0:
            return 0.0 if abs(self.mc_variance - self.variance) <= config.ZERO_MEAN_TOL else math.inf
        return abs(self.mc_variance - self.variance) / self.mc_variance_standard_error


class RelaxationTime(NamedTuple):
    time: float
    mode: int


class TSMEDiagnostic(NamedTuple):
    tsme: bool
    mean_a2: float
    ratio_ok_modes: list


class ScalingFit(NamedTuple):
    exponent: float
    intercept: float
    r_squared: float
    regime: Regime


@dataclass(frozen=True)
class MixingTimeEstimate:
    typical: float
    acceptance_fraction: float
    worst_case: float
    spread: tuple
    modes: tuple
    n_samples: int
    deltas: tuple = ()


@dataclass
class TypicalityReport:
    """Per-size variances of one mode across ensembles plus the fitted scaling."""
    mode: int
    sizes: list = field(default_factory=list)
    variances: dict = field(default_factory=dict)
    mc_variances: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    tsme: dict = field(default_factory=dict)
    typical_relaxation_time: dict = field(default_factory=dict)
    typical_mixing_time: dict = field(default_factory=dict)
    worst_case_overlap: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "sizes": [list(s) for s in self.sizes],
            "variances": self.variances,
            "mc_variances": self.mc_variances,
            "fits": {name: fit._asdict() | {"regime": fit.regime.value} for name, fit in self.fits.items()},
            "tsme": {str(n): diag._asdict() for n, diag in self.tsme.items()},
            "typical_relaxation_time": {str(n): rt._asdict() for n, rt in self.typical_relaxation_time.items()},
            "typical_mixing_time": {str(n): t for n, t in self.typical_mixing_time.items()},
            "worst_case_overlap": {str(n): w for n, w in self.worst_case_overlap.items()},
        }


# ====================== OVERLAPS AND CLOSED FORMS ======================
def overlap(decomp: SpectralDecomposition, rho: np.ndarray, k: int) -> complex:
    """a_k = tr(L_k^dagger rho)."""
    return complex(np.vdot(decomp.left(k), rho))


def _check_dimension(decomp: SpectralDecomposition, spec: EnsembleSpec):
    if spec.dim != decomp.d:
        raise InvalidEnsemble(f"Ensemble dimension {spec.dim} does not match the model dimension {decomp.d}")


def _centered_norm(decomp: SpectralDecomposition, k: int) -> float:
    """||L_k||_2^2 - |tr L_k|^2 / d."""
    i = decomp.index(k)
    return float(decomp.left_norms[i] ** 2 - abs(decomp.left_traces[i]) ** 2 / decomp.d)


def closed_form_moments(decomp: SpectralDecomposition, spec: EnsembleSpec, k: int) -> tuple:
    """(mean, variance) of a_k over the ensemble, variance clipped at 0."""
    _check_dimension(decomp, spec)
    d = decomp.d
    i = decomp.index(k)
    left = decomp.left_modes[i]
    mean = complex(decomp.left_traces[i] / d)

    if spec.kind == EnsembleKind.TWO_DESIGN:
        variance = 0.0 if d == 1 else (spec.reference_purity - 1.0 / d) * _centered_norm(decomp, k) / (d * d - 1)
    elif spec.kind in (EnsembleKind.HILBERT_SCHMIDT, EnsembleKind.INDUCED):
        variance = _centered_norm(decomp, k) / (d * (d * spec.env_dim + 1))
    else:
        p = spec.projector
        rank = spec.rank
        lifted = p @ np.kron(left.conj().T, np.eye(spec.dim_e)) @ p
        mean = complex(np.trace(lifted) / rank)
        variance = (float(np.sum(np.abs(lifted) ** 2)) / rank - abs(mean) ** 2) / (rank + 1)

    return mean, max(float(np.real(variance)), 0.0)


def variance_upper_bounds(decomp: SpectralDecomposition, k: int) -> tuple:
    """(||L_k||^2 / d^2, ||L_k||^2 / d^3): pure-Haar and HS variance bounds."""
    d = decomp.d
    norm_sq = float(decomp.left_norms[decomp.index(k)] ** 2)
    return norm_sq / d ** 2, norm_sq / d ** 3


def max_overlap(decomp: SpectralDecomposition, k: int) -> float:
    """Largest |a_k| over all density matrices: the numerical radius of L_k."""
    return numerical_radius(decomp.left(k))


def radius_variance_bounds(decomp: SpectralDecomposition, k: int) -> tuple:
    """(4 w(L_k)^2 / d, 4 w(L_k)^2 / d^2) from ||L_k||_2 <= 2 sqrt(d) w(L_k)."""
    w = max_overlap(decomp, k)
    d = decomp.d
    return 4.0 * w * w / d, 4.0 * w * w / d ** 2


def chebyshev_tail(variance: float, eps: float) -> float:
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if math.isinf(eps):
        return 0.0
    return min(1.0, variance / eps ** 2)


def concentrating_modes(decomp: SpectralDecomposition, spec: EnsembleSpec) -> list:
    """Modes k >= 2 whose variance upper bound for this ensemble is below 1/d."""
    hs_like = spec.kind in (EnsembleKind.HILBERT_SCHMIDT, EnsembleKind.INDUCED)
    flagged = []
    for k in range(2, decomp.n_modes + 1):
        haar_bound, hs_bound = variance_upper_bounds(decomp, k)
        if (hs_bound if hs_like else haar_bound) < 1.0 / decomp.d:
            flagged.append(k)
    return flagged


# ====================== MONTE CARLO ======================
def _sample_overlaps(
    decomp: SpectralDecomposition,
    spec: EnsembleSpec,
    modes: Sequence[int],
    n: int,
    seed: int,
    max_workers: int,
    keep_states: bool = False
):
    """Overlaps of ``n`` ensemble draws with the given modes, shape (n, len(modes))."""
    lefts = decomp.left_modes[[decomp.index(k) for k in modes]].conj()
    sizes = chunk_sizes(n)

    def _run(chunk_index: int):
        states = sample_chunk(spec, seed, chunk_index, sizes[chunk_index])
        values = np.einsum("mij,sij->sm", lefts, states)
        return values, (states if keep_states else None)

    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        results = list(executor.map(_run, range(len(sizes))))

    values = np.concatenate([r[0] for r in results], axis=0)
    states = np.concatenate([r[1] for r in results], axis=0) if keep_states else None
    return values, states


def mc_moments(
    decomp: SpectralDecomposition,
    spec: EnsembleSpec,
    modes: Sequence[int],
    n: int,
    seed: int,
    max_workers: int = config.MAX_WORKERS
) -> list:
    """Sample mean and unbiased variance of a_k per mode, with standard errors."""
    _check_dimension(decomp, spec)
    if n < config.MC_MIN_SAMPLES:
        raise ValueError(f"n must be >= {config.MC_MIN_SAMPLES}, got {n}")

    start = time.time()
    values, _ = _sample_overlaps(decomp, spec, modes, n, seed, max_workers)

    stats = []
    for column, k in enumerate(modes):
        a = values[:, column]
        # shifted by the first sample so identical draws give exactly zero
        shifted = a - a[0]
        mean_shift = shifted.mean()
        mc_mean = complex(a[0] + mean_shift)
        sum_sq = float(np.sum(np.abs(shifted) ** 2))
        mc_variance = max((sum_sq - n * abs(mean_shift) ** 2) / (n - 1), 0.0)
        centered_sq = np.abs(shifted - mean_shift) ** 2
        fourth = float(np.mean(centered_sq ** 2))
        biased = float(np.mean(centered_sq))
        var_se = math.sqrt(max(fourth - biased ** 2, 0.0) / n)
        mean, variance = closed_form_moments(decomp, spec, k)
        stats.append(OverlapStatistics(
            mode=k,
            mean=mean,
            variance=variance,
            mc_mean=mc_mean,
            mc_variance=mc_variance,
            mc_samples=n,
            mc_standard_error=math.sqrt(mc_variance / n),
            mc_variance_standard_error=var_se,
            ensemble=spec
        ))

    logger.debug(
        f"Monte Carlo moments | {spec.label} | d: {decomp.d} | modes: {list(modes)} | "
        f"n: {n} | seed: {seed} | time: {time.time() - start:.2f}s"
    )
    return stats


# ====================== RELAXATION AND MIXING ======================
def typical_relaxation_time(decomp: SpectralDecomposition, eps: float) -> RelaxationTime:
    """Time at which |<a_k>| exp(-|Re lambda_k| t) reaches eps for the slowest mode with nonzero mean.

    The mean is the unitarily-invariant one, tr(L_k^dagger)/d. Mode 2 is used
    unless its mean vanishes, then the first later mode with a nonzero mean.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if decomp.n_modes < 2 or decomp.gap < config.GAP_TOL:
        raise GapClosed(f"Liouvillian gap {decomp.gap:.3e} is below {config.GAP_TOL:.0e}")

    means = np.abs(decomp.left_traces) / decomp.d
    mode = 2
    for k in range(2, decomp.n_modes + 1):
        if means[k - 1] > config.ZERO_MEAN_TOL:
            mode = k
            break

    mean = float(means[mode - 1])
    rate = abs(float(decomp.eigenvalues[mode - 1].real))
    if mean <= eps or rate < config.GAP_TOL:
        return RelaxationTime(0.0, mode)
    return RelaxationTime(math.log(mean / eps) / rate, mode)


def _distance_profile(decomp: SpectralDecomposition, coefficients: np.ndarray):
    def distance(times) -> np.ndarray:
        return trace_norms(evolve_deviation(decomp, coefficients, times))
    return distance


def mixing_time_state(
    decomp: SpectralDecomposition,
    rho: np.ndarray,
    eps: float,
    horizon: float | None = None,
    grid: int = config.MIXING_GRID
) -> float:
    """First time after which ||rho(t) - rho_ss||_1 stays at or below eps."""
    if not 0.0 < eps <= 2.0:
        raise ValueError(f"eps must be in (0, 2], got {eps}")
    if eps == 2.0:
        return 0.0
    gap = decomp.gap
    if gap < config.GAP_TOL:
        raise GapClosed(f"Liouvillian gap {gap:.3e} is below {config.GAP_TOL:.0e}")
    if horizon is None:
        horizon = config.MIXING_HORIZON_GAPS / gap
    if horizon < config.MIXING_HORIZON_GAPS / gap * (1.0 - 1e-12):
        raise ValueError(f"horizon must be >= {config.MIXING_HORIZON_GAPS}/gap = {config.MIXING_HORIZON_GAPS / gap:.6g}")

    distance = _distance_profile(decomp, mode_coefficients(decomp, rho))
    times = np.concatenate([[0.0], np.geomspace(config.MIXING_GRID_START / gap, horizon, grid)])
    profile = distance(times)

    if profile[-1] > eps:
        raise NotReached(f"Trace distance {profile[-1]:.3e} > eps={eps} at horizon t={horizon:.6g}")
    above = np.flatnonzero(profile > eps)
    if above.size == 0:
        return 0.0

    j = int(above[-1])
    lo, hi = times[j], times[j + 1]
    if profile[j + 1] == eps:
        return float(hi)
    crossing = bisect(
        lambda t: distance([t])[0] - eps,
        lo,
        hi,
        rtol=config.MIXING_REL_TOL,
        xtol=1e-15 * max(hi, 1.0)
    )
    return float(crossing)


def slowest_cluster(decomp: SpectralDecomposition) -> list:
    """1-based indices of mode 2 and the modes degenerate with it."""
    return sorted(int(i) + 1 for i in decomp.cluster_members(2))


def sigma_deltas(decomp: SpectralDecomposition, spec: EnsembleSpec, modes: Sequence[int], sigmas: float) -> np.ndarray:
    """delta_k = sigmas * sqrt(Var a_k) per mode; inf where the overlap does not fluctuate."""
    spreads = np.sqrt([closed_form_moments(decomp, spec, k)[1] for k in modes])
    return np.where(spreads > 0, sigmas * spreads, math.inf)


def typical_mixing_time(
    decomp: SpectralDecomposition,
    spec: EnsembleSpec,
    delta,
    eps: float,
    n: int,
    seed: int,
    modes: Sequence[int] | None = None,
    horizon: float | None = None,
    grid: int = config.MIXING_GRID,
    max_workers: int = config.MAX_WORKERS
) -> MixingTimeEstimate:
    """Worst mixing time over sampled states whose tracked overlaps sit within delta of their means.

    ``modes`` defaults to the slowest cluster. ``delta`` is one value for all
    tracked modes or one value per mode (see ``sigma_deltas``).
    """
    _check_dimension(decomp, spec)
    if n < config.MC_MIN_SAMPLES:
        raise ValueError(f"n must be >= {config.MC_MIN_SAMPLES}, got {n}")

    start = time.time()
    modes = list(slowest_cluster(decomp) if modes is None else modes)
    deltas = np.broadcast_to(np.asarray(delta, dtype=float), (len(modes),)) if modes else np.zeros(0)
    if np.any(deltas <= 0):
        raise ValueError(f"delta must be positive, got {delta}")
    tracked = modes or [1]
    values, states = _sample_overlaps(decomp, spec, tracked, n, seed, max_workers, keep_states=True)

    if modes:
        means = np.array([closed_form_moments(decomp, spec, k)[0] for k in modes])
        accepted = np.all(np.abs(values - means[None, :]) <= deltas[None, :], axis=1)
    else:
        accepted = np.ones(n, dtype=bool)

    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        times = np.array(list(executor.map(
            lambda rho: mixing_time_state(decomp, rho, eps, horizon, grid), states
        )))

    if not accepted.any():
        raise EmptyTypicalSet(f"No sample out of {n} lies within delta={delta} on modes {modes}")

    kept = times[accepted]
    estimate = MixingTimeEstimate(
        typical=float(kept.max()),
        acceptance_fraction=float(accepted.mean()),
        worst_case=float(times.max()),
        spread=(float(kept.min()), float(np.median(kept)), float(kept.max())),
        modes=tuple(modes),
        n_samples=n,
        deltas=tuple(float(x) for x in deltas)
    )
    logger.debug(
        f"Typical mixing time | {spec.label} | d: {decomp.d} | modes: {modes} | eps: {eps} | "
        f"accepted: {estimate.acceptance_fraction:.3f} | t_typ: {estimate.typical:.6g} | "
        f"t_worst: {estimate.worst_case:.6g} | time: {time.time() - start:.2f}s"
    )
    return estimate


# ====================== DIAGNOSTICS ======================
def tsme_diagnostic(decomp: SpectralDecomposition, variance_a2: float) -> TSMEDiagnostic:
    """Typical strong Mpemba flags for mode 2 and the modes within log2(d) of the gap."""
    d = decomp.d
    mean_a2 = float(abs(decomp.left_traces[1]) / d)
    tol_mean = config.TSME_MEAN_FACTOR / d
    tol_var = config.TSME_VAR_FACTOR * variance_upper_bounds(decomp, 2)[0]
    gap = decomp.gap
    ratio_ok = [
        k for k in range(3, decomp.n_modes + 1)
        if gap > 0 and abs(decomp.eigenvalues[k - 1].real) / gap <= math.log2(d)
    ]
    return TSMEDiagnostic(
        tsme=bool(mean_a2 < tol_mean and variance_a2 < tol_var),
        mean_a2=mean_a2,
        ratio_ok_modes=ratio_ok
    )


def classify_regime(exponent: float, r_squared: float) -> Regime:
    if r_squared < config.REGIME_MIN_R2:
        return Regime.MARGINAL
    if exponent < -config.REGIME_SLOPE:
        return Regime.CONCENTRATING
    if exponent > config.REGIME_SLOPE:
        return Regime.DIVERGING
    return Regime.MARGINAL


def scaling_fit(points: Sequence[tuple]) -> ScalingFit:
    """Least-squares slope of log2(variance) against log2(d)."""
    if len(points) < 3:
        raise ValueError(f"scaling_fit needs at least 3 points, got {len(points)}")
    dims = np.array([p[0] for p in points], dtype=float)
    variances = np.array([p[1] for p in points], dtype=float)
    if np.unique(dims).size != dims.size:
        raise ValueError("scaling_fit needs distinct dimensions")
    if np.any(variances <= config.FIT_MIN_VARIANCE):
        raise DegenerateFit(f"Variances must exceed {config.FIT_MIN_VARIANCE:.0e} for a log-log fit")
    if np.ptp(variances) <= config.FIT_MIN_VARIANCE:
        raise DegenerateFit("All variances are equal; the slope is undefined")

    result = linregress(np.log2(dims), np.log2(variances))
    r_squared = float(result.rvalue ** 2)
    return ScalingFit(
        exponent=float(result.slope),
        intercept=float(result.intercept),
        r_squared=r_squared,
        regime=classify_regime(float(result.slope), r_squared)
    )


__all__ = [
    "MixingTimeEstimate",
    "OverlapStatistics",
    "Regime",
    "RelaxationTime",
    "ScalingFit",
    "TSMEDiagnostic",
    "TypicalityReport",
    "chebyshev_tail",
    "classify_regime",
    "closed_form_moments",
    "concentrating_modes",
    "max_overlap",
    "mc_moments",
    "mixing_time_state",
    "overlap",
    "radius_variance_bounds",
    "scaling_fit",
    "sigma_deltas",
    "slowest_cluster",
    "tsme_diagnostic",
    "typical_mixing_time",
    "typical_relaxation_time",
    "variance_upper_bounds",
]
