import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from config import config
from .database import SpectrumCache
from .ensembles import EnsembleSpec, derive_seed, haar_unitaries, make_rng
from .errors import (
    BoundViolated,
    ConfigError,
    DegenerateFit,
    EmptyTypicalSet,
    InvalidEnsemble,
    ModeIndexError,
    NotReached,
)
from .lindblad import LindbladModel, Normalization, SpectralDecomposition, slowest_modes, spectral_decompose
from .models import EnsembleSection, RunConfig, SweepRow, describe_validation_error
from .summaries import SummaryDocument
from .systems import (
    analytic_chain_oracle,
    build_chain,
    build_tfim,
    compare_with_oracle,
    gibbs_pairing_residual,
    match_modes,
    qdb_bound_check,
    qubit_davies,
    random_hamiltonian,
)
from .typicality import (
    MixingTimeEstimate,
    TypicalityReport,
    closed_form_moments,
    concentrating_modes,
    max_overlap,
    mc_moments,
    mixing_time_state,
    scaling_fit,
    sigma_deltas,
    slowest_cluster,
    tsme_diagnostic,
    typical_mixing_time,
    typical_relaxation_time,
    variance_upper_bounds,
)
from .writers import ResultWriter

SPECTRUM_FIELDS = [
    "instance", "mode", "eigenvalue_re", "eigenvalue_im", "left_norm", "right_norm",
    "left_trace_re", "left_trace_im", "O_k", "cluster_size"
]
TYPICALITY_FIELDS = [
    "ensemble", "d", "N", "mode", "mean_re", "mean_im", "var_analytic", "var_mc", "se", "n_samples", "seed"
]
SWEEP_FIELDS = list(SweepRow.model_fields)
BOUND_FIELDS = [
    "instance", "d", "beta", "max_Ok", "bound", "kms_residual", "gns_residual", "gibbs_residual",
    "variance_chain_violations", "radius_violations"
]
ORACLE_FIELDS = [
    "mode", "oracle_re", "oracle_im", "numeric_re", "numeric_im", "eigenvalue_error",
    "left_norm_error", "left_trace_error"
]
MIXING_FIELDS = [
    "ensemble", "d", "delta", "eps", "t_typical", "acceptance_fraction", "t_worst",
    "spread_min", "spread_median", "spread_max", "n_samples", "seed"
]

# Index of the RNG stream that builds random projectors and Hamiltonians, kept
# apart from the Monte-Carlo chunk streams (stream, 0).
AUX_INDEX = 1


class TypicalityService:
    """Runs one validated command and collects its CSV rows and summary."""

    def __init__(
        self,
        run: RunConfig,
        config_hash: str,
        cache: Optional[SpectrumCache] = None,
        max_workers: int = config.MAX_WORKERS
    ):
        self.run = run
        self.config_hash = config_hash
        self.cache = cache
        self.max_workers = max_workers
        self.normalization = Normalization(run.normalization)
        self.summary = SummaryDocument(run.command, config_hash, run.seed)
        logging.info(
            f"TypicalityService initialized | Command: {run.command} | Builder: {run.model.builder} | "
            f"Workers: {max_workers} | Cache: {'on' if cache else 'off'}"
        )

    # === Paths ===
    @property
    def output_path(self) -> Path:
        if self.run.output:
            return Path(self.run.output)
        return Path(config.OUTPUT_DIR) / f"{self.run.command}.csv"

    @property
    def summary_path(self) -> Path:
        return self.output_path.with_suffix(".summary.json")

    def _metadata(self) -> Dict:
        return {
            "command": self.run.command,
            "config_hash": self.config_hash,
            "seed": self.run.seed,
            "tool_version": config.TOOL_VERSION
        }

    def _writer(self, fields: List[str]) -> ResultWriter:
        return ResultWriter(str(self.output_path), fields, self._metadata())

    # === Dispatch ===
    def execute(self) -> SummaryDocument:
        handlers = {
            "spectrum": self.spectrum,
            "typicality": self.typicality,
            "sweep": self.sweep,
            "bound-check": self.bound_check,
            "oracle-check": self.oracle_check,
            "mixing-time": self.mixing_time,
        }
        start = time.time()
        try:
            handlers[self.run.command]()
        except Exception as e:
            logging.error(f"Command '{self.run.command}' failed: {str(e)}", exc_info=config.DEBUG)
            self.summary.add("error", {"type": type(e).__name__, "message": str(e)})
            raise
        finally:
            self.summary.write(str(self.summary_path))
        logging.info(f"Command '{self.run.command}' finished in {time.time() - start:.2f}s")
        return self.summary

    # === Building blocks ===
    def build_model(self, n_sites: Optional[int] = None, beta: Optional[float] = None) -> LindbladModel:
        section = self.run.model
        update = {}
        if n_sites is not None:
            update["N"] = n_sites
        if beta is not None:
            update["beta"] = beta
        try:
            params = type(section.params).model_validate({**section.params.model_dump(), **update})
        except ValidationError as e:
            raise ConfigError(describe_validation_error(e), key="sweep")
        if section.builder == "chain":
            return build_chain(params)
        if section.builder == "tfim":
            return build_tfim(params)
        return self.davies_instances()[0].model

    def davies_instances(self) -> list:
        p = self.run.model.params
        seed = self.run.seed or 0
        instances = []
        for i in range(p.instances):
            h0 = None
            if p.random_hamiltonian:
                h0 = random_hamiltonian(2 ** p.N, make_rng(seed, stream=i, index=AUX_INDEX))
            instances.append(qubit_davies(p.N, p.beta, h0=h0, gamma=p.gamma, E=p.E))
        return instances

    def decompose(self, model: LindbladModel) -> SpectralDecomposition:
        """Dense decomposition through the cache, or the iterative slowest-mode path."""
        if self.run.iterative:
            return slowest_modes(model, self.run.iterative_modes, self.normalization)

        key = model.fingerprint()
        if self.cache:
            cached = self.cache.get(key, self.normalization)
            if cached is not None:
                return cached
        start = time.time()
        decomp = spectral_decompose(model, self.normalization)
        if self.cache:
            self.cache.put(key, decomp)
        logging.info(
            f"Decomposed {model.label} | d: {model.dim} | gap: {decomp.gap:.6g} | "
            f"max O_k: {decomp.condition_numbers.max():.6g} | time: {time.time() - start:.2f}s"
        )
        return decomp

    def resolve_modes(self, decomp: SpectralDecomposition) -> List[int]:
        modes = self.run.modes
        if modes == "slowest":
            return [2]
        if modes == "all":
            return list(range(1, decomp.n_modes + 1))
        for k in modes:
            if k > decomp.n_modes:
                raise ModeIndexError(f"modes: mode {k} out of range 1..{decomp.n_modes}")
        return list(modes)

    def tracked_modes(self, decomp: SpectralDecomposition, spec: EnsembleSpec) -> List[int]:
        """Modes defining the delta-concentrated set for mixing times."""
        if self.run.modes == "all":
            return concentrating_modes(decomp, spec)
        if self.run.modes == "slowest":
            return slowest_cluster(decomp)
        return self.resolve_modes(decomp)

    def estimate_mixing(
        self, decomp: SpectralDecomposition, spec: EnsembleSpec, n: int, seed: int, max_workers: int
    ) -> MixingTimeEstimate:
        modes = self.tracked_modes(decomp, spec)
        delta = self.run.delta
        if delta is None:
            delta = sigma_deltas(decomp, spec, modes, self.run.delta_sigmas)
        return typical_mixing_time(
            decomp, spec, delta, self.run.eps, n, seed,
            modes=modes, horizon=self.run.horizon, max_workers=max_workers
        )

    def make_ensemble(self, section: EnsembleSection, d: int, seed: int) -> EnsembleSpec:
        if section.kind == "TwoDesign":
            if section.reference_diagonal is not None:
                if len(section.reference_diagonal) != d:
                    raise InvalidEnsemble(f"reference_diagonal needs {d} entries, got {len(section.reference_diagonal)}")
                reference = np.diag(section.reference_diagonal).astype(complex)
            elif section.reference == "maximally_mixed":
                reference = np.eye(d, dtype=complex) / d
            else:
                reference = self._pure_state(d)
            return EnsembleSpec.two_design(reference)
        if section.kind == "HilbertSchmidt":
            return EnsembleSpec.hilbert_schmidt(d)
        if section.kind == "Induced":
            return EnsembleSpec.induced(d, section.env_dim)

        total = d * section.dim_e
        if section.projector_rank is None:
            projector = np.eye(total, dtype=complex)
        else:
            if section.projector_rank > total:
                raise InvalidEnsemble(f"projector_rank {section.projector_rank} exceeds d*dim_e = {total}")
            u = haar_unitaries(make_rng(seed, stream=0, index=AUX_INDEX), total, 1)[0]
            basis = u[:, :section.projector_rank]
            projector = basis @ basis.conj().T
        return EnsembleSpec.constrained_pure(projector, d, section.dim_e)

    def _n_sites(self, d: int) -> int:
        return int(round(math.log2(d)))

    # === Commands ===
    def spectrum(self) -> None:
        if self.run.model.builder == "davies":
            decomps = [self.decompose(inst.model) for inst in self.davies_instances()]
        else:
            decomps = [self.decompose(self.build_model())]

        with self._writer(SPECTRUM_FIELDS) as writer:
            for instance, decomp in enumerate(decomps):
                for k in range(1, decomp.n_modes + 1):
                    lam = decomp.eigenvalue(k)
                    trace = np.conj(decomp.left_traces[k - 1])
                    writer.write_row({
                        "instance": instance,
                        "mode": k,
                        "eigenvalue_re": lam.real,
                        "eigenvalue_im": lam.imag,
                        "left_norm": float(decomp.left_norms[k - 1]),
                        "right_norm": float(decomp.right_norms[k - 1]),
                        "left_trace_re": float(trace.real),
                        "left_trace_im": float(trace.imag),
                        "O_k": decomp.condition_number(k),
                        "cluster_size": decomp.cluster_size(k)
                    })
                self.summary.add(f"spectrum[{instance}]", {
                    "label": decomp.label,
                    "d": decomp.d,
                    "n_modes": decomp.n_modes,
                    "complete": decomp.complete,
                    "gap": decomp.gap,
                    "max_condition_number": float(decomp.condition_numbers.max()),
                    "slowest_eigenvalue": decomp.eigenvalue(2) if decomp.n_modes > 1 else 0.0
                })

    def typicality(self) -> None:
        model = self.build_model()
        decomp = self.decompose(model)
        modes = self.resolve_modes(decomp)
        n_sites = self._n_sites(decomp.d)

        with self._writer(TYPICALITY_FIELDS) as writer:
            for e_index, section in enumerate(self.run.ensemble):
                seed = derive_seed(self.run.seed, e_index)
                spec = self.make_ensemble(section, decomp.d, seed)
                stats = mc_moments(decomp, spec, modes, self.run.n_samples, seed, self.max_workers)
                for s in stats:
                    writer.write_row({
                        "ensemble": spec.label,
                        "d": decomp.d,
                        "N": n_sites,
                        "mode": s.mode,
                        "mean_re": s.mean.real,
                        "mean_im": s.mean.imag,
                        "var_analytic": s.variance,
                        "var_mc": s.mc_variance,
                        "se": s.mc_standard_error,
                        "n_samples": s.mc_samples,
                        "seed": seed
                    })
                self.summary.add(f"typicality[{spec.label}]", [{
                    "mode": s.mode,
                    "mean_z": s.mean_z_score,
                    "variance_z": s.variance_z_score,
                    "variance_se": s.mc_variance_standard_error
                } for s in stats])

        bounds = {}
        for k in modes:
            haar_bound, hs_bound = variance_upper_bounds(decomp, k)
            bounds[str(k)] = {
                "haar_bound": haar_bound,
                "hs_bound": hs_bound,
                "max_overlap": max_overlap(decomp, k),
                "O_k": decomp.condition_number(k)
            }
        self.summary.add("bounds", bounds)
        if decomp.n_modes > 1:
            pure = EnsembleSpec.two_design(self._pure_state(decomp.d))
            self.summary.add("tsme", tsme_diagnostic(decomp, closed_form_moments(decomp, pure, 2)[1])._asdict())
            self.summary.add("typical_relaxation_time", typical_relaxation_time(decomp, self.run.eps)._asdict())

    @staticmethod
    def _pure_state(d: int) -> np.ndarray:
        rho = np.zeros((d, d), dtype=complex)
        rho[0, 0] = 1.0
        return rho

    def _sweep_point(self, task: tuple) -> tuple:
        """Rows for one (beta, N) point of the sweep."""
        point_index, beta, n_sites = task
        start = time.time()
        decomp = self.decompose(self.build_model(n_sites, beta))
        modes = self.resolve_modes(decomp)
        rows = []
        for e_index, section in enumerate(self.run.ensemble):
            seed = derive_seed(self.run.seed, point_index, e_index)
            spec = self.make_ensemble(section, decomp.d, seed)
            # one worker per point; points already run in parallel
            stats = mc_moments(decomp, spec, modes, self.run.n_samples, seed, max_workers=1)
            for s in stats:
                rows.append(SweepRow(
                    N=n_sites,
                    d=decomp.d,
                    beta=beta,
                    ensemble=spec.label,
                    mode=s.mode,
                    mean_re=s.mean.real,
                    mean_im=s.mean.imag,
                    var_analytic=s.variance,
                    var_mc=s.mc_variance,
                    se=s.mc_standard_error,
                    O_k=decomp.condition_number(s.mode),
                    runtime_seconds=(time.time() - start) if self.run.record_runtime else None,
                    seed=seed
                ))
        extras = {
            "tsme": tsme_diagnostic(
                decomp, closed_form_moments(decomp, EnsembleSpec.two_design(self._pure_state(decomp.d)), 2)[1]
            ),
            "relaxation": typical_relaxation_time(decomp, self.run.eps),
            "worst_overlap": max_overlap(decomp, 2),
            "mixing": self._sweep_mixing(decomp, point_index, n_sites)
        }
        logging.info(f"Sweep point | N: {n_sites} | beta: {beta} | rows: {len(rows)} | time: {time.time() - start:.2f}s")
        return rows, extras

    def _sweep_mixing(self, decomp: SpectralDecomposition, point_index: int, n_sites: int) -> Optional[dict]:
        """Typical mixing time of the first ensemble at one sweep point, or None if disabled or undefined."""
        n = self.run.sweep.mixing_samples
        if n is None:
            return None
        # one past the ensemble keys of this point
        seed = derive_seed(self.run.seed, point_index, len(self.run.ensemble))
        spec = self.make_ensemble(self.run.ensemble[0], decomp.d, seed)
        try:
            estimate = self.estimate_mixing(decomp, spec, n, seed, max_workers=1)
        except (NotReached, EmptyTypicalSet) as e:
            logging.warning(f"Sweep mixing time skipped | N: {n_sites} | {spec.label} | {str(e)}")
            return None
        return {
            "ensemble": spec.label,
            "t_typical": estimate.typical,
            "acceptance_fraction": estimate.acceptance_fraction,
            "t_worst": estimate.worst_case,
            "modes": estimate.modes,
        }

    def sweep(self) -> None:
        sweep = self.run.sweep
        base_beta = getattr(self.run.model.params, "beta", None)
        betas = sweep.betas if sweep.betas is not None and self.run.model.builder == "tfim" else [base_beta]
        grid = [(beta, n) for beta in betas for n in range(sweep.n_min, sweep.n_max + 1)]
        tasks = [(i, beta, n) for i, (beta, n) in enumerate(grid)]

        results = []
        with self._writer(SWEEP_FIELDS) as writer:
            with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
                # map keeps submission order so the CSV body is schedule-independent
                for task, (rows, extras) in zip(tasks, executor.map(self._sweep_point, tasks)):
                    writer.write_rows([r.model_dump() for r in rows])
                    results.append((task, rows, extras))

        for beta in betas:
            points = [(t, rows, extras) for t, rows, extras in results if t[1] == beta]
            modes = sorted({r.mode for _, rows, _ in points for r in rows})
            for mode in modes:
                report = TypicalityReport(mode=mode)
                for (_, _, n_sites), rows, extras in points:
                    d = 2 ** n_sites
                    report.sizes.append((n_sites, d))
                    report.tsme[n_sites] = extras["tsme"]
                    report.typical_relaxation_time[n_sites] = extras["relaxation"]
                    report.worst_case_overlap[n_sites] = extras["worst_overlap"]
                    report.typical_mixing_time[n_sites] = extras["mixing"]
                    for r in rows:
                        if r.mode == mode:
                            report.variances.setdefault(r.ensemble, []).append((d, r.var_analytic))
                            report.mc_variances.setdefault(r.ensemble, []).append((d, r.var_mc))
                for ensemble, pts in report.variances.items():
                    for name, series in ((ensemble, pts), (f"{ensemble}[mc]", report.mc_variances[ensemble])):
                        try:
                            fit = scaling_fit(series)
                        except DegenerateFit as e:
                            logging.warning(f"Scaling fit skipped | beta: {beta} | mode: {mode} | {name} | {str(e)}")
                            continue
                        report.fits[name] = fit
                        logging.info(
                            f"Scaling fit | beta: {beta} | mode: {mode} | {name} | exponent: {fit.exponent:.4f} | "
                            f"R2: {fit.r_squared:.4f} | regime: {fit.regime.value}"
                        )
                self.summary.add(f"sweep[beta={beta},mode={mode}]", report.to_dict())

    def bound_check(self) -> None:
        p = self.run.model.params
        failures = []
        with self._writer(BOUND_FIELDS) as writer:
            for instance, davies in enumerate(self.davies_instances()):
                decomp = self.decompose(davies.model)
                check = qdb_bound_check(davies, decomp, strict=False)
                if not check.holds:
                    failures.append(
                        f"instance {instance}: max O_k = {check.max_Ok:.12g} exceeds {check.bound:.12g}"
                    )
                chain_violations, radius_violations = self._bound_chain_violations(decomp)
                if chain_violations or radius_violations:
                    failures.append(
                        f"instance {instance}: {chain_violations} variance-chain and "
                        f"{radius_violations} numerical-radius violations"
                    )

                writer.write_row({
                    "instance": instance,
                    "d": decomp.d,
                    "beta": p.beta,
                    "gibbs_residual": gibbs_pairing_residual(davies, decomp),
                    "variance_chain_violations": chain_violations,
                    "radius_violations": radius_violations,
                    **check._asdict()
                })

        self.summary.add("bound_check", {"instances": p.instances, "failures": failures})
        if failures:
            raise BoundViolated("; ".join(failures))

    def _bound_chain_violations(self, decomp: SpectralDecomposition) -> tuple:
        """Counts of modes breaking Var <= ||L||^2/d^q <= O_k^2/d^(q-1) or ||L||_2 <= 2 sqrt(d) w(L)."""
        d = decomp.d
        slack = 1.0 + 1e-10
        haar_pure = EnsembleSpec.two_design(self._pure_state(d))
        hs = EnsembleSpec.hilbert_schmidt(d)
        chain_violations = radius_violations = 0
        for k in range(1, decomp.n_modes + 1):
            o_k = decomp.condition_number(k)
            haar_bound, hs_bound = variance_upper_bounds(decomp, k)
            for spec, bound, q in ((haar_pure, haar_bound, 2), (hs, hs_bound, 3)):
                variance = closed_form_moments(decomp, spec, k)[1]
                if variance > bound * slack or bound > o_k ** 2 / d ** (q - 1) * slack:
                    chain_violations += 1
            if decomp.left_norms[k - 1] > 2 * math.sqrt(d) * max_overlap(decomp, k) * slack:
                radius_violations += 1
        return chain_violations, radius_violations

    def oracle_check(self) -> None:
        params = self.run.model.params
        oracle = analytic_chain_oracle(params, self.normalization)
        numeric = self.decompose(build_chain(params))
        comparison = compare_with_oracle(oracle, numeric)
        pairs = match_modes(oracle, numeric)

        with self._writer(ORACLE_FIELDS) as writer:
            for i, j in pairs:
                a, b = oracle.eigenvalues[i], numeric.eigenvalues[j]
                writer.write_row({
                    "mode": i + 1,
                    "oracle_re": float(a.real),
                    "oracle_im": float(a.imag),
                    "numeric_re": float(b.real),
                    "numeric_im": float(b.imag),
                    "eigenvalue_error": float(abs(a - b)),
                    "left_norm_error": float(abs(oracle.left_norms[i] - numeric.left_norms[j])),
                    "left_trace_error": float(abs(oracle.left_traces[i] - numeric.left_traces[j]))
                })

        self.summary.add("oracle_check", comparison._asdict())
        if comparison.mismatches:
            raise BoundViolated(f"{comparison.mismatches} chain modes differ from the analytic oracle above 1e-7")

    def mixing_time(self) -> None:
        decomp = self.decompose(self.build_model())
        d = decomp.d
        eps = self.run.eps

        tracked = {}
        with self._writer(MIXING_FIELDS) as writer:
            for e_index, section in enumerate(self.run.ensemble):
                seed = derive_seed(self.run.seed, e_index)
                spec = self.make_ensemble(section, d, seed)
                estimate = self.estimate_mixing(decomp, spec, self.run.n_samples, seed, self.max_workers)
                tracked[spec.label] = {"modes": estimate.modes, "deltas": estimate.deltas}
                writer.write_row({
                    "ensemble": spec.label,
                    "d": d,
                    "delta": estimate.deltas[0] if estimate.deltas else None,
                    "eps": eps,
                    "t_typical": estimate.typical,
                    "acceptance_fraction": estimate.acceptance_fraction,
                    "t_worst": estimate.worst_case,
                    "spread_min": estimate.spread[0],
                    "spread_median": estimate.spread[1],
                    "spread_max": estimate.spread[2],
                    "n_samples": estimate.n_samples,
                    "seed": seed
                })

        references = {
            "maximally_mixed": np.eye(d, dtype=complex) / d,
            "ground": self._pure_state(d),
        }
        self.summary.add("per_state_mixing_time", {
            name: mixing_time_state(decomp, rho, eps, self.run.horizon) for name, rho in references.items()
        })
        self.summary.add("tracked_modes", tracked)
        self.summary.add("typical_relaxation_time", typical_relaxation_time(decomp, eps)._asdict())
