import logging
import math
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config import config

logger = logging.getLogger(__name__)


class StrictModel(BaseModel):
    """Base for every config schema: unknown keys are rejected."""
    model_config = ConfigDict(extra="forbid", frozen=True)


# ====================== PHYSICAL MODEL PARAMETERS ======================
class ChainParams(StrictModel):
    """
    Non-interacting damped qubit chain.
    """
    N: int = Field(..., ge=1, description="Number of qubits")
    E: float = Field(1.0, description="Level splitting")
    gamma0: float = Field(..., ge=0.0, description="Pump rate")
    gamma1: float = Field(..., ge=0.0, description="Decay rate")
    gamma_dephasing: float = Field(0.0, ge=0.0, description="Per-site dephasing rate")

    @model_validator(mode="after")
    def check_rates(self):
        if self.gamma0 + self.gamma1 <= 0:
            logger.warning(f"Chain rates vanish: gamma0={self.gamma0}, gamma1={self.gamma1}")
            raise ValueError("gamma0 + gamma1 must be positive")
        return self


class TFIMParams(StrictModel):
    """
    Dissipative transverse-field Ising chain with open boundaries.

    Unless overridden, gamma1 = 2*gamma*e^{bE}/(1+e^{bE}) and gamma0 = 2*gamma/(1+e^{bE}).
    """
    N: int = Field(..., ge=2)
    J: float = 1.0
    g: float = 1.0
    beta: float = Field(..., ge=0.0)
    gamma: float = Field(0.5, ge=0.0)
    E: float = Field(1.0, description="Local splitting entering the rate ratio")
    gamma0: Optional[float] = Field(None, ge=0.0)
    gamma1: Optional[float] = Field(None, ge=0.0)
    gamma_dephasing: float = Field(0.0, ge=0.0)

    @model_validator(mode="after")
    def check_overrides(self):
        if (self.gamma0 is None) != (self.gamma1 is None):
            raise ValueError("gamma0 and gamma1 must be overridden together")
        return self


class DaviesParams(StrictModel):
    """
    Davies generator on N qubits with sigma_x couplings on every site.

    ``random_hamiltonian`` draws H0 from the GUE (seeded by the run seed);
    otherwise H0 = sum_i -(E/2) sigma_z_i.
    """
    N: int = Field(..., ge=1, le=3)
    beta: float = Field(..., ge=0.0)
    gamma: float = Field(1.0, gt=0.0)
    E: float = 1.0
    random_hamiltonian: bool = True
    instances: int = Field(1, ge=1)


class ChainSection(StrictModel):
    builder: Literal["chain"]
    params: ChainParams


class TFIMSection(StrictModel):
    builder: Literal["tfim"]
    params: TFIMParams


class DaviesSection(StrictModel):
    builder: Literal["davies"]
    params: DaviesParams


ModelSection = Annotated[
    Union[ChainSection, TFIMSection, DaviesSection],
    Field(discriminator="builder")
]


# ====================== ENSEMBLES ======================
class EnsembleSection(StrictModel):
    """
    Initial-state ensemble. ``reference`` applies to TwoDesign, ``env_dim`` to
    Induced, ``dim_e``/``projector_rank`` to ConstrainedPure (rank None means P_R = I).
    """
    kind: Literal["TwoDesign", "HilbertSchmidt", "Induced", "ConstrainedPure"]
    reference: Literal["pure", "maximally_mixed"] = "pure"
    reference_diagonal: Optional[list[float]] = None
    env_dim: Optional[int] = Field(None, ge=1)
    dim_e: int = Field(1, ge=1)
    projector_rank: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def check_kind_fields(self):
        if self.kind == "Induced" and self.env_dim is None:
            raise ValueError("Induced ensemble requires env_dim")
        if self.reference_diagonal is not None:
            if any(p < 0 for p in self.reference_diagonal) or not math.isclose(
                sum(self.reference_diagonal), 1.0, abs_tol=config.DENSITY_TOL
            ):
                raise ValueError("reference_diagonal must be nonnegative and sum to 1")
        return self


class SweepSection(StrictModel):
    n_min: int = Field(..., ge=1)
    n_max: int = Field(..., ge=1)
    betas: Optional[list[float]] = None
    mixing_samples: Optional[int] = Field(100, ge=config.MC_MIN_SAMPLES, description="States per point for the typical mixing time; null skips it")

    @model_validator(mode="after")
    def check_range(self):
        if self.n_max - self.n_min + 1 < 3:
            raise ValueError("sweep needs at least 3 sizes for a scaling fit")
        return self


# ====================== RUN CONFIG ======================
class RunConfig(StrictModel):
    """
    Validated run configuration loaded from a JSON document.
    """
    command: Literal[tuple(config.COMMANDS)]
    model: ModelSection
    ensemble: Optional[list[EnsembleSection]] = None
    modes: Union[list[int], Literal["slowest", "all"]] = "slowest"
    n_samples: int = Field(10000, ge=config.MC_MIN_SAMPLES)
    seed: Optional[int] = Field(None, ge=0, lt=2 ** 64)
    eps: float = Field(0.01, gt=0.0, le=2.0)
    delta: Optional[float] = Field(None, gt=0.0)
    delta_sigmas: float = Field(3.0, gt=0.0, description="delta in units of sqrt(Var a_2) when delta is unset")
    horizon: Optional[float] = Field(None, gt=0.0)
    normalization: Literal["TraceNorm", "HSNorm"] = "TraceNorm"
    iterative: bool = False
    iterative_modes: int = Field(2, ge=2)
    sweep: Optional[SweepSection] = None
    output: Optional[str] = None
    threads: Optional[int] = Field(None, ge=1)
    record_runtime: bool = False

    @field_validator("ensemble", mode="before")
    @classmethod
    def wrap_single_ensemble(cls, v):
        if isinstance(v, dict):
            return [v]
        return v

    @field_validator("modes")
    @classmethod
    def validate_modes(cls, v):
        if isinstance(v, list) and (not v or min(v) < 1):
            raise ValueError("modes must be a non-empty list of 1-based indices")
        return v

    @model_validator(mode="after")
    def check_command_sections(self):
        if self.command in config.SAMPLING_COMMANDS:
            if self.seed is None:
                raise ValueError(f"seed is mandatory for the '{self.command}' command")
            if not self.ensemble:
                raise ValueError(f"ensemble section is required for the '{self.command}' command")
        if self.command == "sweep" and self.sweep is None:
            raise ValueError("sweep section is required for the 'sweep' command")
        if self.command == "oracle-check" and self.model.builder != "chain":
            raise ValueError("oracle-check only applies to the chain builder")
        if self.command == "bound-check" and self.model.builder != "davies":
            raise ValueError("bound-check needs the davies builder")
        if self.model.builder == "davies" and self.command not in ("bound-check", "spectrum"):
            raise ValueError(f"davies models support 'bound-check' and 'spectrum', not '{self.command}'")
        return self


class CliArgs(StrictModel):
    """
    Command-line flags after argparse, validated before any work starts.
    """
    config: str
    seed: Optional[int] = Field(None, ge=0, lt=2 ** 64)
    output: Optional[str] = None
    threads: Optional[int] = Field(None, ge=1)
    no_cache: bool = False
    quiet: bool = False

class SweepRow(StrictModel):
    """
    One CSV row of a sweep: one (size, ensemble, mode) point.
    """
    N: int
    d: int
    beta: Optional[float]
    ensemble: str
    mode: int
    mean_re: float
    mean_im: float
    var_analytic: float
    var_mc: Optional[float]
    se: Optional[float]
    O_k: float
    runtime_seconds: Optional[float]
    seed: int


# ====================== ERRORS ======================
class ErrorReport(BaseModel):
    """
    Standard error format with debug context.
    """
    error: str = Field(..., description="Error type classification")
    details: Optional[str] = Field(None, description="Technical details for debugging")
    code: int = Field(..., description="Process exit code", examples=[2, 3, 4])
    allowed_values: Optional[dict] = Field(None, description="Valid input constraints when applicable")

    def log_error(self):
        logger.error(
            f"Error (exit {self.code}): {self.error} | "
            f"Details: {self.details or 'None'} | "
            f"Allowed values: {self.allowed_values or 'None'}"
        )


def describe_validation_error(e: ValidationError) -> str:
    """First offending key path and message, e.g. 'model.params.gamma0: ...'."""
    parts = []
    for err in e.errors():
        location = ".".join(str(p) for p in err["loc"])
        parts.append(f"{location}: {err['msg']}" if location else err["msg"])
    return "; ".join(parts)
