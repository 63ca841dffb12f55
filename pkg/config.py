import os
from pathlib import Path
from typing import Final, Dict, List
from dotenv import load_dotenv

load_dotenv()

# Constants for validation
VALID_JOURNAL_MODES = ["WAL", "DELETE", "TRUNCATE", "PERSIST", "MEMORY"]
VALID_SYNC_MODES = ["NORMAL", "FULL", "OFF"]
VALID_LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]

class Config:
    """Centralized configuration for the toolkit with environment-aware settings."""

    TOOL_VERSION: Final[str] = "1.0.0"

    # ========== DEBUG & LOGGING ==========
    DEBUG: Final[bool] = os.getenv("DEBUG", "false").lower() == "true"
    LOG_LEVEL: Final[str] = os.getenv("LOG_LEVEL", "INFO").upper()
    LOG_FILE: Final[str] = os.getenv("LOG_FILE", "")

    # ========== DECOMPOSITION CACHE ==========
    CACHE_ENABLED: Final[bool] = os.getenv("CACHE_ENABLED", "true").lower() == "true"
    CACHE_PATH: Final[str] = os.getenv("CACHE_PATH", "data/spectra.db")
    SQLITE_JOURNAL_MODE: Final[str] = os.getenv("SQLITE_JOURNAL_MODE", "WAL")
    SQLITE_SYNC_MODE: Final[str] = os.getenv("SQLITE_SYNC_MODE", "NORMAL")
    CACHE_FORMAT_VERSION: Final[int] = 1

    # ========== OUTPUT ==========
    OUTPUT_DIR: Final[str] = os.getenv("OUTPUT_DIR", "results")
    CSV_DIGITS: Final[int] = 17            # round-trip exact for float64

    # ========== EIGENSOLVER ==========
    EIG_CLUSTER_TOL: Final[float] = float(os.getenv("EIG_CLUSTER_TOL", "1e-8"))    # relative to ||m||_2
    EIG_DEFECT_TOL: Final[float] = float(os.getenv("EIG_DEFECT_TOL", "1e-10"))
    STEADY_STATE_TOL: Final[float] = float(os.getenv("STEADY_STATE_TOL", "1e-9"))
    DENSE_MAX_SUPERDIM: Final[int] = int(os.getenv("DENSE_MAX_SUPERDIM", "4096"))
    EXACT_NORM_MAX_DIM: Final[int] = 1024  # above this, ||m||_2 is estimated
    ARPACK_TOL: Final[float] = float(os.getenv("ARPACK_TOL", "1e-12"))

    # ========== VALIDATION TOLERANCES ==========
    HERMITICITY_TOL: Final[float] = 1e-12
    DENSITY_TOL: Final[float] = 1e-10
    PROJECTOR_TOL: Final[float] = 1e-10
    GAP_TOL: Final[float] = 1e-12
    ZERO_MEAN_TOL: Final[float] = 1e-12
    BOHR_MERGE_TOL: Final[float] = 1e-9    # relative to ||H0||_2

    # ========== NUMERICAL RADIUS ==========
    NUMERICAL_RADIUS_GRID: Final[int] = int(os.getenv("NUMERICAL_RADIUS_GRID", "256"))
    NUMERICAL_RADIUS_TOL: Final[float] = float(os.getenv("NUMERICAL_RADIUS_TOL", "1e-10"))

    # ========== MONTE CARLO ==========
    MC_CHUNK_SIZE: Final[int] = int(os.getenv("MC_CHUNK_SIZE", "500"))   # samples per RNG stream
    MC_MIN_SAMPLES: Final[int] = 100
    MAX_WORKERS: Final[int] = int(os.getenv("MAX_WORKERS", str(os.cpu_count() or 1)))

    # ========== MIXING TIMES ==========
    MIXING_GRID: Final[int] = int(os.getenv("MIXING_GRID", "200"))
    MIXING_REL_TOL: Final[float] = 1e-3
    MIXING_GRID_START: Final[float] = 0.01  # in units of 1/|Re lambda_2|
    MIXING_HORIZON_GAPS: Final[float] = 10.0

    # ========== TYPICALITY ==========
    REGIME_SLOPE: Final[float] = 0.25
    REGIME_MIN_R2: Final[float] = 0.9
    TSME_MEAN_FACTOR: Final[float] = 10.0   # tol_mean = factor / d
    TSME_VAR_FACTOR: Final[float] = 10.0    # tol_var = factor * ||L_2||^2 / d^2
    FIT_MIN_VARIANCE: Final[float] = 1e-300

    # ========== EXIT CODES ==========
    EXIT_CODES: Final[Dict[str, int]] = {
        "success": 0,
        "unexpected": 1,
        "config": 2,
        "numerical": 3,
        "violation": 4
    }

    # ========== COMMAND REGISTRY ==========
    COMMANDS: Final[List[str]] = [
        "spectrum",
        "typicality",
        "sweep",
        "bound-check",
        "oracle-check",
        "mixing-time"
    ]
    SAMPLING_COMMANDS: Final[List[str]] = ["typicality", "sweep", "mixing-time"]

    def __init__(self):
        """Initialize and validate configuration."""
        self._create_directories()
        self._validate_settings()

    def _create_directories(self):
        """Ensure required directories exist."""
        if self.CACHE_ENABLED:
            Path(self.CACHE_PATH).parent.mkdir(parents=True, exist_ok=True)
        if self.LOG_FILE:
            Path(self.LOG_FILE).parent.mkdir(parents=True, exist_ok=True)

    def _validate_settings(self):
        """Validate critical configuration values."""
        if self.SQLITE_JOURNAL_MODE not in VALID_JOURNAL_MODES:
            raise ValueError(
                f"Invalid SQLITE_JOURNAL_MODE '{self.SQLITE_JOURNAL_MODE}'. "
                f"Must be one of: {VALID_JOURNAL_MODES}"
            )

        if self.SQLITE_SYNC_MODE not in VALID_SYNC_MODES:
            raise ValueError(
                f"Invalid SQLITE_SYNC_MODE '{self.SQLITE_SYNC_MODE}'. "
                f"Must be one of: {VALID_SYNC_MODES}"
            )

        if self.LOG_LEVEL not in VALID_LOG_LEVELS:
            raise ValueError(
                f"Invalid LOG_LEVEL '{self.LOG_LEVEL}'. "
                f"Must be one of: {VALID_LOG_LEVELS}"
            )

        if self.NUMERICAL_RADIUS_GRID < 64:
            raise ValueError("NUMERICAL_RADIUS_GRID must be at least 64")

        if self.MC_CHUNK_SIZE < 1 or self.MAX_WORKERS < 1:
            raise ValueError("MC_CHUNK_SIZE and MAX_WORKERS must be positive")

        for name in ("EIG_CLUSTER_TOL", "EIG_DEFECT_TOL", "STEADY_STATE_TOL", "ARPACK_TOL"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

# Singleton instance
config = Config()
