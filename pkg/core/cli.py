import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from config import config
from .database import SpectrumCache
from .errors import ConfigError, TypicalityError
from .models import CliArgs, ErrorReport, RunConfig, describe_validation_error
from .service import TypicalityService

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lindblad-typicality",
        description="Spectral decomposition, overlap statistics and mixing times of Lindblad generators"
    )
    parser.add_argument("--config", required=True, help="Path to the JSON run configuration")
    parser.add_argument("--seed", type=int, help="Override the configured seed")
    parser.add_argument("--output", help="Override the CSV output path")
    parser.add_argument("--threads", type=int, help="Worker threads (default: MAX_WORKERS)")
    parser.add_argument("--no-cache", action="store_true", help="Skip the spectrum cache")
    parser.add_argument("--quiet", action="store_true", help="Only log warnings and errors")
    return parser


def load_run_config(path: str, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Parse and validate a run configuration; every failure becomes a ConfigError naming the key."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}", key="config")
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON at line {e.lineno}: {e.msg}", key="config")

    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object", key="config")
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})

    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(describe_validation_error(e))


def config_hash(run: RunConfig) -> str:
    """sha256 of the canonical JSON form of the validated configuration."""
    canonical = json.dumps(run.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _report(e: Exception) -> ErrorReport:
    if isinstance(e, TypicalityError):
        allowed = {"commands": config.COMMANDS} if isinstance(e, ConfigError) else None
        return ErrorReport(error=e.error_type, details=str(e), code=e.exit_code, allowed_values=allowed)
    return ErrorReport(error="Unexpected Error", details=str(e), code=config.EXIT_CODES["unexpected"])


def parse_args(argv: Optional[List[str]] = None) -> CliArgs:
    try:
        return CliArgs.model_validate(vars(build_parser().parse_args(argv)))
    except ValidationError as e:
        raise ConfigError(describe_validation_error(e))


def run(argv: Optional[List[str]] = None) -> int:
    cache = None
    try:
        args = parse_args(argv)
        if args.quiet:
            logging.getLogger().setLevel(logging.WARNING)
        run_config = load_run_config(args.config, {"seed": args.seed, "output": args.output})
        digest = config_hash(run_config)
        if config.CACHE_ENABLED and not args.no_cache:
            cache = SpectrumCache(config.CACHE_PATH)
        workers = args.threads or run_config.threads or config.MAX_WORKERS
        logger.info(f"Run {run_config.command} | config: {args.config} | hash: {digest[:12]} | seed: {run_config.seed}")
        TypicalityService(run_config, digest, cache=cache, max_workers=workers).execute()
        return config.EXIT_CODES["success"]
    except Exception as e:
        report = _report(e)
        report.log_error()
        if report.code == config.EXIT_CODES["unexpected"]:
            logger.debug("Unexpected failure", exc_info=True)
        print(report.model_dump_json(exclude_none=True), file=sys.stderr)
        return report.code
    finally:
        if cache:
            cache.close_all()
