import json
import logging
import math
from pathlib import Path
from typing import Any, Dict

import numpy as np

from config import config

logger = logging.getLogger(__name__)


def _jsonable(value: Any) -> Any:
    """numpy scalars/arrays, complex numbers and non-finite floats to plain JSON values."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (complex, np.complexfloating)):
        return {"re": _jsonable(float(value.real)), "im": _jsonable(float(value.imag))}
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    return value


class SummaryDocument:
    """JSON summary of one run: metadata plus named result sections."""

    def __init__(self, command: str, config_hash: str, seed: int | None):
        self.data: Dict[str, Any] = {
            "command": command,
            "config_hash": config_hash,
            "seed": seed,
            "tool_version": config.TOOL_VERSION,
            "results": {}
        }

    def add(self, section: str, payload: Any) -> None:
        self.data["results"][section] = _jsonable(payload)
        logger.debug(f"Summary section added: {section}")

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)

    def write(self, path: str) -> Path:
        target = Path(path)
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(self.to_json() + "\n", encoding="utf-8")
        except OSError as e:
            logger.error(f"Failed to write summary {target}: {str(e)}")
            raise
        logger.info(f"Summary written | {target} | sections: {len(self.data['results'])}")
        return target
