import csv
import logging
import math
import threading
from pathlib import Path
from typing import Any, Dict, List, Optional

from config import config

logger = logging.getLogger(__name__)


def format_value(value: Any) -> str:
    """CSV cell text; floats use CSV_DIGITS significant digits, None is empty."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return format(value, f".{config.CSV_DIGITS}g")
    return str(value)


class ResultWriter:
    """Serialized CSV writer with a reproducibility header.

    The header is a block of ``# key: value`` comment lines (command, config
    hash, seed, tool version) followed by the column row. ``write_row`` is
    safe to call from worker threads.
    """

    def __init__(self, path: str, fieldnames: List[str], metadata: Dict[str, Any]):
        self.path = Path(path)
        self.fieldnames = fieldnames
        self.metadata = metadata
        self.lock = threading.Lock()
        self.rows_written = 0
        self._file = None
        self._writer: Optional[csv.DictWriter] = None

    def __enter__(self) -> "ResultWriter":
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._file = open(self.path, "w", newline="", encoding="utf-8")
            for key, value in self.metadata.items():
                self._file.write(f"# {key}: {format_value(value)}\n")
            self._writer = csv.DictWriter(self._file, fieldnames=self.fieldnames, lineterminator="\n")
            self._writer.writeheader()
            logger.debug(f"Opened {self.path} | columns: {len(self.fieldnames)}")
        except OSError as e:
            logger.error(f"Failed to open output {self.path}: {str(e)}")
            raise
        return self

    def write_row(self, row: Dict[str, Any]) -> None:
        with self.lock:
            self._writer.writerow({k: format_value(row.get(k)) for k in self.fieldnames})
            self.rows_written += 1

    def write_rows(self, rows: List[Dict[str, Any]]) -> None:
        with self.lock:
            for row in rows:
                self._writer.writerow({k: format_value(row.get(k)) for k in self.fieldnames})
                self.rows_written += 1

    def __exit__(self, exc_type, exc, tb) -> None:
        if self._file:
            self._file.close()
        logger.info(f"Wrote {self.rows_written} rows to {self.path}")


def read_body(path: str) -> List[Dict[str, str]]:
    """Rows of a result file, skipping the comment header."""
    with open(path, newline="", encoding="utf-8") as f:
        lines = [line for line in f if not line.startswith("#")]
    return list(csv.DictReader(lines))
