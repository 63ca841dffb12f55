import io
import sqlite3
import threading
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import List, Dict, Optional, Iterator, Any

import numpy as np

from config import config
from .lindblad import Normalization, SpectralDecomposition
from .matcore import hs_norms


def _to_blob(array: np.ndarray) -> bytes:
    """.npy bytes: versioned header, dtype, shape and row-major data."""
    buffer = io.BytesIO()
    np.save(buffer, np.ascontiguousarray(array), allow_pickle=False)
    return buffer.getvalue()


def _from_blob(blob: bytes) -> np.ndarray:
    return np.load(io.BytesIO(blob), allow_pickle=False)


class SpectrumCache:
    """SQLite store of spectral decompositions keyed by (model hash, normalization, format version)."""

    def __init__(self, db_path: str = config.CACHE_PATH) -> None:
        self.db_path = Path(db_path)
        self.connection_pool: List[sqlite3.Connection] = []
        self.pool_lock = threading.Lock()
        self._init_db()
        logging.debug(f"Spectrum cache initialized at {self.db_path}")

    def _init_db(self) -> None:
        """Initialize the schema with strict typing."""
        with self._get_connection() as conn:
            try:
                conn.execute(f"PRAGMA journal_mode={config.SQLITE_JOURNAL_MODE}")
                conn.execute(f"PRAGMA synchronous={config.SQLITE_SYNC_MODE}")

                conn.execute("""
                CREATE TABLE IF NOT EXISTS spectra (
                    model_hash TEXT NOT NULL CHECK(length(model_hash) = 64),
                    normalization TEXT NOT NULL CHECK(normalization IN ('TraceNorm', 'HSNorm')),
                    format_version INTEGER NOT NULL,
                    label TEXT NOT NULL,
                    d INTEGER NOT NULL CHECK(d >= 1),
                    n_modes INTEGER NOT NULL,
                    complete INTEGER NOT NULL,
                    gap REAL NOT NULL,
                    max_condition REAL NOT NULL,
                    eigenvalues BLOB NOT NULL,
                    right_modes BLOB NOT NULL,
                    left_modes BLOB NOT NULL,
                    cluster_ids BLOB NOT NULL,
                    created_at TEXT DEFAULT CURRENT_TIMESTAMP,
                    PRIMARY KEY (model_hash, normalization, format_version)
                ) STRICT;
                """)
                logging.debug("Cache schema verified/created")

            except sqlite3.Error as e:
                logging.error(f"Cache initialization failed: {str(e)}")
                raise

    @contextmanager
    def _get_connection(self) -> Iterator[sqlite3.Connection]:
        """Thread-safe connection pool with health checks."""
        conn = None
        try:
            with self.pool_lock:
                if self.connection_pool:
                    conn = self.connection_pool.pop()
                    try:
                        conn.execute("SELECT 1")
                    except sqlite3.Error:
                        conn.close()
                        conn = sqlite3.connect(self.db_path, isolation_level=None, check_same_thread=False)
                        logging.debug("Created new connection (pooled was stale)")
                else:
                    conn = sqlite3.connect(self.db_path, isolation_level=None, check_same_thread=False)
                    logging.debug("Created new connection (pool empty)")
            yield conn
        except Exception as e:
            logging.error(f"Cache connection failed: {str(e)}")
            if conn:
                conn.close()
                conn = None
            raise
        finally:
            if conn:
                with self.pool_lock:
                    self.connection_pool.append(conn)

    @contextmanager
    def transaction(self) -> Iterator[sqlite3.Connection]:
        """Atomic transaction with rollback protection."""
        with self._get_connection() as conn:
            conn.execute("BEGIN IMMEDIATE")
            try:
                yield conn
                conn.execute("COMMIT")
            except Exception as e:
                conn.execute("ROLLBACK")
                logging.error(f"Cache transaction rolled back: {str(e)}")
                raise

    # === Decompositions ===
    def put(self, model_hash: str, decomp: SpectralDecomposition) -> None:
        """Store or replace the decomposition for this model and normalization."""
        with self.transaction() as conn:
            conn.execute(
                """INSERT OR REPLACE INTO spectra
                (model_hash, normalization, format_version, label, d, n_modes, complete, gap,
                 max_condition, eigenvalues, right_modes, left_modes, cluster_ids)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)""",
                (
                    model_hash,
                    Normalization(decomp.normalization).value,
                    config.CACHE_FORMAT_VERSION,
                    decomp.label,
                    decomp.d,
                    decomp.n_modes,
                    int(decomp.complete),
                    decomp.gap,
                    float(decomp.condition_numbers.max()),
                    _to_blob(decomp.eigenvalues),
                    _to_blob(decomp.right_modes),
                    _to_blob(decomp.left_modes),
                    _to_blob(decomp.cluster_ids)
                )
            )
        logging.debug(f"Cached spectrum {model_hash[:12]} | {decomp.label} | modes: {decomp.n_modes}")

    def get(self, model_hash: str, normalization: Normalization) -> Optional[SpectralDecomposition]:
        """Cached decomposition or None when absent or written by another format version."""
        with self._get_connection() as conn:
            row = conn.execute(
                """SELECT label, d, complete, eigenvalues, right_modes, left_modes, cluster_ids
                FROM spectra WHERE model_hash = ? AND normalization = ? AND format_version = ?""",
                (model_hash, Normalization(normalization).value, config.CACHE_FORMAT_VERSION)
            ).fetchone()

        if not row:
            logging.debug(f"Cache miss for {model_hash[:12]}")
            return None

        label, d, complete, eigenvalues, right_blob, left_blob, cluster_blob = row
        right = _from_blob(right_blob)
        left = _from_blob(left_blob)
        logging.debug(f"Cache hit for {model_hash[:12]} | {label}")
        return SpectralDecomposition(
            d=d,
            eigenvalues=_from_blob(eigenvalues),
            right_modes=right,
            left_modes=left,
            condition_numbers=hs_norms(left) * hs_norms(right),
            stationary_state=right[0].copy(),
            normalization=Normalization(normalization),
            cluster_ids=_from_blob(cluster_blob),
            complete=bool(complete),
            label=label
        )

    def list_entries(self) -> List[Dict[str, Any]]:
        """Index rows (no array payloads), newest first."""
        with self._get_connection() as conn:
            cursor = conn.execute(
                """SELECT model_hash, label, d, normalization, format_version, n_modes, complete,
                gap, max_condition, created_at FROM spectra ORDER BY created_at DESC"""
            )
            columns = [c[0] for c in cursor.description]
            return [dict(zip(columns, row)) for row in cursor.fetchall()]

    def purge(self) -> int:
        """Delete every cached spectrum; returns the number of rows removed."""
        with self.transaction() as conn:
            removed = conn.execute("DELETE FROM spectra").rowcount
        logging.info(f"Purged {removed} cached spectra")
        return removed

    def close_all(self) -> None:
        """Cleanup connections with error handling."""
        with self.pool_lock:
            for conn in self.connection_pool:
                try:
                    conn.close()
                except sqlite3.Error:
                    pass
            self.connection_pool.clear()
            logging.debug("All cache connections closed")
