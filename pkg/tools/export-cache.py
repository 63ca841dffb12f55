#!/usr/bin/env python3
"""
Lists the cached spectral decompositions and exports the index to CSV
"""

import csv
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from config import config  # noqa: E402
from core.database import SpectrumCache  # noqa: E402

CSV_OUTPUT = Path('spectra_index.csv')


def save_to_csv(entries: list[dict], output_path: Path):
    """Saves cache index rows to CSV"""
    if not entries:
        print("No cached spectra to export")
        return

    with open(output_path, 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=entries[0].keys())
        writer.writeheader()
        writer.writerows(entries)
    print(f"Saved {len(entries)} cached spectra to {output_path}")


if __name__ == '__main__':
    if not Path(config.CACHE_PATH).exists():
        raise FileNotFoundError(f"Cache not found at {config.CACHE_PATH}")

    cache = SpectrumCache(config.CACHE_PATH)
    try:
        if '--purge' in sys.argv:
            print(f"Removed {cache.purge()} cached spectra")
        else:
            save_to_csv(cache.list_entries(), CSV_OUTPUT)
    finally:
        cache.close_all()
