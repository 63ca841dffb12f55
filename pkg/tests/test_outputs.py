import json
from dataclasses import replace

import numpy as np
import pytest

from core.database import SpectrumCache
from core.lindblad import Normalization
from core.summaries import SummaryDocument
from core.writers import ResultWriter, format_value, read_body


def test_format_value():
    assert format_value(None) == ""
    assert format_value(0.1) == "0.10000000000000001"
    assert float(format_value(1 / 3)) == 1 / 3
    assert format_value(True) == "true"
    assert format_value(7) == "7"


def test_result_writer_header_and_rows(tmp_path):
    path = tmp_path / "out" / "rows.csv"
    with ResultWriter(str(path), ["mode", "value"], {"command": "spectrum", "seed": 4}) as writer:
        writer.write_row({"mode": 2, "value": -0.5})
        writer.write_rows([{"mode": 3, "value": None}])
    lines = path.read_text().splitlines()
    assert lines[:3] == ["# command: spectrum", "# seed: 4", "mode,value"]
    assert read_body(str(path)) == [{"mode": "2", "value": "-0.5"}, {"mode": "3", "value": ""}]


def test_summary_document(tmp_path):
    summary = SummaryDocument("typicality", "abc", 5)
    summary.add("values", {"mean": 1 - 2j, "array": np.arange(2), "flag": np.bool_(True), "inf": float("inf")})
    data = json.loads(summary.write(str(tmp_path / "s.summary.json")).read_text())
    assert data["results"]["values"] == {"mean": {"re": 1.0, "im": -2.0}, "array": [0, 1], "flag": True, "inf": "inf"}
    assert data["seed"] == 5


def test_spectrum_cache_round_trip(tmp_path, tfim_model, tfim):
    cache = SpectrumCache(str(tmp_path / "spectra.db"))
    try:
        key = tfim_model.fingerprint()
        assert cache.get(key, Normalization.TRACE) is None
        cache.put(key, tfim)
        cached = cache.get(key, Normalization.TRACE)
        assert np.array_equal(cached.eigenvalues, tfim.eigenvalues)
        assert np.array_equal(cached.left_modes, tfim.left_modes)
        assert np.allclose(cached.condition_numbers, tfim.condition_numbers)
        assert cached.cluster_size(2) == tfim.cluster_size(2)
        assert cache.get(key, Normalization.HS) is None

        entries = cache.list_entries()
        assert len(entries) == 1
        assert entries[0]["d"] == 4
        assert cache.purge() == 1
        assert cache.list_entries() == []
    finally:
        cache.close_all()


def test_fingerprint_ignores_label(tfim_model):
    assert replace(tfim_model, label="other").fingerprint() == tfim_model.fingerprint()
