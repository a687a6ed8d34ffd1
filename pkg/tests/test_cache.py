"""Tests for the SDP solution cache and the atomic file helpers."""
from __future__ import annotations

import numpy as np

from lpv_utils import SolutionCache, atomic_write_text, format_float, write_csv


def test_cache_round_trip(tmp_path):
    cache = SolutionCache(tmp_path / "cache")
    key = SolutionCache.build_key([b"problem", b"data"])
    try:
        assert cache.load(key) is None
        cache.save(key, {"P": np.eye(2), "gamma": np.array(1.5)}, 1.5, "optimal", "CLARABEL")
        entry = cache.load(key)
        assert cache.cache_size_bytes() > 0
        assert cache.delete(key)
        assert not cache.delete(key)
    finally:
        cache.close()
    assert (cache.hits, cache.misses) == (1, 1)
    assert np.array_equal(entry["values"]["P"], np.eye(2))
    assert float(entry["values"]["gamma"]) == 1.5
    assert entry["objective"] == 1.5
    assert entry["status"] == "optimal"
    assert entry["solver"] == "CLARABEL"


def test_cache_persists_across_instances(tmp_path):
    key = SolutionCache.build_key([b"persist"])
    first = SolutionCache(tmp_path / "cache")
    first.save(key, {"x": np.array([1.0, 2.0])}, None, "optimal", "SCS")
    first.close()
    second = SolutionCache(tmp_path / "cache")
    try:
        assert np.array_equal(second.load(key)["values"]["x"], [1.0, 2.0])
    finally:
        second.close()


def test_key_depends_on_every_chunk():
    assert SolutionCache.build_key([b"a", b"b"]) == SolutionCache.build_key([b"a", b"b"])
    assert SolutionCache.build_key([b"a", b"b"]) != SolutionCache.build_key([b"a", b"c"])


def test_atomic_write_creates_parents(tmp_path):
    path = atomic_write_text(tmp_path / "a" / "b" / "out.txt", "content")
    assert path.read_text() == "content"
    atomic_write_text(path, "replaced")
    assert path.read_text() == "replaced"
    assert [p.name for p in path.parent.iterdir()] == ["out.txt"]


def test_floats_round_trip_exactly(tmp_path):
    value = 0.1 + 0.2
    assert float(format_float(value)) == value
    path = write_csv(tmp_path / "rows.csv", ["k", "v"], [[0, value], [1, "text"]])
    lines = path.read_text().splitlines()
    assert lines[0] == "k,v"
    assert float(lines[1].split(",")[1]) == value
    assert lines[2] == "1,text"
