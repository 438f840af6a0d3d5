import numpy as np
import pytest

from transona import _kernels
from transona.events import Event

from oracles import SOURCES, brute_accumulate, stops_reference
from transona.tma import TifConfig, context_arrays

CODES = ("X:a", "X:b", "X:c", "X:d")


def random_context(rng, n=40):
    t = np.sort(rng.integers(0, 60_000, n))
    out = []
    for ti in t:
        k = int(rng.integers(1, 3))
        out.append(Event(int(ti), SOURCES[int(rng.integers(0, 4))],
                         frozenset(rng.choice(CODES, size=k, replace=False).tolist()), student="1"))
    return out


@pytest.mark.parametrize("binary", [False, True])
@pytest.mark.parametrize("impl", [_kernels.accumulate_counts_numpy, _kernels.accumulate_counts_numba])
def test_accumulate_paths_match_brute_force(impl, binary):
    rng = np.random.default_rng(11)
    tif = TifConfig()
    for _ in range(60):
        events = random_context(rng, int(rng.integers(0, 50)))
        times, windows, members = context_arrays(events, tif, CODES)
        got = impl(times, windows, members, binary) if len(times) else impl(
            times, windows, members.reshape(0, len(CODES)), binary)
        assert np.array_equal(got, brute_accumulate(events, tif, CODES, binary))


def test_numpy_blocking_spans_block_edges():
    rng = np.random.default_rng(1)
    n = 2500
    times = np.sort(rng.integers(0, 400_000, n)).astype(np.int64)
    windows = rng.choice([5000, 10000, 15000, 20000], n).astype(np.int64)
    members = (rng.random((n, 3)) < 0.5).astype(np.uint8)
    for binary in (False, True):
        assert np.array_equal(_kernels.accumulate_counts_numpy(times, windows, members, binary),
                              _kernels.accumulate_counts_numba(times, windows, members, binary))


def test_dispatch_follows_env_flag(monkeypatch):
    calls = []
    monkeypatch.setattr(_kernels, "accumulate_counts_numpy", lambda *a: calls.append("np"))
    monkeypatch.setenv("TRANSONA_DISABLE_NUMBA", "1")
    _kernels.accumulate_counts(np.zeros(0), np.zeros(0), np.zeros((0, 1)))
    assert calls == ["np"]


@pytest.mark.parametrize("impl", [_kernels.stop_segments_numpy, _kernels.stop_segments_numba])
def test_stops_match_reference(impl):
    rng = np.random.default_rng(2)
    for _ in range(30):
        pos, xs, ys = np.zeros(2), [], []
        for _ in range(200):
            if rng.random() < 0.08:
                pos = rng.uniform(-3000, 3000, 2)
            p = pos + rng.normal(0, 300, 2)
            xs.append(p[0])
            ys.append(p[1])
        times = np.arange(200) * 1000
        s, e = impl(times, np.array(xs), np.array(ys), 1000.0, 10_000)
        assert list(zip(s.tolist(), e.tolist())) == stops_reference(times, xs, ys, 1000.0, 10_000)
