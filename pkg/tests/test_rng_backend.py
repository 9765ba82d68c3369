import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from floorgate import _accel, kernels, rng
from floorgate.panel import floor_quantiles
from floorgate.policy import build_catalog
from floorgate.replay import replay_all

needs_numba = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")


def test_splitmix_reference_vector():
    # first outputs of the reference SplitMix64 generator started from state 0
    state = np.array([0], dtype=np.uint64)
    with np.errstate(over="ignore"):
        first = rng._mix(state)[0]
        second = rng._mix(state + rng.GOLDEN)[0]
    assert int(first) == 0xE220A8397B1DCDAF
    assert int(second) == 0x6E789E6AA1B965F4


def test_counter_access_is_random_access():
    whole = rng.uniform_range(9, 3, 1000)
    assert np.array_equal(whole[500:], rng.uniform_range(9, 3, 500, start=500))
    assert np.all((whole >= 0) & (whole < 1))
    assert not np.array_equal(whole, rng.uniform_range(9, 4, 1000))


def test_normal_moments():
    z = rng.normal_range(1, 7, 200_000)
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1) < 0.01


@needs_numba
def test_scalar_mix_matches_vector():
    zs = rng.bits(3, 5, np.arange(50))
    for z in zs:
        with np.errstate(over="ignore"):
            assert rng.mix_scalar(np.uint64(z)) == rng._mix(np.array([z], dtype=np.uint64))[0]


@needs_numba
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 7), st.integers(0, 10**6), st.integers(0, 300), st.integers(0, 60),
       st.integers(0, 5000), st.integers(0, 200), st.integers(1, 400))
def test_candidate_floor_twins(code, seed, pct, add, q, gap, n):
    r = np.random.default_rng(seed)
    floor = r.integers(0, 5000, n)
    bid = floor + r.integers(-50, 500, n)
    code = min(code, kernels.HYBRID)
    a = kernels.candidate_floors_loop(code, bid, floor, pct, add, q, gap)
    b = kernels.candidate_floors_np(code, bid, floor, pct, add, q, gap)
    assert np.array_equal(a, b)


@needs_numba
def test_replay_accumulate_twins(small_panel, small_catalog):
    c = small_panel.columns
    days = np.unique(c["day"])
    idx = np.searchsorted(days, c["day"]).astype(np.int64)
    for spec in small_catalog:
        cand = kernels.candidate_floors_np(spec.code, c["bid"], c["floor"], spec.pct, spec.add,
                                           small_catalog.quantile_value(spec), spec.gap)
        args = (idx, len(days), c["bid"], c["floor"], c["pay"], c["filled"], c["clicked"],
                c["converted"], cand)
        assert np.array_equal(kernels.replay_accumulate_loop(*args),
                              kernels.replay_accumulate_np(*args))


@needs_numba
def test_bootstrap_twins():
    scores = np.random.default_rng(1).normal(size=(777, 3))
    key = rng.stream_key(5, 602)
    a = kernels.bootstrap_means_loop(key, scores, 40)
    b = kernels.bootstrap_means_np(key, scores, 40)
    assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_bootstrap_resamples_rows():
    # one-hot scores: each replicate mean counts how often each row was drawn
    n = 50
    out = kernels.bootstrap_means(1, 2, np.eye(n), 200) * n
    assert np.allclose(out, np.round(out)) and np.allclose(out.sum(axis=1), n)


@needs_numba
def test_replay_backend_switch(small_panel, small_catalog, monkeypatch):
    monkeypatch.setattr(_accel, "USE_NUMBA", True)
    fast = replay_all(small_panel, small_catalog, shards=3)
    monkeypatch.setattr(_accel, "USE_NUMBA", False)
    slow = replay_all(small_panel, small_catalog, shards=3)
    assert {k: v.to_dict() for k, v in fast.items()} == {k: v.to_dict() for k, v in slow.items()}


def test_env_flag_selects_numpy():
    env = dict(os.environ, FLOORGATE_NUMBA="0")
    res = subprocess.run([sys.executable, "-c", "import floorgate; print(floorgate.backend())"],
                         capture_output=True, text=True, env=env)
    assert res.stdout.strip() == "numpy"
