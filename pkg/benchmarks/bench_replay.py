#!/usr/bin/env python3
"""Compare the numba kernels with their pure-numpy twins.

Usage::

    python benchmarks/bench_replay.py --rows 1000000 --repeat 5

Every pair is first checked for identical output, then timed after a warm-up
call so JIT compilation is excluded.
"""
import argparse
import time

import numpy as np

from floorgate import _accel, kernels
from floorgate.panel import floor_quantiles
from floorgate.policy import build_catalog
from floorgate.replay import replay_all
from floorgate.rng import stream_key
from floorgate.synthgen import GenConfig, generate_panel


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--boot", type=int, default=200)
    args = ap.parse_args()

    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    panel = generate_panel(GenConfig(n_rows=args.rows, n_days=7, seed=3))
    catalog = build_catalog(floor_quantiles(panel, "positive_floors"),
                            floor_quantiles(panel, "all_floors"))
    spec = catalog["P18"]
    c = panel.columns
    q = catalog.quantile_value(spec)
    _, day_idx = np.unique(c["day"], return_inverse=True)
    day_idx = day_idx.astype(np.int64)
    n_days = int(day_idx.max()) + 1
    cand = kernels.candidate_floors_np(spec.code, c["bid"], c["floor"], spec.pct, spec.add, q,
                                       spec.gap)
    scores = np.random.default_rng(0).normal(size=(min(args.rows, 200_000), 6))
    key = stream_key(1, 2)

    pairs = {
        "candidate_floors": (
            lambda: kernels.candidate_floors_loop(spec.code, c["bid"], c["floor"], spec.pct,
                                                  spec.add, q, spec.gap),
            lambda: kernels.candidate_floors_np(spec.code, c["bid"], c["floor"], spec.pct,
                                                spec.add, q, spec.gap)),
        "replay_accumulate": tuple(
            (lambda f=f: f(day_idx, n_days, c["bid"], c["floor"], c["pay"], c["filled"],
                           c["clicked"], c["converted"], cand))
            for f in (kernels.replay_accumulate_loop, kernels.replay_accumulate_np)),
        f"bootstrap_means (B={args.boot}, n={len(scores)})": (
            lambda: kernels.bootstrap_means_loop(key, scores, args.boot),
            lambda: kernels.bootstrap_means_np(key, scores, args.boot)),
    }

    print(f"rows={args.rows:,}  repeat={args.repeat}  (best-of timings)")
    print(f"{'kernel':<36}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for name, (fast, slow) in pairs.items():
        a, b = fast(), slow()
        same = np.array_equal(a, b) if a.dtype.kind in "iu" else np.allclose(a, b, rtol=0,
                                                                             atol=1e-9)
        if not same:
            raise SystemExit(f"{name}: numba and numpy outputs differ")
        tf, ts = best_of(fast, args.repeat), best_of(slow, args.repeat)
        print(f"{name:<36}{tf * 1e3:>12.2f}{ts * 1e3:>12.2f}{ts / tf:>9.1f}x")

    timings = {}
    results = {}
    for use in (True, False):
        _accel.USE_NUMBA = use
        results[use] = replay_all(panel, catalog, shards=4)
        timings[use] = best_of(lambda: replay_all(panel, catalog, shards=4), args.repeat)
    _accel.USE_NUMBA = True
    assert all(results[True][p].to_dict() == results[False][p].to_dict() for p in catalog.ids)
    print(f"{'replay_all (19 policies, 4 shards)':<36}{timings[True] * 1e3:>12.2f}"
          f"{timings[False] * 1e3:>12.2f}{timings[False] / timings[True]:>9.1f}x")


if __name__ == "__main__":
    main()
