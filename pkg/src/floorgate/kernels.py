"""Hot per-row kernels.

Each kernel has a compiled loop (``*_loop``) and a vectorised numpy twin
(``*_np``). The public wrappers dispatch on :data:`floorgate._accel.USE_NUMBA`.
Integer kernels are exact, so both paths return identical arrays; the float
bootstrap kernel agrees to rounding.
"""
import numpy as np

from . import _accel
from ._accel import njit
from .rng import GOLDEN, mix_scalar, stream_key

# family codes shared by both paths
BASELINE, UNIFORM_PCT, ABSOLUTE_ADD, MIN_POSITIVE, MIN_ALL, MARGIN_ADD, HYBRID = range(7)

# replay statistic columns
N_STATS = 10
(S_N, S_BASE_VALUE, S_VALUE, S_BASE_FILLED, S_RETAINED, S_BASE_CLICKS, S_CLICKS,
 S_BASE_CONV, S_CONV, S_CHANGED) = range(N_STATS)


# --------------------------------------------------------------------------- candidate floors


@njit
def candidate_floors_loop(code, bid, floor, pct, add, q, gap):
    n = floor.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        f0 = floor[i]
        f = f0
        if code == UNIFORM_PCT:
            f = (f0 * (100 + pct) + 50) // 100
        elif code == ABSOLUTE_ADD:
            f = f0 + add
        elif code == MIN_POSITIVE:
            if f0 > 0 and f0 < q:
                f = q
        elif code == MIN_ALL:
            if f0 < q:
                f = q
        elif code == MARGIN_ADD:
            if bid[i] - f0 >= gap:
                f = f0 + add
        elif code == HYBRID:
            if bid[i] - f0 >= gap and f0 < q:
                f = q
        out[i] = f
    return out


def candidate_floors_np(code, bid, floor, pct, add, q, gap):
    if code == BASELINE:
        return floor.copy()
    if code == UNIFORM_PCT:
        return (floor * (100 + pct) + 50) // 100
    if code == ABSOLUTE_ADD:
        return floor + add
    if code == MIN_POSITIVE:
        return np.where((floor > 0) & (floor < q), q, floor)
    if code == MIN_ALL:
        return np.maximum(floor, q)
    gated = (bid - floor) >= gap
    if code == MARGIN_ADD:
        return np.where(gated, floor + add, floor)
    if code == HYBRID:
        return np.where(gated, np.maximum(floor, q), floor)
    raise ValueError(f"unknown family code {code}")


def candidate_floors(code, bid, floor, pct=0, add=0, q=0, gap=0):
    fn = candidate_floors_loop if _accel.USE_NUMBA else candidate_floors_np
    return fn(int(code), bid, floor, int(pct), int(add), int(q), int(gap))


# --------------------------------------------------------------------------- replay accumulation


@njit
def replay_accumulate_loop(day_idx, n_days, bid, floor, pay, filled, clicked, converted, cand):
    stats = np.zeros((n_days, N_STATS), dtype=np.int64)
    for i in range(bid.shape[0]):
        d = day_idx[i]
        f = cand[i]
        stats[d, S_N] += 1
        if f != floor[i]:
            stats[d, S_CHANGED] += 1
        if filled[i]:
            p = pay[i]
            stats[d, S_BASE_VALUE] += p
            stats[d, S_BASE_FILLED] += 1
            stats[d, S_BASE_CLICKS] += clicked[i]
            stats[d, S_BASE_CONV] += converted[i]
            if bid[i] >= f:
                stats[d, S_VALUE] += p if p > f else f
                stats[d, S_RETAINED] += 1
                stats[d, S_CLICKS] += clicked[i]
                stats[d, S_CONV] += converted[i]
    return stats


def replay_accumulate_np(day_idx, n_days, bid, floor, pay, filled, clicked, converted, cand):
    filled = filled.astype(bool)
    keep = filled & (bid >= cand)
    cols = np.empty((N_STATS, len(bid)), dtype=np.int64)
    cols[S_N] = 1
    cols[S_BASE_VALUE] = np.where(filled, pay, 0)
    cols[S_VALUE] = np.where(keep, np.maximum(pay, cand), 0)
    cols[S_BASE_FILLED] = filled
    cols[S_RETAINED] = keep
    cols[S_BASE_CLICKS] = np.where(filled, clicked, 0)
    cols[S_CLICKS] = np.where(keep, clicked, 0)
    cols[S_BASE_CONV] = np.where(filled, converted, 0)
    cols[S_CONV] = np.where(keep, converted, 0)
    cols[S_CHANGED] = cand != floor
    stats = np.zeros((n_days, N_STATS), dtype=np.int64)
    if len(bid) == 0:
        return stats
    # rows arrive day-sorted, so each day is one contiguous run
    starts = np.flatnonzero(np.r_[True, day_idx[1:] != day_idx[:-1]])
    sums = np.add.reduceat(cols, starts, axis=1)
    np.add.at(stats, day_idx[starts], sums.T)
    return stats


def replay_accumulate(day_idx, n_days, bid, floor, pay, filled, clicked, converted, cand):
    fn = replay_accumulate_loop if _accel.USE_NUMBA else replay_accumulate_np
    return fn(day_idx, int(n_days), bid, floor, pay, filled, clicked, converted, cand)


# --------------------------------------------------------------------------- paired bootstrap


@njit
def bootstrap_means_loop(key, scores, n_boot):
    """Resample rows with replacement ``n_boot`` times; mean of every score column per replicate.

    Replicate ``b`` draws row ``j`` from ``mix(key + (b * n + j) * GOLDEN) >> 11``.
    """
    n, k = scores.shape
    out = np.zeros((n_boot, k))
    golden = np.uint64(0x9E3779B97F4A7C15)
    scale = 1.0 / 9007199254740992.0
    for b in range(n_boot):
        acc = np.zeros(k)
        base = np.uint64(b) * np.uint64(n)
        for j in range(n):
            z = mix_scalar(key + (base + np.uint64(j)) * golden)
            u = np.float64(z >> np.uint64(11)) * scale
            r = int(u * n)
            if r >= n:
                r = n - 1
            for c in range(k):
                acc[c] += scores[r, c]
        for c in range(k):
            out[b, c] = acc[c] / n
    return out


def bootstrap_means_np(key, scores, n_boot):
    n, k = scores.shape
    out = np.zeros((n_boot, k))
    j = np.arange(n, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for b in range(n_boot):
            z = key + (np.uint64(b) * np.uint64(n) + j) * GOLDEN
            z = z + GOLDEN
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
            u = (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
            r = np.minimum((u * n).astype(np.int64), n - 1)
            out[b] = scores[r].sum(axis=0) / n
    return out


def bootstrap_means(seed, stream, scores, n_boot):
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    if scores.ndim == 1:
        scores = scores[:, None]
    key = stream_key(seed, stream)
    fn = bootstrap_means_loop if _accel.USE_NUMBA else bootstrap_means_np
    return fn(key, scores, int(n_boot))
