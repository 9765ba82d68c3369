"""Counter-based random streams.

Every draw is a pure function of ``(seed, stream, counter)`` so any row can
be regenerated independently of the others and the streams are identical
across processes, thread counts and languages. The mixer is SplitMix64
(Steele, Lea & Flood 2014) used as a hash:

    mix(z):  z += 0x9E3779B97F4A7C15
             z  = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
             z  = (z ^ (z >> 27)) * 0x94D049BB133111EB
             return z ^ (z >> 31)

    key(seed, stream)      = mix(seed ^ (stream * 0xD1B54A32D192ED03))
    bits(seed, stream, i)  = mix(key(seed, stream) + i * 0x9E3779B97F4A7C15)
    uniform(seed, stream, i) = (bits >> 11) * 2**-53          # in [0, 1)

All arithmetic is modulo 2**64.
"""
import numpy as np

from ._accel import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
STREAM_MULT = np.uint64(0xD1B54A32D192ED03)
_INV_2_53 = 1.0 / 9007199254740992.0

_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)
_U11 = np.uint64(11)


def _mix(z: np.ndarray) -> np.ndarray:
    z = z + GOLDEN
    z = (z ^ (z >> _U30)) * MIX1
    z = (z ^ (z >> _U27)) * MIX2
    return z ^ (z >> _U31)


def stream_key(seed: int, stream: int) -> np.uint64:
    with np.errstate(over="ignore"):
        s = np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
        t = np.array([stream & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
        return _mix(s ^ (t * STREAM_MULT))[0]


def bits(seed: int, stream: int, counters) -> np.ndarray:
    """Raw 64-bit outputs for the given counters."""
    c = np.asarray(counters, dtype=np.uint64)
    key = stream_key(seed, stream)
    with np.errstate(over="ignore"):
        return _mix(key + c * GOLDEN)


def uniform(seed: int, stream: int, counters) -> np.ndarray:
    """Doubles in ``[0, 1)`` with 53 random bits each."""
    return (bits(seed, stream, counters) >> _U11).astype(np.float64) * _INV_2_53


def uniform_range(seed: int, stream: int, n: int, start: int = 0) -> np.ndarray:
    return uniform(seed, stream, np.arange(start, start + n, dtype=np.uint64))


def normal_range(seed: int, stream: int, n: int) -> np.ndarray:
    """Standard normals via Box-Muller on two sub-streams (``2*stream``, ``2*stream+1``)."""
    u1 = uniform_range(seed, 2 * stream, n)
    u2 = uniform_range(seed, 2 * stream + 1, n)
    r = np.sqrt(-2.0 * np.log1p(-u1))
    return r * np.cos(2.0 * np.pi * u2)


@njit
def mix_scalar(z):
    """Scalar SplitMix64 finaliser for use inside compiled kernels (``z`` is uint64)."""
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))
