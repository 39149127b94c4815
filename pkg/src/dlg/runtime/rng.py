"""Counter-based random numbers.

Every value is a pure function of (seed, call site, invocation count at that
site, global linear element index), so a block of a distributed array can be
generated on its own rank and still match the sequential run exactly.
"""
from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _stream_key(seed: int, site: int, invocation: int) -> np.uint64:
    k = np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    with np.errstate(over="ignore"):
        for part in (site, invocation):
            k = _mix(k + _GOLDEN) ^ np.uint64(part & 0xFFFFFFFFFFFFFFFF)
        return _mix(k)[0]


def raw_bits(seed: int, site: int, invocation: int, start: int, count: int) -> np.ndarray:
    idx = np.arange(start, start + count, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(_stream_key(seed, site, invocation) + (idx + np.uint64(1)) * _GOLDEN)


def uniform(seed: int, site: int, invocation: int, start: int, count: int) -> list:
    """Doubles in [0, 1) for global indices ``start .. start+count-1``."""
    with np.errstate(over="ignore"):
        bits = raw_bits(seed, site, invocation, start, count)
    return ((bits >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)).tolist()


def normal(seed: int, site: int, invocation: int, start: int, count: int) -> list:
    """Standard normals by Box-Muller on two uniforms per element."""
    with np.errstate(over="ignore"):
        idx = np.arange(start, start + count, dtype=np.uint64)
        key = _stream_key(seed, site, invocation)
        u1 = _mix(key + (np.uint64(2) * idx + np.uint64(1)) * _GOLDEN)
        u2 = _mix(key + (np.uint64(2) * idx + np.uint64(2)) * _GOLDEN)
    a = ((u1 >> np.uint64(11)).astype(np.float64) + 1.0) * (1.0 / 9007199254740992.0)
    b = (u2 >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
    return (np.sqrt(-2.0 * np.log(a)) * np.cos(2.0 * np.pi * b)).tolist()
