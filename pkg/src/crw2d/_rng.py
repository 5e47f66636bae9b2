"""Counter-based random streams for the numba kernels.

Every replica owns an independent SplitMix64 stream. The ``k``-th output of
the stream for ``seed`` is ``mix64(seed + k * GOLDEN)``, so a stream is fully
determined by its starting state and replicas can be run in any order, on
any number of threads, with identical results.

Per-replica seeds are derived with the published mixing function::

    replica_seed(master, r) = mix64(mix64(master) ^ mix64(r * GOLDEN + GOLDEN))

which is also exposed to Python so that external workers can agree on it.
"""

from __future__ import annotations

import math

import numba
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_MASK32 = np.uint64(0xFFFFFFFF)
_INV53 = 1.0 / 9007199254740992.0
MASK64 = (1 << 64) - 1


@numba.njit(cache=True, nogil=True, inline="always")
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@numba.njit(cache=True, nogil=True)
def _replica_seed(master, index):
    return mix64(mix64(master) ^ mix64(index * GOLDEN + GOLDEN))


def replica_seed(master_seed: int, index: int) -> int:
    """Seed of replica ``index`` under ``master_seed`` (both taken mod 2**64)."""
    return int(_replica_seed(np.uint64(master_seed & MASK64), np.uint64(index & MASK64)))


@numba.njit(cache=True, nogil=True, inline="always")
def next_u64(state):
    """Advance a one-element uint64 state array and return the next output."""
    state[0] += GOLDEN
    return mix64(state[0])


@numba.njit(cache=True, nogil=True, inline="always")
def uniform(state):
    """Uniform double in [0, 1)."""
    return float(next_u64(state) >> _S11) * _INV53


@numba.njit(cache=True, nogil=True, inline="always")
def exponential(state, rate):
    return -math.log1p(-uniform(state)) / rate


@numba.njit(cache=True, nogil=True, inline="always")
def bounded(state, bits32, m):
    """Unbiased integer in [0, m) from a 32-bit draw, m < 2**32.

    Lemire's multiply-shift with rejection; extra draws are taken from
    ``state`` only on rejection.
    """
    mm = np.uint64(m)
    prod = bits32 * mm
    low = prod & _MASK32
    if low < mm:
        threshold = (np.uint64(0x100000000) - mm) % mm
        while low < threshold:
            bits32 = next_u64(state) >> _S32
            prod = bits32 * mm
            low = prod & _MASK32
    return np.int64(prod >> _S32)


@numba.njit(cache=True, nogil=True)
def standard_normal(state):
    # Box-Muller, one variate per call
    u1 = 1.0 - uniform(state)
    u2 = uniform(state)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@numba.njit(cache=True, nogil=True)
def gamma_int(state, shape, rate):
    """Gamma(shape, rate) variate for shape >= 1 (Marsaglia-Tsang)."""
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = standard_normal(state)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = uniform(state)
        if u < 1.0 - 0.0331 * x * x * x * x:
            return d * v / rate
        if math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
            return d * v / rate


def new_state(seed: int) -> np.ndarray:
    return np.array([seed & MASK64], dtype=np.uint64)
