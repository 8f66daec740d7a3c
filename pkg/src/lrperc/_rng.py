"""SplitMix64 mixing, usable from Python and from numba kernels."""
from __future__ import annotations

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

_GOLDEN = np.uint64(GOLDEN)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


def mix64(z: int) -> int:
    """SplitMix64 finalizer on Python ints."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Independent 64-bit child seed for stream ``index``; order-insensitive."""
    return mix64(mix64(seed & MASK64) ^ mix64((index + 1) * GOLDEN))


@njit(cache=True, inline="always")
def nb_mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def nb_next(state):
    """Advance a SplitMix64 state; returns (new_state, output)."""
    state = state + _GOLDEN
    return state, nb_mix64(state)


@njit(cache=True, inline="always")
def nb_unit_open(z):
    """Map 64 random bits to [0, 1)."""
    return float(z >> _S11) * _INV53


@njit(cache=True, inline="always")
def nb_unit_closed(z):
    """Map 64 random bits to (0, 1]; safe for log()."""
    return (float(z >> _S11) + 1.0) * _INV53


@njit(cache=True, inline="always")
def nb_absorb(h, value):
    """Fold a signed 64-bit integer into hash state ``h``."""
    return nb_mix64(h ^ (np.uint64(value) + _GOLDEN))
