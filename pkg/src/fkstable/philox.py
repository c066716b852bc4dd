"""Philox4x64-10 counter-based generator, usable inside compiled kernels.

numpy ships Philox as a BitGenerator, but it cannot be called from nopython
code, so the block function is reproduced here in two forms: a scalar one for
numba and an array one for the numpy backend. Both match
``numpy.random.Philox`` bit for bit (see the tests).

A replicate's stream is addressed by the counter ``(block, replicate, tag, 0)``
under the key ``(seed, stream)``; any replicate is reproducible from
``(seed, stream, replicate)`` alone.
"""
from __future__ import annotations

import numpy as np

from ._backend import njit

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_TWO_M53 = 2.0 ** -53
ROUNDS = 10


@njit
def _mulhilo(a, b):
    a_lo = a & _LO32
    a_hi = a >> _S32
    b_lo = b & _LO32
    b_hi = b >> _S32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    hh = a_hi * b_hi
    mid = (ll >> _S32) + (lh & _LO32) + (hl & _LO32)
    hi = hh + (lh >> _S32) + (hl >> _S32) + (mid >> _S32)
    return hi, a * b


@njit
def philox_block(c0, c1, c2, c3, k0, k1):
    """Ten Philox rounds on one 4x64 counter; returns four 64-bit words."""
    for _ in range(ROUNDS - 1):
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = k0 + _W0
        k1 = k1 + _W1
    hi0, lo0 = _mulhilo(_M0, c0)
    hi1, lo1 = _mulhilo(_M1, c2)
    return hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0


@njit
def to_unit(x):
    """Map a 64-bit word to a double strictly inside (0, 1)."""
    return (float(x >> _S11) + 0.5) * _TWO_M53


def _mulhilo_np(a, b):
    a_lo = a & _LO32
    a_hi = a >> _S32
    b_lo = b & _LO32
    b_hi = b >> _S32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    hh = a_hi * b_hi
    mid = (ll >> _S32) + (lh & _LO32) + (hl & _LO32)
    hi = hh + (lh >> _S32) + (hl >> _S32) + (mid >> _S32)
    return hi, a * b


def philox_block_np(c0, c1, c2, c3, k0, k1):
    """Vectorized Philox block; arguments broadcast as uint64 arrays."""
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) for c in (c0, c1, c2, c3))
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0 = np.uint64(k0)
    k1 = np.uint64(k1)
    with np.errstate(over="ignore"):
        for r in range(ROUNDS):
            hi0, lo0 = _mulhilo_np(_M0, c0)
            hi1, lo1 = _mulhilo_np(_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
            if r < ROUNDS - 1:
                k0 = np.uint64(k0 + _W0)
                k1 = np.uint64(k1 + _W1)
    return c0, c1, c2, c3


def to_unit_np(x):
    return ((x >> _S11).astype(np.float64) + 0.5) * _TWO_M53


def seed_key(seed: int) -> int:
    """Reduce an arbitrary nonnegative integer seed to a 64-bit key word."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    return int(seed) & 0xFFFFFFFFFFFFFFFF


def uniforms(seed: int, stream: int, replicate: int, count: int) -> np.ndarray:
    """First ``count`` unit uniforms of one replicate stream (reference helper)."""
    nblocks = -(-count // 4)
    blocks = np.arange(nblocks, dtype=np.uint64)
    words = philox_block_np(blocks, np.uint64(replicate), np.uint64(0), np.uint64(0),
                            seed_key(seed), stream)
    return to_unit_np(np.stack(words, axis=1).ravel()[:count])
