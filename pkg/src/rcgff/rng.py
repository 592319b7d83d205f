"""Counter-based random numbers.

Two layers live here:

* a vectorized Philox4x32-10 block cipher used to attach one random draw to
  each lattice edge, keyed by the edge's coordinates rather than by
  generation order, so a field regenerates bit-identically and a given edge
  keeps its value when the box grows;
* numpy ``Generator`` substreams (Philox again) for everything sequential:
  walk replicas, field samples, Monte Carlo batches.  Substream ``i`` of a
  master seed is independent of scheduling and worker count.
"""

from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_LO32 = np.uint64(0xFFFFFFFF)

# Multiplier for folding extra coordinates into one counter word (d > 4).
_FOLD = np.uint32(0x9E3779B1)


def philox4x32(counter: np.ndarray, key: np.ndarray) -> np.ndarray:
    """Apply Philox4x32-10 to an (n, 4) uint32 counter block.

    ``key`` is (2,) or (n, 2) uint32.  Returns an (n, 4) uint32 array.
    """
    c = [counter[:, j].astype(np.uint64) for j in range(4)]
    key = np.asarray(key, dtype=np.uint32)
    if key.ndim == 1:
        k0 = np.uint32(key[0])
        k1 = np.uint32(key[1])
    else:
        k0 = key[:, 0].copy()
        k1 = key[:, 1].copy()
    with np.errstate(over="ignore"):
        for _ in range(10):
            p0 = _M0 * c[0]
            p1 = _M1 * c[2]
            hi0, lo0 = p0 >> np.uint64(32), p0 & _LO32
            hi1, lo1 = p1 >> np.uint64(32), p1 & _LO32
            c = [
                hi1 ^ c[1] ^ np.uint64(k0),
                lo1,
                hi0 ^ c[3] ^ np.uint64(k1),
                lo0,
            ]
            k0 = np.uint32(k0 + _W0)
            k1 = np.uint32(k1 + _W1)
    out = np.empty((counter.shape[0], 4), dtype=np.uint32)
    for j in range(4):
        out[:, j] = c[j].astype(np.uint32)
    return out


def _seed_key(seed: int) -> np.ndarray:
    s = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    return np.array([s & _LO32, s >> np.uint64(32)], dtype=np.uint32)


def edge_counters(coords: np.ndarray, axis: np.ndarray) -> np.ndarray:
    """Pack edge coordinates and direction into Philox counters.

    ``coords`` is (n, d) nonnegative ints, ``axis`` is (n,) ints.  The first
    three coordinates occupy one 32-bit word each; coordinates beyond the
    third are folded into word 2 with a multiplicative mix.  Word 3 carries
    the edge direction.
    """
    coords = np.asarray(coords)
    n, d = coords.shape
    ctr = np.zeros((n, 4), dtype=np.uint32)
    ctr[:, 0] = coords[:, 0].astype(np.uint32)
    if d > 1:
        ctr[:, 1] = coords[:, 1].astype(np.uint32)
    if d > 2:
        w2 = coords[:, 2].astype(np.uint32)
        for j in range(3, d):
            w2 = np.uint32(w2 * _FOLD) + coords[:, j].astype(np.uint32)
        ctr[:, 2] = w2
    ctr[:, 3] = np.asarray(axis, dtype=np.uint32)
    return ctr


def edge_uniforms(coords: np.ndarray, axis: np.ndarray, seed: int) -> np.ndarray:
    """One uniform (0, 1) draw per edge, a pure function of (seed, edge)."""
    out = philox4x32(edge_counters(coords, axis), _seed_key(seed))
    u64 = out[:, 0].astype(np.uint64) | (out[:, 1].astype(np.uint64) << np.uint64(32))
    # (u + 1) / (2^64 + 2) keeps draws strictly inside (0, 1).
    return (u64.astype(np.float64) + 1.0) / 18446744073709551618.0


def substream(seed: int, stream: int) -> np.random.Generator:
    """Independent generator for replica/sample index ``stream``."""
    bits = np.random.Philox(key=np.array([seed & 0xFFFFFFFFFFFFFFFF, stream],
                                         dtype=np.uint64))
    return np.random.Generator(bits)
