"""Counter-based random numbers (Philox4x32-10) keyed by seed and path index.

Every uniform is a pure function of ``(seed, stream, path, draw)``, so a batch
of paths can be generated in any order or split across workers and still give
the same numbers for each path.
"""

from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)

# named streams so independent uses of one seed never share counters
STREAM_JUMPS = 0
STREAM_SETTLEMENT = 1
STREAM_ONSET_CLASS = 2


def philox4x32(counter, key, rounds: int = 10):
    """Vectorised Philox4x32 block function.

    ``counter`` is a sequence of four uint32-valued arrays (broadcastable),
    ``key`` a pair of uint32 scalars. Returns four uint64 arrays holding
    32-bit outputs.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK for c in counter)
    k0 = np.uint64(int(key[0]) & 0xFFFFFFFF)
    k1 = np.uint64(int(key[1]) & 0xFFFFFFFF)
    for _ in range(rounds):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SHIFT, p0 & _MASK
        hi1, lo1 = p1 >> _SHIFT, p1 & _MASK
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


def _key(seed: int) -> tuple[int, int]:
    seed = int(seed)
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF


def uniforms(seed: int, stream: int, paths, draw) -> tuple[np.ndarray, np.ndarray]:
    """Two independent U(0,1) arrays (open interval) for the given paths and draw index."""
    paths = np.asarray(paths, dtype=np.uint64)
    draw = np.broadcast_to(np.asarray(draw, dtype=np.uint64), paths.shape)
    x0, x1, x2, x3 = philox4x32(
        (paths & _MASK, paths >> _SHIFT, draw, np.uint64(stream)), _key(seed)
    )
    scale = 1.0 / 9007199254740992.0  # 2**-53
    u = ((x0 >> np.uint64(5)).astype(np.float64) * 67108864.0 + (x1 >> np.uint64(6)).astype(np.float64) + 0.5) * scale
    v = ((x2 >> np.uint64(5)).astype(np.float64) * 67108864.0 + (x3 >> np.uint64(6)).astype(np.float64) + 0.5) * scale
    return u, v
