"""Counter-based, key-addressed random numbers.

Every random quantity in the package is a pure function of a 64-bit key.
Environment kernels are keyed by ``(seed, site, draw index)`` and walk steps
by ``(walk seed, time)``.  Nothing depends on evaluation order, so replicas can
be evaluated in any order (or concurrently) and still agree bit for bit.

The mixer is the splitmix64 finalizer; words are folded in with a
boost-style combine followed by a full mix.
"""

from __future__ import annotations

import numba as nb
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1
_TWO_M53 = 1.0 / 9007199254740992.0

# Domain-separation tags.  Streams with different tags never collide by
# construction of the key, even with identical seeds and coordinates.
TAG_ENV = 1
TAG_WALK = 2
TAG_REPLICA = 3
TAG_SAMPLE = 4
TAG_AUX = 5


@nb.njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> nb.uint64(30))) * _M1
    z = (z ^ (z >> nb.uint64(27))) * _M2
    return z ^ (z >> nb.uint64(31))


@nb.njit(cache=True, inline="always")
def _combine(h, w):
    return mix64(h ^ (mix64(w + GOLDEN) + (h << nb.uint64(6)) + (h >> nb.uint64(2))))


@nb.njit(cache=True, inline="always")
def hash6(seed, tag, a, b, c, d):
    """Hash a seed, a tag and four signed integer words into 64 bits."""
    h = mix64(nb.uint64(seed) + GOLDEN)
    h = _combine(h, nb.uint64(tag))
    h = _combine(h, nb.uint64(a))
    h = _combine(h, nb.uint64(b))
    h = _combine(h, nb.uint64(c))
    h = _combine(h, nb.uint64(d))
    return h


_G2 = np.uint64(0xD1B54A32D192ED03)
_G3 = np.uint64(0xAEF17502108EF2D9)


@nb.njit(cache=True, inline="always")
def site_key(seed, tag):
    """Per-(seed, tag) key; loop-invariant in simulations."""
    return mix64(mix64(nb.uint64(seed) + GOLDEN) ^ (nb.uint64(tag) * _G2))


@nb.njit(cache=True, inline="always")
def site_hash(key, x, y, z):
    """Hash of a lattice site under ``key``: one mix per coordinate, so the
    latency on a walk's dependency chain stays short.  Each stage is a
    bijection of the previous state for fixed input word."""
    h = mix64(key + nb.uint64(x) * GOLDEN)
    h = mix64(h + nb.uint64(y) * _G2)
    return mix64(h + nb.uint64(z) * _G3)


@nb.njit(cache=True, inline="always")
def draw_uniform(site_h, j):
    """The ``j``-th uniform attached to a hashed site."""
    return to_unit(mix64(site_h ^ (nb.uint64(j + 1) * GOLDEN)))


@nb.njit(cache=True, inline="always")
def to_unit(h):
    """Map 64 random bits to a double strictly inside (0, 1)."""
    return ((h >> nb.uint64(11)) + 0.5) * _TWO_M53


@nb.njit(cache=True, inline="always")
def stream_uniform(seed, counter):
    """The ``counter``-th output of the splitmix64 stream started at ``seed``."""
    return to_unit(mix64(nb.uint64(seed) + nb.uint64(counter + 1) * GOLDEN))


def as_u64(x: int) -> np.uint64:
    """Reduce an arbitrary Python integer to an unsigned 64-bit word."""
    return np.uint64(int(x) & _MASK64)


def derive_seed(master: int, *words: int) -> int:
    """Derive a child seed from a master seed and up to five integer words.

    Used for seed hygiene: replica ``r`` of experiment ``k`` gets
    ``derive_seed(master, TAG_REPLICA, k, r)``.
    """
    if len(words) > 5:
        raise ValueError("at most five words can be folded into a seed")
    w = [int(v) & _MASK64 for v in words] + [0] * (5 - len(words))
    h = hash6(as_u64(master), np.uint64(w[0]), np.uint64(w[1]), np.uint64(w[2]),
              np.uint64(w[3]), np.uint64(w[4]))
    return int(h)


def derive_seeds(master: int, tag: int, stream_id: int, count: int) -> np.ndarray:
    """Vector of ``count`` child seeds ``derive_seed(master, tag, stream_id, r)``."""
    return _derive_many(as_u64(master), as_u64(tag), as_u64(stream_id), count)


@nb.njit(cache=True)
def _derive_many(master, tag, stream_id, count):
    out = np.empty(count, dtype=np.uint64)
    for r in range(count):
        out[r] = hash6(master, tag, stream_id, nb.uint64(r), nb.uint64(0), nb.uint64(0))
    return out
