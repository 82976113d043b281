"""Counter-based deterministic random numbers built on splitmix64.

Every stochastic choice in the library (parameter init, dropout masks,
episode sampling, bootstrap contexts) is a pure function of an integer
key, so results are reproducible regardless of call order, process
count, or platform.  The generator is splitmix64: output ``i`` of the
stream with seed ``s`` is ``mix64(s + (i + 1) * GAMMA)``, which makes
arbitrary stream offsets cheap and lets streams be evaluated in bulk
with numpy uint64 arithmetic.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# 1 / 2**53, for mapping the top 53 bits of a draw to [0, 1)
_INV53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    """splitmix64 finalizer on a single 64-bit integer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def derive_key(*parts: int) -> int:
    """Fold integers (seed, layer id, step, ...) into one stream key.

    Each part is finalized and xor-folded before a final mix, so keys
    derived from distinct tuples are decorrelated.
    """
    key = 0
    for p in parts:
        key = mix64((key + GAMMA) ^ mix64(int(p) & MASK64))
    return key


def raw_stream(key: int, n: int, offset: int = 0) -> np.ndarray:
    """``n`` consecutive splitmix64 outputs as uint64, starting at ``offset``."""
    counters = np.arange(offset + 1, offset + n + 1, dtype=np.uint64)
    z = np.uint64(key & MASK64) + counters * np.uint64(GAMMA)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def uniform(key: int, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Uniform floats in [lo, hi) from the stream at ``key``."""
    n = int(np.prod(shape)) if shape else 1
    u = (raw_stream(key, n) >> np.uint64(11)).astype(np.float64) * _INV53
    return (lo + (hi - lo) * u).reshape(shape)


def normal(key: int, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    """Standard-normal draws via Box-Muller on the stream at ``key``."""
    n = int(np.prod(shape)) if shape else 1
    half = (n + 1) // 2
    bits = raw_stream(key, 2 * half)
    u = (bits >> np.uint64(11)).astype(np.float64) * _INV53
    u1 = 1.0 - u[:half]  # (0, 1], keeps log() finite
    u2 = u[half:]
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
    return (mean + std * z[:n]).reshape(shape)


def rand_sign(key: int, shape) -> np.ndarray:
    """Random +1/-1 entries (top bit of each draw)."""
    n = int(np.prod(shape)) if shape else 1
    bit = (raw_stream(key, n) >> np.uint64(63)).astype(np.int64)
    return (2 * bit - 1).astype(np.float64).reshape(shape)


def randint(key: int, n: int, bound: int, offset: int = 0) -> np.ndarray:
    """``n`` integers in [0, bound) via modulo reduction of the raw stream."""
    if bound <= 0:
        raise ValueError(f"bound must be positive, got {bound}")
    return (raw_stream(key, n, offset) % np.uint64(bound)).astype(np.int64)


def bootstrap_indices(seed: int, n_items: int, n_draws: int) -> np.ndarray:
    """Indices drawn i.i.d. uniform with replacement (the reference trace).

    Draw ``i`` is ``splitmix64_output(seed, i) % n_items``; callers that
    need per-path streams pass ``base_seed ^ path_index`` as the seed.
    """
    if n_items <= 0:
        raise ValueError("cannot bootstrap from an empty set")
    return randint(seed, n_draws, n_items)


def permutation(key: int, n: int) -> np.ndarray:
    """Fisher-Yates permutation of range(n) driven by the stream at ``key``."""
    order = np.arange(n, dtype=np.int64)
    if n < 2:
        return order
    draws = raw_stream(key, n - 1)
    for i in range(n - 1, 0, -1):
        j = int(draws[n - 1 - i] % np.uint64(i + 1))
        order[i], order[j] = order[j], order[i]
    return order


def subsample(key: int, n: int, size: int) -> np.ndarray:
    """``size`` distinct indices from range(n), uniform without replacement."""
    size = min(size, n)
    return permutation(key, n)[:size]


def gamma_spaced_keys(key: int, count: int) -> list[int]:
    """Decorrelated child keys for ``count`` parallel streams."""
    return [derive_key(key, i) for i in range(count)]


__all__ = [
    "GAMMA",
    "MASK64",
    "bootstrap_indices",
    "derive_key",
    "gamma_spaced_keys",
    "mix64",
    "normal",
    "permutation",
    "randint",
    "raw_stream",
    "rand_sign",
    "subsample",
    "uniform",
]
