"""Counter-based seeding and uniform streams.

Every replication owns a 64-bit seed derived from ``(base_seed, scenario,
replication)``.  The ``k``-th uniform of a replication is a pure function of
that seed and ``k``, so draws never depend on evaluation order, chunking or
worker count.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
INDEX_BITS = 32


def splitmix64(x: int) -> int:
    """SplitMix64 finalizer; a bijection on 64-bit integers."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * _M1) & MASK64
    x = ((x ^ (x >> 27)) * _M2) & MASK64
    return x ^ (x >> 31)


def splitmix64_array(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.uint64)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(_M1)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(_M2)
    return x ^ (x >> np.uint64(31))


def _check_index(name: str, value: int) -> None:
    if not 0 <= value < (1 << INDEX_BITS):
        raise ValueError(f"{name} must lie in [0, 2**{INDEX_BITS}), got {value}")


def replication_seed(base_seed: int, scenario_index: int, replication_index: int) -> int:
    """Seed for one replication of one scenario.

    For a fixed ``base_seed`` the map ``(scenario, replication) -> seed`` is
    injective on ``[0, 2**32)**2``: the pair is packed into a 64-bit key,
    offset by a mixed base and passed through a bijective finalizer.
    """
    _check_index("scenario_index", scenario_index)
    _check_index("replication_index", replication_index)
    key = (scenario_index << INDEX_BITS) | replication_index
    return splitmix64((splitmix64(base_seed) + key) & MASK64)


def replication_seeds(base_seed: int, scenario_index: int, replications: np.ndarray) -> np.ndarray:
    """Vectorized :func:`replication_seed` over an array of replication indices."""
    _check_index("scenario_index", scenario_index)
    reps = np.asarray(replications, dtype=np.uint64)
    if reps.size and int(reps.max()) >= (1 << INDEX_BITS):
        raise ValueError("replication index out of range")
    offset = np.uint64((splitmix64(base_seed) + (scenario_index << INDEX_BITS)) & MASK64)
    return splitmix64_array(reps + offset)


def to_unit(bits: np.ndarray) -> np.ndarray:
    """Map 64-bit integers to doubles strictly inside (0, 1)."""
    top = (np.asarray(bits, dtype=np.uint64) >> np.uint64(11)).astype(np.float64)
    return (top + 0.5) * 2.0**-53


def counter_uniforms(seeds: np.ndarray, n_draws: int) -> np.ndarray:
    """Uniforms of shape ``(len(seeds), n_draws)``; row ``m`` depends only on ``seeds[m]``."""
    seeds = np.asarray(seeds, dtype=np.uint64)
    counters = (np.arange(1, n_draws + 1, dtype=np.uint64) * np.uint64(GOLDEN_GAMMA))
    return to_unit(splitmix64_array(seeds[:, None] + counters[None, :]))
