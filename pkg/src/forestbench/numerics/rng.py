"""Deterministic counter-based random streams and weight initializers.

Every source of randomness in the package goes through ``make_rng`` so that a
run is fully determined by its integer seed(s). The underlying generator is
Philox, a counter-based generator whose output depends only on the key, never
on call history of other streams.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def stream_key(*parts: int) -> list[int]:
    """Fold any number of integers into a 2-word Philox key."""
    a = 0x243F6A8885A308D3
    b = 0x13198A2E03707344
    for p in parts:
        a = _splitmix64(a ^ (int(p) & _MASK64))
        b = _splitmix64(b ^ a)
    return [a, b]


def make_rng(*parts: int) -> np.random.Generator:
    """Independent generator keyed by (seed, stream, ...) integers."""
    return np.random.Generator(np.random.Philox(key=stream_key(*parts)))


def truncated_normal(
    rng: np.random.Generator, shape: tuple[int, ...], std: float = 0.02
) -> np.ndarray:
    """Normal(0, std) samples resampled until they lie within two deviations."""
    out = rng.normal(0.0, std, size=shape)
    for _ in range(64):
        bad = np.abs(out) > 2.0 * std
        n_bad = int(bad.sum())
        if n_bad == 0:
            break
        out[bad] = rng.normal(0.0, std, size=n_bad)
    return np.clip(out, -2.0 * std, 2.0 * std)
