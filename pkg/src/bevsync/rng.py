"""Counter-based random streams.

Every stream is a Philox generator whose 128-bit key is a hash of (seed, tags),
so the values a consumer sees never depend on what other streams were drawn
first or in which order work was scheduled.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream_key", "philox_generator", "normal_field"]


def stream_key(seed: int, *tags) -> int:
    text = "/".join([str(int(seed)), *map(str, tags)])
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=16).digest(), "little")


def philox_generator(seed: int, *tags) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *tags)))


def normal_field(seed: int, shape, *tags) -> np.ndarray:
    """Standard normals where element i is a pure function of (seed, tags, i).

    Element i consumes Philox outputs 2i and 2i+1 through Box-Muller (cosine
    branch only), so no rejection sampling can shift later elements.
    """
    n = int(np.prod(shape))
    raw = np.random.Philox(key=stream_key(seed, *tags)).random_raw(2 * n)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    z = np.sqrt(-2.0 * np.log(u[0::2])) * np.cos(2.0 * np.pi * u[1::2])
    return z.reshape(shape)
