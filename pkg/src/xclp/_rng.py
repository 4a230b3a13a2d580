"""Seed derivation and platform-independent random streams.

Every party in the simulation derives its randomness from a root seed plus a
tuple of labels, so two parties that agree on the labels get identical
streams and a rerun with the same root reproduces every transcript.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy.special import ndtri

_KEY_MASK = (1 << 128) - 1


def derive_seed(root: int, *labels: object) -> int:
    """Hash ``root`` and ``labels`` into a 128-bit integer seed."""
    h = hashlib.sha256()
    h.update((int(root) % (1 << 128)).to_bytes(16, "little"))
    for label in labels:
        data = str(label).encode("utf-8")
        h.update(len(data).to_bytes(4, "little"))
        h.update(data)
    return int.from_bytes(h.digest()[:16], "little")


def philox(seed: int) -> np.random.Philox:
    return np.random.Philox(key=int(seed) & _KEY_MASK)


def generator(seed: int) -> np.random.Generator:
    return np.random.Generator(philox(seed))


def raw_uint64(seed: int, count: int) -> np.ndarray:
    """Raw counter-mode output; stable across platforms and numpy versions."""
    if count == 0:
        return np.zeros(0, dtype=np.uint64)
    return philox(seed).random_raw(count).astype(np.uint64, copy=False)


def canonical_normals(seed: int, count: int) -> np.ndarray:
    """Standard normals by inverse CDF applied to 53-bit uniforms in (0, 1)."""
    raw = raw_uint64(seed, count)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


def uniform_bytes(seed: int, count: int, width: int) -> np.ndarray:
    """``count`` rows of ``width`` uniformly random bytes."""
    words = -(-width // 8)
    raw = raw_uint64(seed, count * words).astype("<u8")
    return raw.view(np.uint8).reshape(count, words * 8)[:, :width].copy()
