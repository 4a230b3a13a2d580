"""Sign random projections shared through a common seed.

Every party that holds the same ``ProjectionSpec`` builds the same Gaussian
matrix bit for bit: normals come from inverse-CDF sampling of Philox output,
which does not depend on platform or numpy's distribution code.
"""

from __future__ import annotations

import functools
import math
import struct
from dataclasses import dataclass

import numpy as np

from xclp import _kernels
from xclp._rng import canonical_normals, derive_seed


@dataclass(frozen=True)
class ProjectionSpec:
    seed: int
    code_length: int
    dim: int

    def __post_init__(self) -> None:
        if self.code_length < 1:
            raise ValueError("code_length must be >= 1")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not 0 <= self.seed < 1 << 64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@functools.lru_cache(maxsize=8)
def generate_projection(spec: ProjectionSpec) -> np.ndarray:
    """``L x d`` matrix of i.i.d. standard normals determined by ``spec`` (read-only, cached)."""
    seed = derive_seed(spec.seed, "lsh-projection", spec.code_length, spec.dim)
    out = canonical_normals(seed, spec.code_length * spec.dim).reshape(spec.code_length, spec.dim)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class BitCodeMatrix:
    """Packed sign codes; bit ``l`` of row ``i`` lives in word ``l // 64`` at position ``l % 64``."""

    words: np.ndarray
    code_length: int
    owner: str = ""

    def __post_init__(self) -> None:
        w = np.ascontiguousarray(self.words, dtype=np.uint64)
        if w.ndim != 2 or w.shape[1] != -(-self.code_length // 64):
            raise ValueError(f"packed shape {w.shape} does not fit L={self.code_length}")
        tail = self.code_length % 64
        if tail and w.size and np.any(w[:, -1] >> np.uint64(tail)):
            raise ValueError("padding bits beyond L must be zero")
        w.setflags(write=False)
        object.__setattr__(self, "words", w)

    @property
    def n(self) -> int:
        return self.words.shape[0]

    def bits(self) -> np.ndarray:
        """Unpacked ``n x L`` uint8 matrix."""
        raw = self.words.astype("<u8").view(np.uint8).reshape(self.n, -1)
        return np.unpackbits(raw, axis=1, bitorder="little")[:, : self.code_length]

    @classmethod
    def from_bits(cls, bits: np.ndarray, owner: str = "") -> BitCodeMatrix:
        bits = np.asarray(bits)
        return cls(_kernels.pack_signs(np.where(bits != 0, 1.0, -1.0)), bits.shape[1], owner)

    def take(self, rows) -> BitCodeMatrix:
        return BitCodeMatrix(self.words[rows], self.code_length, self.owner)

    def to_bytes(self) -> bytes:
        return struct.pack("<QQ", self.n, self.code_length) + self.words.astype("<u8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, owner: str = "") -> BitCodeMatrix:
        n, L = struct.unpack_from("<QQ", data, 0)
        words = -(-L // 64)
        body = data[16:]
        if len(body) != n * words * 8:
            raise ValueError("truncated code matrix")
        arr = np.frombuffer(body, dtype="<u8").reshape(n, words).astype(np.uint64)
        return cls(arr, L, owner)


def hash_features(features: np.ndarray, projection: np.ndarray, owner: str = "") -> BitCodeMatrix:
    """Bit ``(i, l)`` is set iff ``<projection[l], features[i]> >= 0``."""
    features = np.asarray(features, dtype=np.float64)
    projection = np.asarray(projection, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != projection.shape[1]:
        raise ValueError(f"features have {features.shape[-1]} columns, projection expects {projection.shape[1]}")
    if not np.all(np.isfinite(features)):
        raise ValueError("non-finite feature entry")
    return BitCodeMatrix(_kernels.pack_signs(features @ projection.T), projection.shape[0], owner)


def hamming_matrix(a: BitCodeMatrix, b: BitCodeMatrix) -> np.ndarray:
    """Plaintext pairwise Hamming distances (popcount of XOR)."""
    if a.code_length != b.code_length:
        raise ValueError("code lengths differ")
    return _kernels.hamming_cross(a.words, b.words)


def estimate_cosine(hamming, code_length: int):
    """``cos(pi * h / L)``; accepts a scalar or an integer array."""
    h = np.asarray(hamming)
    if np.any(h < 0) or np.any(h > code_length):
        raise ValueError(f"hamming distance outside [0, {code_length}]")
    out = np.cos(math.pi * h.astype(np.float64) / code_length)
    # exact at the three anchor points
    out = np.where(h == 0, 1.0, np.where(h == code_length, -1.0, out))
    out = np.where(2 * h == code_length, 0.0, out)
    return float(out) if out.ndim == 0 else out
