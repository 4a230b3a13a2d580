"""Paillier encryption with generator ``N + 1``.

Randomizers are ``hs ** alpha mod N^2`` where ``hs = h ** N`` for a fixed
``h = -x^2 mod N`` and ``alpha`` is a short exponent of twice the key's
symmetric security level (the Damgard-Jurik-Nielsen variant).  This keeps the
``r ** N`` factor of textbook Paillier and makes encryption a fixed-base
exponentiation, which the kernels evaluate from a precomputed table.

Ciphertexts and plaintexts travel as fixed-width little-endian byte rows
(``uint8`` arrays), which is also their wire encoding.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from functools import cached_property

import gmpy2
import numpy as np

from xclp import _kernels

TEST_KEY_BITS = 512  # insecure; for tests and desk-scale runs only
DEFAULT_KEY_BITS = 2048


class PaillierError(ValueError):
    pass


def int_rows(values, width: int) -> np.ndarray:
    """Encode non-negative integers as ``(len(values), width)`` little-endian bytes."""
    buf = b"".join(int(v).to_bytes(width, "little") for v in values)
    return np.frombuffer(buf, dtype=np.uint8).reshape(len(values), width).copy()


def rows_int(rows: np.ndarray) -> list[int]:
    return [int.from_bytes(r.tobytes(), "little") for r in np.asarray(rows, dtype=np.uint8)]


@dataclass(frozen=True, eq=False)
class PaillierPublicKey:
    n: int
    hs: int
    alpha_bits: int

    @property
    def nsq(self) -> int:
        return self.n * self.n

    @property
    def bits(self) -> int:
        return self.n.bit_length()

    @property
    def cipher_bytes(self) -> int:
        return (self.nsq.bit_length() + 7) // 8

    @property
    def plain_bytes(self) -> int:
        return (self.n.bit_length() + 7) // 8

    @property
    def alpha_bytes(self) -> int:
        return (self.alpha_bits + 7) // 8

    @cached_property
    def kernel(self):
        return _kernels.PaillierPublicKernel(self.n, self.hs, self.alpha_bits)

    def random_alphas(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, 256, size=(count, self.alpha_bytes), dtype=np.uint8)

    def encrypt_rows(self, plain: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        plain = np.ascontiguousarray(plain, dtype=np.uint8)
        return self.kernel.encrypt(plain, self.random_alphas(plain.shape[0], rng))

    def encrypt(self, values, rng: np.random.Generator) -> np.ndarray:
        values = [int(v) for v in values]
        if any(v < 0 or v >= self.n for v in values):
            raise PaillierError("plaintext outside [0, N)")
        return self.encrypt_rows(int_rows(values, self.plain_bytes), rng)

    def add(self, c1: np.ndarray, c2: np.ndarray) -> np.ndarray:
        """Ciphertext of the plaintext sum, row by row."""
        out = [a * b % self.nsq for a, b in zip(rows_int(c1), rows_int(c2))]
        return int_rows(out, self.cipher_bytes)

    def scale(self, c: np.ndarray, k: int) -> np.ndarray:
        """Ciphertext of the plaintext times the public constant ``k``."""
        k = int(k) % self.n
        out = [int(gmpy2.powmod(a, k, self.nsq)) for a in rows_int(c)]
        return int_rows(out, self.cipher_bytes)

    def to_bytes(self) -> bytes:
        nb = self.plain_bytes
        return (
            nb.to_bytes(4, "little")
            + self.n.to_bytes(nb, "little")
            + self.hs.to_bytes(self.cipher_bytes, "little")
            + self.alpha_bits.to_bytes(4, "little")
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> PaillierPublicKey:
        nb = int.from_bytes(data[:4], "little")
        n = int.from_bytes(data[4 : 4 + nb], "little")
        cb = ((n * n).bit_length() + 7) // 8
        hs = int.from_bytes(data[4 + nb : 4 + nb + cb], "little")
        alpha_bits = int.from_bytes(data[4 + nb + cb : 8 + nb + cb], "little")
        return cls(n, hs, alpha_bits)


@dataclass(frozen=True, eq=False)
class PaillierSecretKey:
    p: int
    q: int
    public: PaillierPublicKey = field(repr=False)

    @cached_property
    def kernel(self):
        return _kernels.PaillierPrivateKernel(
            self.p, self.q, self.public.hs, self.public.alpha_bits
        )

    def encrypt_rows(self, plain: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Same ciphertext distribution as the public key, about twice as fast."""
        plain = np.ascontiguousarray(plain, dtype=np.uint8)
        return self.kernel.encrypt(plain, self.public.random_alphas(plain.shape[0], rng))

    def decrypt_rows(self, cts: np.ndarray) -> np.ndarray:
        return self.kernel.decrypt(np.ascontiguousarray(cts, dtype=np.uint8))

    def decrypt(self, cts: np.ndarray) -> list[int]:
        return rows_int(self.decrypt_rows(cts))

    @property
    def small_bound(self) -> int:
        """Plaintexts below this decrypt correctly with :meth:`decrypt_small`."""
        return self.p

    def decrypt_small(self, cts: np.ndarray) -> list[int]:
        """Half-cost decryption, valid only for plaintexts below ``small_bound``."""
        return rows_int(self.kernel.decrypt_small(np.ascontiguousarray(cts, dtype=np.uint8)))


@dataclass(frozen=True, eq=False)
class PHEKeypair:
    public: PaillierPublicKey
    secret: PaillierSecretKey


def _prime(bits: int, rnd: random.Random) -> int:
    while True:
        cand = rnd.getrandbits(bits) | (3 << (bits - 2)) | 1
        p = int(gmpy2.next_prime(cand))
        if p % 4 == 3 and p.bit_length() == bits:
            return p


def security_bits(bits: int) -> int:
    """Symmetric-equivalent strength of a ``bits``-bit modulus (NIST SP 800-57 table)."""
    for size, level in ((15360, 256), (7680, 192), (3072, 128), (2048, 112), (1024, 80)):
        if bits >= size:
            return level
    return max(32, bits // 8)


def generate_keypair(
    bits: int = DEFAULT_KEY_BITS, seed: int | None = None, alpha_bits: int | None = None
) -> PHEKeypair:
    """Paillier keys with an exactly ``bits``-bit modulus.

    A seed makes key generation reproducible, which is only appropriate in
    simulations.
    """
    if bits < 128 or bits % 2:
        raise PaillierError("key size must be an even number of bits >= 128")
    rnd = random.Random(seed) if seed is not None else random.SystemRandom()
    while True:
        p = _prime(bits // 2, rnd)
        q = _prime(bits // 2, rnd)
        n = p * q
        if p != q and n.bit_length() == bits and gmpy2.gcd(n, (p - 1) * (q - 1)) == 1:
            break
    while True:
        x = rnd.randrange(2, n)
        if gmpy2.gcd(x, n) == 1:
            break
    h = (-x * x) % n
    hs = int(gmpy2.powmod(h, n, n * n))
    if alpha_bits is None:
        alpha_bits = min(bits // 2, 2 * security_bits(bits))
    public = PaillierPublicKey(n, hs, alpha_bits)
    return PHEKeypair(public, PaillierSecretKey(p, q, public))
