"""Reference (pure Python / numpy) implementations of the hot kernels.

The compiled module ``_ckernels`` exposes the same names with identical
results; everything crossing the kernel boundary is a numpy array, with big
integers carried as fixed-width little-endian byte rows.
"""

from __future__ import annotations

import gmpy2
import numpy as np
from gmpy2 import mpz

WINDOW_BITS = 8


def pack_signs(values: np.ndarray) -> np.ndarray:
    """Pack ``values >= 0`` into uint64 words, bit ``l`` at word ``l // 64``, LSB first."""
    values = np.asarray(values, dtype=np.float64)
    n, L = values.shape
    words = -(-L // 64)
    bits = np.zeros((n, words * 64), dtype=np.uint8)
    bits[:, :L] = values >= 0
    packed = np.packbits(bits, axis=1, bitorder="little")
    return packed.view("<u8").astype(np.uint64).reshape(n, words)


def hamming_cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All pairwise popcount(a_i XOR b_j)."""
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    out = np.zeros((a.shape[0], b.shape[0]), dtype=np.int64)
    for w in range(a.shape[1]):
        out += np.bitwise_count(a[:, w, None] ^ b[None, :, w]).astype(np.int64)
    return out


def topk_rows(A: np.ndarray, k: int) -> np.ndarray:
    """Column indices of the ``k`` largest off-diagonal entries per row.

    Ordered by value descending, ties by lowest column index.
    """
    A = np.array(A, dtype=np.float64, copy=True)
    np.fill_diagonal(A, -np.inf)
    return np.argsort(-A, axis=1, kind="stable")[:, :k].astype(np.int64)


# ---------------------------------------------------------------------------
# Paillier (generator N + 1, randomizer hs**alpha with short alpha)


def chunk_width(L: int, m: int) -> int:
    """Subset-product window minimizing (2**w + m) * ceil(L / w) multiplications."""
    return min(range(1, 9), key=lambda w: ((1 << w) + m) * (-(-L // w)))


def row_block(L: int, m: int) -> int:
    """Row-block width minimizing ceil(m / v) * (L + 2**(v + 1)) multiplications."""
    return min(range(1, min(m, 12) + 1), key=lambda v: (-(-m // v)) * (L + (2 << v)))


def eval_plan(L: int, m: int) -> tuple[str, int]:
    """Cheaper of the column-table and row-bucket subset-product schemes."""
    w = chunk_width(L, m)
    v = row_block(L, m)
    cols = ((1 << w) + m) * (-(-L // w))
    rows = (-(-m // v)) * (L + (2 << v))
    return ("cols", w) if cols <= rows else ("rows", v)


def _rows_to_ints(rows: np.ndarray) -> list[mpz]:
    return [mpz(int.from_bytes(r.tobytes(), "little")) for r in rows]


def _ints_to_rows(values: list, width: int) -> np.ndarray:
    buf = b"".join(int(v).to_bytes(width, "little") for v in values)
    return np.frombuffer(buf, dtype=np.uint8).reshape(len(values), width).copy()


def _fixed_base_table(base, modulus, windows: int) -> list[list]:
    """``table[i][v] = base ** (v * 256**i) mod modulus``."""
    table = []
    base = mpz(base) % modulus
    for _ in range(windows):
        row = [mpz(1)]
        for _ in range(1, 1 << WINDOW_BITS):
            row.append(row[-1] * base % modulus)
        table.append(row)
        base = row[-1] * base % modulus
    return table


def _fixed_base_pow(table: list[list], alpha: np.ndarray, modulus) -> mpz:
    r = mpz(1)
    for i, byte in enumerate(alpha.tolist()):
        if byte:
            r = r * table[i][byte] % modulus
    return r


def _subset_products_cols(c: list, xbits: np.ndarray, w: int, nsq) -> tuple[list, mpz]:
    """Subset products from per-chunk tables, plus the product of all of ``c``."""
    L = len(c)
    m = xbits.shape[0]
    nchunks = -(-L // w)
    tables = []
    for ch in range(nchunks):
        lo = ch * w
        width = min(w, L - lo)
        tab = [mpz(1)] * (1 << width)
        for p in range(1, 1 << width):
            low = p & -p
            tab[p] = tab[p ^ low] * c[lo + low.bit_length() - 1] % nsq
        tables.append(tab)
    total = mpz(1)
    for tab in tables:
        total = total * tab[-1] % nsq
    padded = np.zeros((m, nchunks * w), dtype=np.int64)
    padded[:, :L] = xbits
    patterns = padded.reshape(m, nchunks, w) @ (1 << np.arange(w, dtype=np.int64))
    out = []
    for i in range(m):
        acc = mpz(1)
        for ch, p in enumerate(patterns[i].tolist()):
            if p:
                acc = acc * tables[ch][p] % nsq
        out.append(acc)
    return out, total


def _subset_products_rows(c: list, xbits: np.ndarray, v: int, nsq) -> tuple[list, mpz]:
    """Bucket columns by their pattern over ``v`` rows, then fold bits away from the top."""
    m = xbits.shape[0]
    out = [mpz(1)] * m
    total = mpz(1)
    for t0 in range(0, m, v):
        vb = min(v, m - t0)
        patterns = (xbits[t0 : t0 + vb].astype(np.int64).T @ (1 << np.arange(vb, dtype=np.int64))).tolist()
        buckets: dict[int, mpz] = {}
        for l, q in enumerate(patterns):
            if q or t0 == 0:
                buckets[q] = buckets[q] * c[l] % nsq if q in buckets else c[l]
        if t0 == 0:
            for q in range(1 << vb):
                if q in buckets:
                    total = total * buckets[q] % nsq
            buckets.pop(0, None)
        for t in range(vb - 1, -1, -1):
            acc = None
            for q in range(1 << t, 1 << (t + 1)):
                if q not in buckets:
                    continue
                b = buckets.pop(q)
                acc = b if acc is None else acc * b % nsq
                low = q - (1 << t)
                if low:
                    buckets[low] = buckets[low] * b % nsq if low in buckets else b
            out[t0 + t] = mpz(1) if acc is None else acc
    return out, total


class PaillierPublicKernel:
    def __init__(self, n: int, hs: int, alpha_bits: int) -> None:
        self.n = mpz(n)
        self.nsq = self.n * self.n
        self.cipher_bytes = (int(self.nsq).bit_length() + 7) // 8
        self.plain_bytes = (int(self.n).bit_length() + 7) // 8
        self.alpha_bytes = (alpha_bits + 7) // 8
        self._table = _fixed_base_table(hs, self.nsq, self.alpha_bytes)

    def encrypt(self, plain: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        out = []
        for m, a in zip(_rows_to_ints(plain), alpha):
            c = (1 + m * self.n) % self.nsq
            out.append(c * _fixed_base_pow(self._table, a, self.nsq) % self.nsq)
        return _ints_to_rows(out, self.cipher_bytes)

    def hamming_eval(self, cts: np.ndarray, xbits: np.ndarray, rand_cts: np.ndarray) -> np.ndarray:
        """Per row x: rand * (prod_{x_l=1} c_l)**2 * (prod_l c_l)**-1."""
        nsq = self.nsq
        c = _rows_to_ints(cts)
        L = len(c)
        m = xbits.shape[0]
        plan, w = eval_plan(L, m)
        if plan == "cols":
            prods, total = _subset_products_cols(c, xbits, w, nsq)
        else:
            prods, total = _subset_products_rows(c, xbits, w, nsq)
        inv_total = gmpy2.invert(total, nsq)
        rand = _rows_to_ints(rand_cts)
        out = []
        for i in range(m):
            acc = prods[i] * prods[i] % nsq
            acc = acc * inv_total % nsq
            out.append(acc * rand[i] % nsq)
        return _ints_to_rows(out, self.cipher_bytes)


class PaillierPrivateKernel:
    """Decryption, and encryption through the CRT split modulo p**2 and q**2."""

    def __init__(self, p: int, q: int, hs: int, alpha_bits: int) -> None:
        self.p, self.q = mpz(p), mpz(q)
        self.n = self.p * self.q
        self.psq, self.qsq = self.p * self.p, self.q * self.q
        self.nsq = self.n * self.n
        self.plain_bytes = (int(self.n).bit_length() + 7) // 8
        self.cipher_bytes = (int(self.nsq).bit_length() + 7) // 8
        self.alpha_bytes = (alpha_bits + 7) // 8
        g = self.n + 1
        self.hp = gmpy2.invert((gmpy2.powmod(g, self.p - 1, self.psq) - 1) // self.p, self.p)
        self.hq = gmpy2.invert((gmpy2.powmod(g, self.q - 1, self.qsq) - 1) // self.q, self.q)
        self.q_inv = gmpy2.invert(self.q, self.p)
        self.qsq_inv = gmpy2.invert(self.qsq, self.psq)
        self._tp = _fixed_base_table(hs, self.psq, self.alpha_bytes)
        self._tq = _fixed_base_table(hs, self.qsq, self.alpha_bytes)

    def encrypt(self, plain: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        out = []
        for m, a in zip(_rows_to_ints(plain), alpha):
            g = 1 + m * self.n
            cp = g % self.psq * _fixed_base_pow(self._tp, a, self.psq) % self.psq
            cq = g % self.qsq * _fixed_base_pow(self._tq, a, self.qsq) % self.qsq
            out.append(cq + self.qsq * ((cp - cq) * self.qsq_inv % self.psq))
        return _ints_to_rows(out, self.cipher_bytes)

    def decrypt_small(self, cts: np.ndarray) -> np.ndarray:
        """Decrypt plaintexts known to be below p from the mod-p half alone."""
        out = []
        for c in _rows_to_ints(cts):
            out.append((gmpy2.powmod(c, self.p - 1, self.psq) - 1) // self.p * self.hp % self.p)
        return _ints_to_rows(out, self.plain_bytes)

    def decrypt(self, cts: np.ndarray) -> np.ndarray:
        out = []
        for c in _rows_to_ints(cts):
            mp = (gmpy2.powmod(c, self.p - 1, self.psq) - 1) // self.p * self.hp % self.p
            mq = (gmpy2.powmod(c, self.q - 1, self.qsq) - 1) // self.q * self.hq % self.q
            out.append(mq + self.q * ((mp - mq) * self.q_inv % self.p))
        return _ints_to_rows(out, self.plain_bytes)
