# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; see ``_pykernels`` for the reference semantics."""

from libc.stdint cimport uint64_t, uint8_t, int64_t
from libc.stdlib cimport malloc, free
from libc.string cimport memset

import numpy as np

from xclp._kernels._pykernels import eval_plan


cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil


cdef extern from "gmp.h":
    ctypedef struct __mpz_struct:
        pass
    void mpz_init(__mpz_struct *) nogil
    void mpz_clear(__mpz_struct *) nogil
    void mpz_set(__mpz_struct *, const __mpz_struct *) nogil
    void mpz_set_ui(__mpz_struct *, unsigned long) nogil
    void mpz_add(__mpz_struct *, const __mpz_struct *, const __mpz_struct *) nogil
    void mpz_sub(__mpz_struct *, const __mpz_struct *, const __mpz_struct *) nogil
    void mpz_add_ui(__mpz_struct *, const __mpz_struct *, unsigned long) nogil
    void mpz_sub_ui(__mpz_struct *, const __mpz_struct *, unsigned long) nogil
    void mpz_mul(__mpz_struct *, const __mpz_struct *, const __mpz_struct *) nogil
    void mpz_mod(__mpz_struct *, const __mpz_struct *, const __mpz_struct *) nogil
    void mpz_divexact(__mpz_struct *, const __mpz_struct *, const __mpz_struct *) nogil
    void mpz_powm(__mpz_struct *, const __mpz_struct *, const __mpz_struct *, const __mpz_struct *) nogil
    int mpz_invert(__mpz_struct *, const __mpz_struct *, const __mpz_struct *) nogil
    void mpz_import(__mpz_struct *, size_t, int, size_t, int, size_t, const void *) nogil
    void *mpz_export(void *, size_t *, int, size_t, int, size_t, const __mpz_struct *) nogil
    size_t mpz_sizeinbase(const __mpz_struct *, int) nogil


# ---------------------------------------------------------------------------
# bit codes


def pack_signs(values):
    cdef const double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t n = v.shape[0], L = v.shape[1]
    cdef Py_ssize_t words = (L + 63) // 64
    out = np.zeros((n, words), dtype=np.uint64)
    cdef uint64_t[:, ::1] o = out
    cdef Py_ssize_t i, w, l, width
    cdef uint64_t acc
    cdef const double *row
    if n == 0 or L == 0:
        return out
    with nogil:
        for i in range(n):
            row = &v[i, 0]
            for w in range(words):
                width = min(64, L - w * 64)
                acc = 0
                for l in range(width):
                    acc |= (<uint64_t>(row[l] >= 0)) << l
                o[i, w] = acc
                row += width
    return out


def hamming_cross(const uint64_t[:, :] a, const uint64_t[:, :] b):
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0], W = a.shape[1]
    if b.shape[1] != W:
        raise ValueError("code width mismatch")
    out = np.zeros((na, nb), dtype=np.int64)
    cdef int64_t[:, ::1] o = out
    cdef Py_ssize_t i, j, w
    cdef int64_t acc
    with nogil:
        for i in range(na):
            for j in range(nb):
                acc = 0
                for w in range(W):
                    acc += __builtin_popcountll(a[i, w] ^ b[j, w])
                o[i, j] = acc
    return out


def topk_rows(const double[:, :] A, Py_ssize_t k):
    cdef Py_ssize_t n = A.shape[0], m = A.shape[1]
    if k < 0 or k > m - 1:
        raise ValueError("k must lie in [0, n-1]")
    out = np.zeros((n, k), dtype=np.int64)
    cdef int64_t[:, ::1] o = out
    cdef double *bv = <double *>malloc(max(k, 1) * sizeof(double))
    cdef int64_t *bi = <int64_t *>malloc(max(k, 1) * sizeof(int64_t))
    cdef Py_ssize_t i, j, filled, pos
    cdef double v
    try:
        with nogil:
            for i in range(n):
                filled = 0
                for j in range(m):
                    if j == i:
                        continue
                    v = A[i, j]
                    if filled == k:
                        # strict comparison: earlier (lower) column wins ties
                        if k == 0 or not (v > bv[k - 1]):
                            continue
                        pos = k - 1
                    else:
                        pos = filled
                        filled += 1
                    while pos > 0 and v > bv[pos - 1]:
                        bv[pos] = bv[pos - 1]
                        bi[pos] = bi[pos - 1]
                        pos -= 1
                    bv[pos] = v
                    bi[pos] = j
                for j in range(k):
                    o[i, j] = bi[j]
    finally:
        free(bv)
        free(bi)
    return out


# ---------------------------------------------------------------------------
# big-integer helpers


cdef void _from_bytes(__mpz_struct *z, const uint8_t *buf, Py_ssize_t width) nogil:
    # whole little-endian 64-bit words take GMP's fast path
    if width % 8 == 0:
        mpz_import(z, width // 8, -1, 8, -1, 0, buf)
    else:
        mpz_import(z, width, -1, 1, 0, 0, buf)


cdef void _to_bytes(uint8_t *buf, Py_ssize_t width, const __mpz_struct *z) nogil:
    cdef size_t count = 0
    memset(buf, 0, width)
    if width % 8 == 0:
        mpz_export(buf, &count, -1, 8, -1, 0, z)
    else:
        mpz_export(buf, &count, -1, 1, 0, 0, z)


cdef void _from_int(__mpz_struct *z, object value):
    value = int(value)
    cdef Py_ssize_t width = max(1, (value.bit_length() + 7) // 8)
    cdef bytes b = value.to_bytes(width, "little")
    _from_bytes(z, <const uint8_t *>(<char *>b), width)


cdef __mpz_struct *_alloc(Py_ssize_t count) except NULL:
    cdef __mpz_struct *arr = <__mpz_struct *>malloc(max(count, 1) * sizeof(__mpz_struct))
    if arr == NULL:
        raise MemoryError()
    cdef Py_ssize_t i
    for i in range(count):
        mpz_init(&arr[i])
    return arr


cdef void _release(__mpz_struct *arr, Py_ssize_t count) nogil:
    cdef Py_ssize_t i
    if arr == NULL:
        return
    for i in range(count):
        mpz_clear(&arr[i])
    free(arr)


cdef inline void _mulmod(__mpz_struct *acc, const __mpz_struct *x, const __mpz_struct *mod,
                         __mpz_struct *tmp) nogil:
    mpz_mul(tmp, acc, x)
    mpz_mod(acc, tmp, mod)


# ---------------------------------------------------------------------------
# Paillier


cdef void _build_table(__mpz_struct *table, object base_value, const __mpz_struct *modulus,
                       Py_ssize_t windows):
    """table[i*256 + v] = base ** (v * 256**i) mod modulus."""
    cdef __mpz_struct base, tmp
    mpz_init(&base)
    mpz_init(&tmp)
    _from_int(&base, base_value)
    mpz_mod(&base, &base, modulus)
    cdef Py_ssize_t i, v
    with nogil:
        for i in range(windows):
            mpz_set_ui(&table[i * 256], 1)
            for v in range(1, 256):
                mpz_mul(&tmp, &table[i * 256 + v - 1], &base)
                mpz_mod(&table[i * 256 + v], &tmp, modulus)
            mpz_mul(&tmp, &table[i * 256 + 255], &base)
            mpz_mod(&base, &tmp, modulus)
    mpz_clear(&base)
    mpz_clear(&tmp)


cdef inline void _fixed_pow(__mpz_struct *acc, const __mpz_struct *table, const uint8_t *alpha,
                            Py_ssize_t width, const __mpz_struct *modulus, __mpz_struct *tmp) nogil:
    cdef Py_ssize_t i
    cdef uint8_t byte
    for i in range(width):
        byte = alpha[i]
        if byte:
            _mulmod(acc, &table[i * 256 + byte], modulus, tmp)


cdef class PaillierPublicKernel:
    cdef __mpz_struct n
    cdef __mpz_struct nsq
    cdef __mpz_struct *table
    cdef Py_ssize_t windows
    cdef readonly Py_ssize_t cipher_bytes, plain_bytes, alpha_bytes

    def __cinit__(self, n, hs, int alpha_bits):
        self.table = NULL
        self.windows = 0
        mpz_init(&self.n)
        mpz_init(&self.nsq)
        _from_int(&self.n, n)
        mpz_mul(&self.nsq, &self.n, &self.n)
        self.cipher_bytes = (mpz_sizeinbase(&self.nsq, 2) + 7) // 8
        self.plain_bytes = (mpz_sizeinbase(&self.n, 2) + 7) // 8
        self.alpha_bytes = (alpha_bits + 7) // 8
        self.table = _alloc(self.alpha_bytes * 256)
        self.windows = self.alpha_bytes
        _build_table(self.table, hs, &self.nsq, self.windows)

    def __dealloc__(self):
        _release(self.table, self.windows * 256)
        mpz_clear(&self.n)
        mpz_clear(&self.nsq)

    def encrypt(self, const uint8_t[:, ::1] plain, const uint8_t[:, ::1] alpha):
        cdef Py_ssize_t rows = plain.shape[0], pw = plain.shape[1], aw = alpha.shape[1]
        if alpha.shape[0] != rows:
            raise ValueError("one alpha row per plaintext required")
        if aw > self.alpha_bytes:
            raise ValueError("alpha wider than the randomizer table")
        out = np.zeros((rows, self.cipher_bytes), dtype=np.uint8)
        if rows == 0:
            return out
        cdef uint8_t[:, ::1] o = out
        cdef __mpz_struct c, m, tmp
        mpz_init(&c)
        mpz_init(&m)
        mpz_init(&tmp)
        cdef Py_ssize_t r
        with nogil:
            for r in range(rows):
                _from_bytes(&m, &plain[r, 0], pw)
                mpz_mul(&tmp, &m, &self.n)
                mpz_add_ui(&tmp, &tmp, 1)
                mpz_mod(&c, &tmp, &self.nsq)
                _fixed_pow(&c, self.table, &alpha[r, 0], aw, &self.nsq, &tmp)
                _to_bytes(&o[r, 0], self.cipher_bytes, &c)
        mpz_clear(&c)
        mpz_clear(&m)
        mpz_clear(&tmp)
        return out

    def hamming_eval(self, const uint8_t[:, ::1] cts, const uint8_t[:, ::1] xbits,
                     const uint8_t[:, ::1] rand_cts):
        cdef Py_ssize_t L = cts.shape[0], cw = cts.shape[1], m = xbits.shape[0]
        if xbits.shape[1] != L or rand_cts.shape[0] != m:
            raise ValueError("shape mismatch")
        out = np.zeros((m, self.cipher_bytes), dtype=np.uint8)
        if m == 0 or L == 0:
            return out
        plan, w = eval_plan(L, m)
        cdef uint8_t[:, ::1] o = out
        cdef __mpz_struct *c = _alloc(L)
        cdef __mpz_struct *prods = NULL
        cdef __mpz_struct total, inv_total, tmp, rnd
        mpz_init(&total)
        mpz_init(&inv_total)
        mpz_init(&tmp)
        mpz_init(&rnd)
        cdef Py_ssize_t l, i
        cdef int ok
        try:
            prods = _alloc(m)
            with nogil:
                for l in range(L):
                    _from_bytes(&c[l], &cts[l, 0], cw)
            if plan == "cols":
                _subset_products_cols(prods, &total, c, xbits, L, m, w, &self.nsq)
            else:
                _subset_products_rows(prods, &total, c, xbits, L, m, w, &self.nsq)
            with nogil:
                ok = mpz_invert(&inv_total, &total, &self.nsq)
            if not ok:
                raise ValueError("ciphertext product not invertible modulo N^2")
            with nogil:
                for i in range(m):
                    # rand * prod**2 * total**-1
                    mpz_mul(&tmp, &prods[i], &prods[i])
                    mpz_mod(&prods[i], &tmp, &self.nsq)
                    _mulmod(&prods[i], &inv_total, &self.nsq, &tmp)
                    _from_bytes(&rnd, &rand_cts[i, 0], rand_cts.shape[1])
                    _mulmod(&prods[i], &rnd, &self.nsq, &tmp)
                    _to_bytes(&o[i, 0], self.cipher_bytes, &prods[i])
        finally:
            _release(c, L)
            _release(prods, m)
            mpz_clear(&total)
            mpz_clear(&inv_total)
            mpz_clear(&tmp)
            mpz_clear(&rnd)
        return out


cdef void _subset_products_cols(__mpz_struct *prods, __mpz_struct *total, const __mpz_struct *c,
                                const uint8_t[:, ::1] xbits, Py_ssize_t L, Py_ssize_t m, Py_ssize_t w,
                                const __mpz_struct *mod):
    """Per chunk of ``w`` columns, a table of all 2**w subset products.

    ``total`` (the product of every column) comes from the full-pattern entries.
    """
    cdef Py_ssize_t nchunks = (L + w - 1) // w
    cdef Py_ssize_t tsize = 1 << w
    cdef __mpz_struct *tabs = _alloc(nchunks * tsize)
    cdef __mpz_struct tmp
    mpz_init(&tmp)
    cdef Py_ssize_t ch, p, lo, width, low, bit, i, b
    with nogil:
        for ch in range(nchunks):
            lo = ch * w
            width = w if L - lo >= w else L - lo
            mpz_set_ui(&tabs[ch * tsize], 1)
            for p in range(1, 1 << width):
                low = p & -p
                bit = 0
                while (low >> bit) != 1:
                    bit += 1
                mpz_mul(&tmp, &tabs[ch * tsize + (p ^ low)], &c[lo + bit])
                mpz_mod(&tabs[ch * tsize + p], &tmp, mod)
            if ch == 0:
                mpz_set(total, &tabs[(1 << width) - 1])
            else:
                _mulmod(total, &tabs[ch * tsize + (1 << width) - 1], mod, &tmp)
        for i in range(m):
            mpz_set_ui(&prods[i], 1)
            for ch in range(nchunks):
                lo = ch * w
                width = w if L - lo >= w else L - lo
                p = 0
                for b in range(width):
                    if xbits[i, lo + b]:
                        p |= 1 << b
                if p:
                    _mulmod(&prods[i], &tabs[ch * tsize + p], mod, &tmp)
    _release(tabs, nchunks * tsize)
    mpz_clear(&tmp)


cdef void _subset_products_rows(__mpz_struct *prods, __mpz_struct *total, const __mpz_struct *c,
                                const uint8_t[:, ::1] xbits, Py_ssize_t L, Py_ssize_t m, Py_ssize_t v,
                                const __mpz_struct *mod):
    """Per block of ``v`` rows, bucket columns by their bit pattern, then collapse.

    After the bits above ``t`` are folded away, output ``t`` is the product of
    buckets ``[2**t, 2**(t+1))``; each of those is then merged into the
    bucket without bit ``t``.  ``total`` is the product of the first block's
    buckets, bucket 0 included.
    """
    cdef Py_ssize_t nb = 1 << v
    cdef __mpz_struct *buckets = _alloc(nb)
    cdef uint8_t *filled = <uint8_t *> malloc(nb)
    cdef __mpz_struct tmp
    mpz_init(&tmp)
    cdef Py_ssize_t t0, vb, l, t, q, lowq
    cdef uint8_t have
    with nogil:
        t0 = 0
        while t0 < m:
            vb = v if m - t0 >= v else m - t0
            memset(filled, 0, nb)
            for l in range(L):
                q = 0
                for t in range(vb):
                    if xbits[t0 + t, l]:
                        q |= 1 << t
                if q or t0 == 0:
                    if filled[q]:
                        _mulmod(&buckets[q], &c[l], mod, &tmp)
                    else:
                        mpz_set(&buckets[q], &c[l])
                        filled[q] = 1
            if t0 == 0:
                mpz_set_ui(total, 1)
                for q in range(1 << vb):
                    if filled[q]:
                        _mulmod(total, &buckets[q], mod, &tmp)
            t = vb - 1
            while t >= 0:
                have = 0
                for q in range(1 << t, 1 << (t + 1)):
                    if not filled[q]:
                        continue
                    if have:
                        _mulmod(&prods[t0 + t], &buckets[q], mod, &tmp)
                    else:
                        mpz_set(&prods[t0 + t], &buckets[q])
                        have = 1
                    lowq = q - (1 << t)
                    if lowq:
                        if filled[lowq]:
                            _mulmod(&buckets[lowq], &buckets[q], mod, &tmp)
                        else:
                            mpz_set(&buckets[lowq], &buckets[q])
                            filled[lowq] = 1
                if not have:
                    mpz_set_ui(&prods[t0 + t], 1)
                t -= 1
            t0 += vb
    free(filled)
    _release(buckets, nb)
    mpz_clear(&tmp)


cdef class PaillierPrivateKernel:
    cdef __mpz_struct p, q, n, psq, qsq, hp, hq, q_inv, qsq_inv, pm1, qm1
    cdef __mpz_struct *tp
    cdef __mpz_struct *tq
    cdef Py_ssize_t windows
    cdef readonly Py_ssize_t plain_bytes, cipher_bytes, alpha_bytes

    def __cinit__(self, p, q, hs, int alpha_bits):
        self.tp = NULL
        self.tq = NULL
        self.windows = 0
        mpz_init(&self.p)
        mpz_init(&self.q)
        mpz_init(&self.n)
        mpz_init(&self.psq)
        mpz_init(&self.qsq)
        mpz_init(&self.hp)
        mpz_init(&self.hq)
        mpz_init(&self.q_inv)
        mpz_init(&self.qsq_inv)
        mpz_init(&self.pm1)
        mpz_init(&self.qm1)
        _from_int(&self.p, p)
        _from_int(&self.q, q)
        mpz_mul(&self.n, &self.p, &self.q)
        mpz_mul(&self.psq, &self.p, &self.p)
        mpz_mul(&self.qsq, &self.q, &self.q)
        mpz_sub_ui(&self.pm1, &self.p, 1)
        mpz_sub_ui(&self.qm1, &self.q, 1)
        self.plain_bytes = (mpz_sizeinbase(&self.n, 2) + 7) // 8
        self.cipher_bytes = (2 * mpz_sizeinbase(&self.n, 2) + 7) // 8
        self.alpha_bytes = (alpha_bits + 7) // 8
        self._h(&self.hp, &self.p, &self.psq, &self.pm1)
        self._h(&self.hq, &self.q, &self.qsq, &self.qm1)
        if not mpz_invert(&self.q_inv, &self.q, &self.p):
            raise ValueError("p and q must be coprime")
        mpz_invert(&self.qsq_inv, &self.qsq, &self.psq)
        self.tp = _alloc(self.alpha_bytes * 256)
        self.tq = _alloc(self.alpha_bytes * 256)
        self.windows = self.alpha_bytes
        _build_table(self.tp, hs, &self.psq, self.windows)
        _build_table(self.tq, hs, &self.qsq, self.windows)

    cdef void _h(self, __mpz_struct *out, __mpz_struct *prime, __mpz_struct *sq, __mpz_struct *pm1):
        # L_p((N + 1) ** (p - 1) mod p**2) ** -1 mod p
        cdef __mpz_struct g
        mpz_init(&g)
        mpz_add_ui(&g, &self.n, 1)
        mpz_powm(&g, &g, pm1, sq)
        mpz_sub_ui(&g, &g, 1)
        mpz_divexact(&g, &g, prime)
        mpz_invert(out, &g, prime)
        mpz_clear(&g)

    def __dealloc__(self):
        _release(self.tp, self.windows * 256)
        _release(self.tq, self.windows * 256)
        mpz_clear(&self.p)
        mpz_clear(&self.q)
        mpz_clear(&self.n)
        mpz_clear(&self.psq)
        mpz_clear(&self.qsq)
        mpz_clear(&self.hp)
        mpz_clear(&self.hq)
        mpz_clear(&self.q_inv)
        mpz_clear(&self.qsq_inv)
        mpz_clear(&self.pm1)
        mpz_clear(&self.qm1)

    def encrypt(self, const uint8_t[:, ::1] plain, const uint8_t[:, ::1] alpha):
        cdef Py_ssize_t rows = plain.shape[0], pw = plain.shape[1], aw = alpha.shape[1]
        if alpha.shape[0] != rows:
            raise ValueError("one alpha row per plaintext required")
        if aw > self.alpha_bytes:
            raise ValueError("alpha wider than the randomizer table")
        out = np.zeros((rows, self.cipher_bytes), dtype=np.uint8)
        if rows == 0:
            return out
        cdef uint8_t[:, ::1] o = out
        cdef __mpz_struct g, cp, cq, tmp
        mpz_init(&g)
        mpz_init(&cp)
        mpz_init(&cq)
        mpz_init(&tmp)
        cdef Py_ssize_t r
        with nogil:
            for r in range(rows):
                _from_bytes(&g, &plain[r, 0], pw)
                mpz_mul(&tmp, &g, &self.n)
                mpz_add_ui(&g, &tmp, 1)
                mpz_mod(&cp, &g, &self.psq)
                _fixed_pow(&cp, self.tp, &alpha[r, 0], aw, &self.psq, &tmp)
                mpz_mod(&cq, &g, &self.qsq)
                _fixed_pow(&cq, self.tq, &alpha[r, 0], aw, &self.qsq, &tmp)
                # c = cq + q^2 * ((cp - cq) * (q^2)^-1 mod p^2)
                mpz_sub(&tmp, &cp, &cq)
                mpz_mul(&g, &tmp, &self.qsq_inv)
                mpz_mod(&tmp, &g, &self.psq)
                mpz_mul(&g, &tmp, &self.qsq)
                mpz_add(&g, &g, &cq)
                _to_bytes(&o[r, 0], self.cipher_bytes, &g)
        mpz_clear(&g)
        mpz_clear(&cp)
        mpz_clear(&cq)
        mpz_clear(&tmp)
        return out

    def decrypt_small(self, const uint8_t[:, ::1] cts):
        """Decrypt plaintexts known to be below p from the mod-p half alone."""
        cdef Py_ssize_t rows = cts.shape[0], cw = cts.shape[1], r
        out = np.zeros((rows, self.plain_bytes), dtype=np.uint8)
        if rows == 0:
            return out
        cdef uint8_t[:, ::1] o = out
        cdef __mpz_struct c, mp, tmp
        mpz_init(&c)
        mpz_init(&mp)
        mpz_init(&tmp)
        with nogil:
            for r in range(rows):
                _from_bytes(&c, &cts[r, 0], cw)
                mpz_mod(&tmp, &c, &self.psq)
                mpz_powm(&mp, &tmp, &self.pm1, &self.psq)
                mpz_sub_ui(&mp, &mp, 1)
                mpz_divexact(&mp, &mp, &self.p)
                mpz_mul(&tmp, &mp, &self.hp)
                mpz_mod(&mp, &tmp, &self.p)
                _to_bytes(&o[r, 0], self.plain_bytes, &mp)
        mpz_clear(&c)
        mpz_clear(&mp)
        mpz_clear(&tmp)
        return out

    def decrypt(self, const uint8_t[:, ::1] cts):
        cdef Py_ssize_t rows = cts.shape[0], cw = cts.shape[1], r
        out = np.zeros((rows, self.plain_bytes), dtype=np.uint8)
        if rows == 0:
            return out
        cdef uint8_t[:, ::1] o = out
        cdef __mpz_struct c, mp, mq, tmp
        mpz_init(&c)
        mpz_init(&mp)
        mpz_init(&mq)
        mpz_init(&tmp)
        with nogil:
            for r in range(rows):
                _from_bytes(&c, &cts[r, 0], cw)
                mpz_mod(&tmp, &c, &self.psq)
                mpz_powm(&mp, &tmp, &self.pm1, &self.psq)
                mpz_sub_ui(&mp, &mp, 1)
                mpz_divexact(&mp, &mp, &self.p)
                mpz_mul(&tmp, &mp, &self.hp)
                mpz_mod(&mp, &tmp, &self.p)
                mpz_mod(&tmp, &c, &self.qsq)
                mpz_powm(&mq, &tmp, &self.qm1, &self.qsq)
                mpz_sub_ui(&mq, &mq, 1)
                mpz_divexact(&mq, &mq, &self.q)
                mpz_mul(&tmp, &mq, &self.hq)
                mpz_mod(&mq, &tmp, &self.q)
                # m = mq + q * ((mp - mq) * q^-1 mod p)
                mpz_sub(&tmp, &mp, &mq)
                mpz_mul(&mp, &tmp, &self.q_inv)
                mpz_mod(&tmp, &mp, &self.p)
                mpz_mul(&mp, &tmp, &self.q)
                mpz_add(&c, &mp, &mq)
                _to_bytes(&o[r, 0], self.plain_bytes, &c)
        mpz_clear(&c)
        mpz_clear(&mp)
        mpz_clear(&mq)
        mpz_clear(&tmp)
        return out
