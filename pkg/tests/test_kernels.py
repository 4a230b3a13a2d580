"""The compiled and pure-Python kernels must agree bit for bit."""

import numpy as np
import pytest

import xclp._kernels as K

from conftest import cached_key

BACKENDS = K.backends()
pytestmark = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernels not built")


def test_backend_selected():
    assert K.BACKEND == "cython"


@pytest.mark.parametrize("L", [1, 63, 64, 65, 1000])
def test_pack_signs(rng, L):
    V = rng.standard_normal((7, L))
    V[0, 0] = 0.0  # sign(0) = 1
    V = V[:, ::-1] if L > 1 else V  # non-contiguous input
    a = BACKENDS["python"].pack_signs(V)
    b = BACKENDS["cython"].pack_signs(V)
    assert np.array_equal(a, b)


def test_hamming_cross(rng):
    a = rng.integers(0, 1 << 63, size=(9, 5), dtype=np.uint64)
    b = rng.integers(0, 1 << 63, size=(4, 5), dtype=np.uint64)
    assert np.array_equal(BACKENDS["python"].hamming_cross(a, b), BACKENDS["cython"].hamming_cross(a, b))


@pytest.mark.parametrize("k", [1, 3, 9])
def test_topk_ties_lowest_column(rng, k):
    A = np.round(rng.random((10, 10)), 1)  # many ties
    np.fill_diagonal(A, 1.0)
    p = BACKENDS["python"].topk_rows(A, k)
    c = BACKENDS["cython"].topk_rows(A, k)
    assert np.array_equal(p, c)
    for i in range(10):
        assert i not in p[i]
        others = [j for j in range(10) if j != i]
        ref = sorted(others, key=lambda j: (-A[i, j], j))[:k]
        assert sorted(p[i].tolist()) == sorted(ref)


def test_paillier_kernels_agree(rng):
    keys = cached_key("kernels")
    pub, sec = keys.public, keys.secret
    L = 40
    plain = np.zeros((L, pub.plain_bytes), dtype=np.uint8)
    plain[:, 0] = rng.integers(0, 2, size=L)
    alphas = pub.random_alphas(L, rng)
    xbits = rng.integers(0, 2, size=(6, L), dtype=np.uint8)
    outs = {}
    for name, mod in BACKENDS.items():
        pk = mod.PaillierPublicKernel(pub.n, pub.hs, pub.alpha_bits)
        sk = mod.PaillierPrivateKernel(sec.p, sec.q, pub.hs, pub.alpha_bits)
        c_pub = pk.encrypt(plain, alphas)
        c_crt = sk.encrypt(plain, alphas)
        assert np.array_equal(c_pub, c_crt)
        rand = pk.encrypt(np.zeros((6, pub.plain_bytes), dtype=np.uint8), alphas[:6])
        ev = pk.hamming_eval(c_pub, xbits, rand)
        outs[name] = (c_pub, ev, sk.decrypt(ev), sk.decrypt_small(c_pub))
    for p, c in zip(outs["python"], outs["cython"]):
        assert np.array_equal(p, c)
