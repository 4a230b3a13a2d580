import numpy as np
import pytest

from xclp.paillier import PaillierError, generate_keypair

from conftest import cached_key


def test_roundtrip_and_homomorphism(rng):
    keys = cached_key("paillier")
    pub, sec = keys.public, keys.secret
    assert pub.bits == 512
    m1 = [0, 1, 12345, pub.n - 1]
    m2 = [5, 7, 1, 1]
    c1 = pub.encrypt(m1, rng)
    c2 = pub.encrypt(m2, rng)
    assert sec.decrypt(c1) == m1
    assert sec.decrypt(pub.add(c1, c2)) == [(a + b) % pub.n for a, b in zip(m1, m2)]
    assert sec.decrypt(pub.scale(c2, 3)) == [3 * b for b in m2]


def test_encryption_is_randomized(rng):
    pub = cached_key("paillier").public
    a = pub.encrypt([42], rng)
    b = pub.encrypt([42], rng)
    assert not np.array_equal(a, b)


def test_decrypt_small(rng):
    keys = cached_key("paillier")
    vals = [0, 3, 2**100]
    assert keys.secret.decrypt_small(keys.public.encrypt(vals, rng)) == vals


def test_public_key_bytes():
    pub = cached_key("paillier").public
    from xclp.paillier import PaillierPublicKey

    back = PaillierPublicKey.from_bytes(pub.to_bytes())
    assert (back.n, back.hs, back.alpha_bits) == (pub.n, pub.hs, pub.alpha_bits)


def test_seeded_keygen_reproducible():
    a = generate_keypair(256, seed=9)
    b = generate_keypair(256, seed=9)
    assert a.public.n == b.public.n and a.public.n.bit_length() == 256


def test_bad_sizes():
    with pytest.raises(PaillierError):
        generate_keypair(127)
    with pytest.raises(PaillierError):
        cached_key("paillier").public.encrypt([-1], np.random.default_rng(0))
