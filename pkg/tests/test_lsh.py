import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xclp.lsh import BitCodeMatrix, ProjectionSpec, estimate_cosine, generate_projection, hamming_matrix, hash_features

from conftest import popcount_oracle


def test_projection_shared_and_seeded():
    a = generate_projection(ProjectionSpec(3, 64, 8))
    b = generate_projection(ProjectionSpec(3, 64, 8))
    c = generate_projection(ProjectionSpec(4, 64, 8))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert generate_projection(ProjectionSpec(0, 4096, 128)).shape == (4096, 128)


def test_scale_invariance_and_antisymmetry(rng):
    P = generate_projection(ProjectionSpec(1, 256, 10))
    v = rng.standard_normal((1, 10))
    b1 = hash_features(v, P).bits()
    assert np.array_equal(b1, hash_features(3 * v, P).bits())
    neg = hash_features(-v, P).bits()
    # sign(0) = 1 can only collide on exact zeros, which do not occur here
    assert np.array_equal(neg, 1 - b1)


@pytest.mark.parametrize("L", [8, 64, 4096])
def test_estimate_cosine_anchors(L):
    assert estimate_cosine(0, L) == 1.0
    assert abs(estimate_cosine(L // 2, L)) <= 1e-12
    assert estimate_cosine(L, L) == -1.0


def test_estimate_cosine_range_check():
    with pytest.raises(ValueError):
        estimate_cosine(9, 8)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 200), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32))
def test_hamming_matches_popcount(L, na, nb, seed):
    r = np.random.default_rng(seed)
    a = r.integers(0, 2, size=(na, L))
    b = r.integers(0, 2, size=(nb, L))
    got = hamming_matrix(BitCodeMatrix.from_bits(a), BitCodeMatrix.from_bits(b))
    assert np.array_equal(got, popcount_oracle(a, b))


def test_bitcode_bytes_roundtrip(rng):
    code = BitCodeMatrix.from_bits(rng.integers(0, 2, size=(5, 70)))
    back = BitCodeMatrix.from_bytes(code.to_bytes())
    assert np.array_equal(back.bits(), code.bits())
