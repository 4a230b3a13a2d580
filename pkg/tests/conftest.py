import numpy as np
import pytest

from xclp._rng import derive_seed
from xclp.paillier import TEST_KEY_BITS, generate_keypair

_KEYS: dict = {}


def cached_key(name: str):
    """512-bit Paillier keys, generated once per process and reused."""
    if name not in _KEYS:
        _KEYS[name] = generate_keypair(TEST_KEY_BITS, seed=derive_seed(1234, "test-key", name))
    return _KEYS[name]


def keys_for(names):
    return {n: cached_key(n) for n in names}


def popcount_oracle(bits_a: np.ndarray, bits_b: np.ndarray) -> np.ndarray:
    """Hamming distances from unpacked 0/1 rows, without the kernels."""
    a = np.asarray(bits_a, dtype=np.int64)
    b = np.asarray(bits_b, dtype=np.int64)
    return (a[:, None, :] != b[None, :, :]).sum(axis=2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
