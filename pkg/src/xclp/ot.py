"""1-out-of-2 oblivious transfer channels.

``DiffieHellmanOT`` is the Chou-Orlandi "simplest OT" over the 2048-bit MODP
group of RFC 3526 (honest-but-curious).  ``SimulatedOT`` hands the receiver
its chosen values directly and redacts them from the sender's transcript;
it has the same interface and is what large simulations use.

Both move ring elements of ``width`` bytes, one transfer per array entry.
"""

from __future__ import annotations

import hashlib
from typing import Protocol

import gmpy2
import numpy as np

from xclp.bus import MessageBus

MODP_2048 = int(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74020BBEA63B139B22514A08798E3404DD"
    "EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F"
    "83655D23DCA3AD961C62F356208552BB9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF6955817183995497CEA956AE515D2261898FA0510"
    "15728E5A8AACAA68FFFFFFFFFFFFFFFF",
    16,
)
GENERATOR = 2  # generates the prime-order subgroup of size (p - 1) / 2
EXPONENT_BYTES = 32  # short exponents, 256 bits
GROUP_BYTES = 256


class ObliviousTransferChannel(Protocol):
    name: str

    def transfer(
        self,
        bus: MessageBus,
        round_id: str,
        sender: str,
        receiver: str,
        z0: np.ndarray,
        z1: np.ndarray,
        choice: np.ndarray,
        width: int,
        sender_rng: np.random.Generator,
        receiver_rng: np.random.Generator,
    ) -> np.ndarray:
        """Receiver obtains ``z0[t]`` if ``choice[t] == 0`` else ``z1[t]``."""
        ...


def _le(values: np.ndarray, width: int) -> bytes:
    return np.asarray(values, dtype=f"<u{width}").tobytes()


def _from_le(data: bytes, width: int) -> np.ndarray:
    return np.frombuffer(data, dtype=f"<u{width}").astype(np.uint64)


def _check(z0: np.ndarray, z1: np.ndarray, choice: np.ndarray, width: int) -> None:
    if width not in (1, 2, 4, 8):
        raise ValueError("ring element width must be 1, 2, 4 or 8 bytes")
    if not (z0.shape == z1.shape == choice.shape) or z0.ndim != 1:
        raise ValueError("z0, z1 and choice must be equal-length vectors")


class SimulatedOT:
    """Trusted in-process exchange: one message carrying only the chosen values."""

    name = "simulated"

    def transfer(self, bus, round_id, sender, receiver, z0, z1, choice, width, sender_rng, receiver_rng):
        _check(z0, z1, choice, width)
        chosen = np.where(choice.astype(bool), z1, z0)
        bus.send(round_id, sender, receiver, "ot_values", _le(chosen, width), elements=chosen.size, redact_sender=True)
        env = bus.receive(receiver, sender, "ot_values", round_id)
        return _from_le(env.payload, width)


def _point_bytes(x) -> bytes:
    return int(x).to_bytes(GROUP_BYTES, "little")


def _pad(index: int, a_bytes: bytes, point, width: int) -> int:
    h = hashlib.sha256()
    h.update(index.to_bytes(8, "little"))
    h.update(a_bytes)
    h.update(_point_bytes(point))
    return int.from_bytes(h.digest()[:width], "little")


def _exponent(rng: np.random.Generator) -> gmpy2.mpz:
    return gmpy2.mpz(int.from_bytes(rng.bytes(EXPONENT_BYTES), "little") | 1)


class DiffieHellmanOT:
    """Chou-Orlandi OT; one sender key ``A = g^a`` per batch, keys bound to the transfer index."""

    name = "dh"

    def __init__(self, modulus: int = MODP_2048, generator: int = GENERATOR) -> None:
        self.p = gmpy2.mpz(modulus)
        self.g = gmpy2.mpz(generator)

    def transfer(self, bus, round_id, sender, receiver, z0, z1, choice, width, sender_rng, receiver_rng):
        _check(z0, z1, choice, width)
        p, g = self.p, self.g
        count = z0.size

        # sender: A = g^a
        a = _exponent(sender_rng)
        A = gmpy2.powmod(g, a, p)
        bus.send(round_id, sender, receiver, "ot_setup", _point_bytes(A), elements=1)

        # receiver: B = g^b, or A * g^b to choose the second value
        A_r = gmpy2.mpz(int.from_bytes(bus.receive(receiver, sender, "ot_setup", round_id).payload, "little"))
        a_bytes = _point_bytes(A_r)
        bs = [_exponent(receiver_rng) for _ in range(count)]
        points = []
        for b, c in zip(bs, choice.tolist()):
            B = gmpy2.powmod(g, b, p)
            points.append(B * A_r % p if c else B)
        bus.send(round_id, receiver, sender, "ot_choice", b"".join(map(_point_bytes, points)), elements=count)

        # sender: k0 = H(B^a), k1 = H((B / A)^a); send both values under their keys
        raw = bus.receive(sender, receiver, "ot_choice", round_id).payload
        a_inv = gmpy2.invert(A, p)
        a_bytes_s = _point_bytes(A)
        mask = (1 << (8 * width)) - 1
        e = np.zeros((count, 2), dtype=np.uint64)
        for t in range(count):
            B = gmpy2.mpz(int.from_bytes(raw[t * GROUP_BYTES : (t + 1) * GROUP_BYTES], "little"))
            k0 = _pad(t, a_bytes_s, gmpy2.powmod(B, a, p), width)
            k1 = _pad(t, a_bytes_s, gmpy2.powmod(B * a_inv % p, a, p), width)
            e[t, 0] = (int(z0[t]) ^ k0) & mask
            e[t, 1] = (int(z1[t]) ^ k1) & mask
        bus.send(round_id, sender, receiver, "ot_values", _le(e.ravel(), width), elements=count)

        # receiver: decrypt the chosen one with H(A^b)
        enc = _from_le(bus.receive(receiver, sender, "ot_values", round_id).payload, width).reshape(count, 2)
        out = np.zeros(count, dtype=np.uint64)
        for t, (b, c) in enumerate(zip(bs, choice.tolist())):
            out[t] = int(enc[t, c]) ^ _pad(t, a_bytes, gmpy2.powmod(A_r, b, p), width)
        return out


def make_channel(name: str) -> ObliviousTransferChannel:
    if name in ("simulated", "sim"):
        return SimulatedOT()
    if name in ("dh", "diffie-hellman"):
        return DiffieHellmanOT()
    raise ValueError(f"unknown OT channel {name!r}")
