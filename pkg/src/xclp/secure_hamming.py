"""Pairwise Hamming distances between clients' codes, revealed only to the server.

Both protocols end with the server holding two additive shares ``R`` and
``T`` per row pair and computing ``h = T - R mod M``.  The ring modulus is
``M = 2 ** ceil(log2(L + 1))`` so that every distance in ``[0, L]`` has a
unique residue.

OT protocol (client j sends, client k receives), per bit l of row pair (i, i'):
j draws ``r_l`` and offers ``(r_l + b_l, r_l + 1 - b_l)``; k picks with its
own bit and so obtains ``r_l + (b_l xor b'_l)``.  j's ``R`` and k's ``T`` are the
sums over l.

PHE protocol (client j holds the key and encrypts its bits y once):
k evaluates ``f = r + sum_{x_l=1} y_l - sum_{x_l=0} y_l`` homomorphically for each
of its rows ``x``.  That sum counts agreeing bits minus ``L - sum_l x_l``, so
``h(x, y) = r + sum_l x_l - f``.  j's share is ``R = Dec(f) mod M`` and k's is
``T = r + sum_l x_l mod M``.
"""

from __future__ import annotations

import functools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from xclp import _kernels
from xclp._rng import derive_seed, generator
from xclp.bus import SERVER, MessageBus, PartyDropout
from xclp.lsh import BitCodeMatrix
from xclp.ot import ObliviousTransferChannel, SimulatedOT
from xclp.paillier import TEST_KEY_BITS, PaillierError, PaillierPublicKey, PHEKeypair, generate_keypair

PROTOCOLS = ("ot", "phe", "plaintext_debug")
MASK_BITS = 64  # statistical hiding of the PHE share carry


def ring_modulus(L: int) -> int:
    """Smallest power of two strictly greater than ``L``."""
    return 1 << max(1, int(L).bit_length())


def ring_width(M: int) -> int:
    """Bytes per ring element on the wire."""
    bits = (M - 1).bit_length()
    for w in (1, 2, 4, 8):
        if bits <= 8 * w:
            return w
    raise ValueError("ring modulus above 2**64")


def _encode(values: np.ndarray, M: int) -> bytes:
    return np.asarray(values, dtype=np.uint64).astype(f"<u{ring_width(M)}").tobytes()


def _decode(data: bytes, M: int, shape) -> np.ndarray:
    return np.frombuffer(data, dtype=f"<u{ring_width(M)}").astype(np.int64).reshape(shape)


@dataclass(frozen=True, eq=False)
class HammingMatrix:
    values: np.ndarray  # -1 in rows and columns of absent clients
    modulus: int
    code_length: int
    present: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def restricted(self) -> np.ndarray:
        """Matrix over present rows only (the server drops the missing entries)."""
        idx = np.flatnonzero(self.present)
        return self.values[np.ix_(idx, idx)]

    def validate(self) -> None:
        H = self.restricted()
        if not np.array_equal(H, H.T):
            raise AssertionError("Hamming matrix not symmetric")
        if np.any(np.diag(H) != 0):
            raise AssertionError("nonzero Hamming diagonal")
        if H.size and (H.min() < 0 or H.max() > self.code_length):
            raise AssertionError("Hamming entry outside [0, L]")


# ---------------------------------------------------------------------------
# OT


def _ot_block(
    sender_bits: np.ndarray,
    receiver_bits: np.ndarray,
    channel: ObliviousTransferChannel,
    bus: MessageBus,
    round_id: str,
    sender: str,
    receiver: str,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    nj, L = sender_bits.shape
    nk = receiver_bits.shape[0]
    M = ring_modulus(L)
    width = ring_width(M)
    dtype = np.dtype(f"u{width}")
    mask = dtype.type(M - 1)
    srng = generator(derive_seed(seed, round_id, "ot-sender", sender, receiver))
    rrng = generator(derive_seed(seed, round_id, "ot-receiver", sender, receiver))

    # sender side
    r = srng.integers(0, M, size=(nj, nk, L), dtype=dtype)
    b = sender_bits.astype(dtype)[:, None, :]
    z0 = (r + b) & mask
    z1 = (r + dtype.type(1) - b) & mask
    R = r.sum(axis=2, dtype=np.uint64) & np.uint64(M - 1)
    del r, b

    # receiver side
    choice = np.broadcast_to(receiver_bits.astype(np.uint8)[None, :, :], (nj, nk, L)).ravel()
    t = channel.transfer(bus, round_id, sender, receiver, z0.ravel(), z1.ravel(), choice, width, srng, rrng)
    del z0, z1
    T = t.reshape(nj, nk, L).sum(axis=2, dtype=np.uint64) & np.uint64(M - 1)
    return R.astype(np.int64), T.astype(np.int64)


def ot_hamming_pair(
    sender_code: np.ndarray,
    receiver_code: np.ndarray,
    channel: ObliviousTransferChannel | None = None,
    rng_seed: int = 0,
    bus: MessageBus | None = None,
) -> tuple[int, int]:
    """Shares ``(R, T)`` with ``T - R = h(sender_code, receiver_code) mod M``."""
    a = np.asarray(sender_code, dtype=np.uint8).reshape(1, -1)
    b = np.asarray(receiver_code, dtype=np.uint8).reshape(1, -1)
    if a.shape != b.shape:
        raise ValueError("codes must have equal length")
    R, T = _ot_block(a, b, channel or SimulatedOT(), bus or MessageBus(), "ot", "sender", "receiver", rng_seed)
    return int(R[0, 0]), int(T[0, 0])


# ---------------------------------------------------------------------------
# PHE


@functools.lru_cache(maxsize=64)
def _public_key(data: bytes) -> PaillierPublicKey:
    return PaillierPublicKey.from_bytes(data)


def encrypt_code(bits: np.ndarray, keys: PHEKeypair, seed: int) -> np.ndarray:
    """Encrypt every bit of an ``n x L`` code under the owner's key: ``(n * L, cipher_bytes)``."""
    flat = np.asarray(bits, dtype=np.uint8).ravel()
    plain = np.zeros((flat.size, keys.public.plain_bytes), dtype=np.uint8)
    plain[:, 0] = flat
    return keys.secret.encrypt_rows(plain, generator(seed))


def _check_plaintext_room(keys: PHEKeypair, L: int, M: int) -> None:
    top = 2 * L + (M - 1) + M * ((1 << MASK_BITS) - 1)
    if top >= keys.secret.small_bound:
        raise PaillierError(f"key size too small for plaintext range (needs > {top.bit_length()} bits per prime)")


def _phe_block(
    holder_bits: np.ndarray,
    other_bits: np.ndarray,
    keys: PHEKeypair,
    bus: MessageBus,
    round_id: str,
    holder: str,
    evaluator: str,
    seed: int,
    ciphertexts: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    nj, L = holder_bits.shape
    nk = other_bits.shape[0]
    M = ring_modulus(L)
    _check_plaintext_room(keys, L, M)

    # holder -> evaluator: public key and the encrypted code
    if ciphertexts is None:
        ciphertexts = encrypt_code(holder_bits, keys, derive_seed(seed, round_id, "phe-enc", holder))
    bus.send(round_id, holder, evaluator, "phe_public_key", keys.public.to_bytes(), elements=1)
    bus.send(round_id, holder, evaluator, "phe_ciphertexts", ciphertexts, elements=nj * L)

    # evaluator: f(y; x) + r for every (holder row, own row)
    pub = _public_key(bus.receive(evaluator, holder, "phe_public_key", round_id).payload)
    cb = pub.cipher_bytes
    cts = np.frombuffer(bus.receive(evaluator, holder, "phe_ciphertexts", round_id).payload, dtype=np.uint8)
    cts = cts.reshape(nj, L, cb)
    erng = generator(derive_seed(seed, round_id, "phe-eval", holder, evaluator))
    r_low = erng.integers(0, M, size=(nj, nk), dtype=np.int64)
    u = erng.integers(0, 1 << MASK_BITS, size=(nj, nk), dtype=np.uint64)
    xbits = np.ascontiguousarray(other_bits, dtype=np.uint8)
    xsum = xbits.sum(axis=1, dtype=np.int64)
    results = np.zeros((nj, nk, cb), dtype=np.uint8)
    kernel = pub.kernel
    for i in range(nj):
        masks = [L + int(a) + M * int(b) for a, b in zip(r_low[i], u[i])]
        rand_cts = pub.encrypt(masks, erng)
        results[i] = kernel.hamming_eval(np.ascontiguousarray(cts[i]), xbits, rand_cts)
    T = (L + r_low + xsum[None, :]) % M  # r = L + r_low (mod M)
    bus.send(round_id, evaluator, holder, "phe_results", results, elements=nj * nk)
    bus.send(round_id, evaluator, SERVER, "hamming_share", _encode(T, M), elements=nj * nk)

    # holder: decrypt, reduce mod M
    raw = bus.receive(holder, evaluator, "phe_results", round_id).payload
    plain = keys.secret.decrypt_small(np.frombuffer(raw, dtype=np.uint8).reshape(nj * nk, cb))
    R = np.array([v % M for v in plain], dtype=np.int64).reshape(nj, nk)
    bus.send(round_id, holder, SERVER, "hamming_share", _encode(R, M), elements=nj * nk)
    return R, T


def phe_hamming_block(
    holder_code: np.ndarray,
    other_codes: np.ndarray,
    keys: PHEKeypair,
    rng_seed: int = 0,
    bus: MessageBus | None = None,
) -> list[tuple[int, int]]:
    """``(R_k, T_k)`` for each row of ``other_codes``, ``T_k - R_k = h(holder, other_k) mod M``."""
    holder = np.asarray(holder_code, dtype=np.uint8).reshape(1, -1)
    others = np.asarray(other_codes, dtype=np.uint8).reshape(-1, holder.shape[1])
    R, T = _phe_block(holder, others, keys, bus or MessageBus(), "phe", "holder", "evaluator", rng_seed)
    return [(int(a), int(b)) for a, b in zip(R[0], T[0])]


# ---------------------------------------------------------------------------
# full matrix


def _server_block(bus: MessageBus, round_id: str, a: str, b: str, shape, M: int):
    """``(R, T)``: ``R`` from the pair's first party, ``T`` from the second."""
    first = _decode(bus.receive(SERVER, a, "hamming_share", round_id).payload, M, shape)
    second = _decode(bus.receive(SERVER, b, "hamming_share", round_id).payload, M, shape)
    return first, second


def compute_hamming_matrix(
    cohort_codes: Sequence[BitCodeMatrix],
    protocol: str,
    bus: MessageBus,
    *,
    seed: int = 0,
    round_id: str = "hamming",
    keys: Mapping[str, PHEKeypair] | None = None,
    key_bits: int = TEST_KEY_BITS,
    channel: ObliviousTransferChannel | None = None,
    drop_after_pairs: Mapping[str, int] | None = None,
    concurrent: bool = False,
    max_workers: int | None = None,
) -> HammingMatrix:
    """Server-side Hamming matrix over all clients' rows, in cohort order.

    Cross-client pairs run in lexicographic ``(j, k)`` order with ``j < k``;
    ``j`` is the OT sender or the PHE encryptor.  Intra-client blocks are
    computed by their owner and uploaded as the upper triangle.

    ``drop_after_pairs`` maps a client to the number of its cross-client
    pairs after which it disappears (0: before the phase starts).  Rows of
    dropped clients are marked absent.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    if not cohort_codes:
        raise ValueError("no clients")
    L = cohort_codes[0].code_length
    if any(c.code_length != L for c in cohort_codes):
        raise ValueError("all clients must share the code length")
    ids = [c.owner for c in cohort_codes]
    if len(set(ids)) != len(ids) or SERVER in ids:
        raise ValueError("client owners must be distinct and not 'server'")
    drops = dict(drop_after_pairs or {})
    if concurrent and drops:
        raise ValueError("dropout injection requires the deterministic schedule")
    M = ring_modulus(L)
    sizes = [c.n for c in cohort_codes]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    n = int(offsets[-1])
    H = np.full((n, n), -1, dtype=np.int64)
    bits = [c.bits() for c in cohort_codes]
    channel = channel or SimulatedOT()

    for cid, count in drops.items():
        if count == 0:
            bus.drop(cid)

    if protocol == "phe":
        if keys is None:
            keys = {
                cid: generate_keypair(key_bits, seed=derive_seed(seed, "phe-key", cid))
                for cid in ids
                if cid not in bus.dropped
            }
        enc: dict[str, np.ndarray] = {}

    def live(cid: str) -> bool:
        return cid not in bus.dropped

    # intra-client blocks
    for p, c in enumerate(cohort_codes):
        if not live(c.owner):
            continue
        local = _kernels.hamming_cross(c.words, c.words)
        iu = np.triu_indices(c.n, 1)
        if protocol == "plaintext_debug":
            bus.send(round_id, c.owner, SERVER, "codes_plaintext", c.to_bytes(), elements=c.n * L)
        else:
            bus.send(round_id, c.owner, SERVER, "hamming_local", _encode(local[iu], M), elements=iu[0].size)
    uploaded: dict[int, np.ndarray] = {}
    for p, c in enumerate(cohort_codes):
        if not live(c.owner):
            continue
        s = slice(offsets[p], offsets[p + 1])
        if protocol == "plaintext_debug":
            got = BitCodeMatrix.from_bytes(bus.receive(SERVER, c.owner, "codes_plaintext", round_id).payload)
            uploaded[p] = got.words
            H[s, s] = _kernels.hamming_cross(got.words, got.words)
        else:
            vals = _decode(bus.receive(SERVER, c.owner, "hamming_local", round_id).payload, M, (-1,))
            block = np.zeros((c.n, c.n), dtype=np.int64)
            iu = np.triu_indices(c.n, 1)
            block[iu] = vals
            H[s, s] = block + block.T

    if protocol == "plaintext_debug":
        for j in uploaded:
            for k in uploaded:
                if j < k:
                    blk = _kernels.hamming_cross(uploaded[j], uploaded[k])
                    H[offsets[j] : offsets[j + 1], offsets[k] : offsets[k + 1]] = blk
                    H[offsets[k] : offsets[k + 1], offsets[j] : offsets[j + 1]] = blk.T
        return _finish(H, M, L, cohort_codes, offsets, bus)

    pairs = [(j, k) for j in range(len(ids)) for k in range(j + 1, len(ids))]
    done = {cid: 0 for cid in ids}

    def run_pair(j: int, k: int) -> np.ndarray:
        a, b = ids[j], ids[k]
        rid = f"{round_id}:{a}:{b}"
        if protocol == "ot":
            _ot_shares(j, k, rid)
        else:
            if a not in enc:
                enc[a] = encrypt_code(bits[j], keys[a], derive_seed(seed, round_id, "phe-enc", a))
            _phe_block(bits[j], bits[k], keys[a], bus, rid, a, b, seed, ciphertexts=enc[a])
        # the lower-index client holds R under both protocols
        R, T = _server_block(bus, rid, a, b, (sizes[j], sizes[k]), M)
        return (T - R) % M

    def _ot_shares(j: int, k: int, rid: str) -> None:
        a, b = ids[j], ids[k]
        R, T = _ot_block(bits[j], bits[k], channel, bus, rid, a, b, seed)
        bus.send(rid, a, SERVER, "hamming_share", _encode(R, M), elements=R.size)
        bus.send(rid, b, SERVER, "hamming_share", _encode(T, M), elements=T.size)

    def place(j: int, k: int, blk: np.ndarray) -> None:
        H[offsets[j] : offsets[j + 1], offsets[k] : offsets[k + 1]] = blk
        H[offsets[k] : offsets[k + 1], offsets[j] : offsets[j + 1]] = blk.T

    if concurrent:
        todo = [(j, k) for j, k in pairs if live(ids[j]) and live(ids[k])]
        if protocol == "phe":
            # encrypt up front so pair threads only read the shared cache
            for j in sorted({j for j, _ in todo}):
                enc[ids[j]] = encrypt_code(bits[j], keys[ids[j]], derive_seed(seed, round_id, "phe-enc", ids[j]))
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            blocks = list(pool.map(lambda jk: run_pair(*jk), todo))
        for (j, k), blk in zip(todo, blocks):
            place(j, k, blk)
    else:
        for j, k in pairs:
            a, b = ids[j], ids[k]
            if not (live(a) and live(b)):
                continue
            try:
                blk = run_pair(j, k)
            except PartyDropout:
                continue
            place(j, k, blk)
            for cid in (a, b):
                done[cid] += 1
                if drops.get(cid) == done[cid]:
                    bus.drop(cid)
    return _finish(H, M, L, cohort_codes, offsets, bus)


def _finish(H, M, L, cohort_codes, offsets, bus) -> HammingMatrix:
    present = np.zeros(H.shape[0], dtype=bool)
    for p, c in enumerate(cohort_codes):
        if c.owner not in bus.dropped:
            present[offsets[p] : offsets[p + 1]] = True
    H[~present, :] = -1
    H[:, ~present] = -1
    H.setflags(write=False)
    present.setflags(write=False)
    return HammingMatrix(H, M, L, present)
