"""Masked row-partitioned summation.

Each client adds a pairwise mask to its fixed-point contribution and zeroes
its own rows before upload.  The server sums the uploads and returns to
client j only ``Zhat[R_j]``; adding back its own masked rows, the client
recovers ``Z[R_j]``.  Masks are built from pairwise secrets with opposite
signs, so they cancel in the sum exactly over ``Z_{2^64}``.

If a client fails to upload, the server aborts and restarts the round
without it, on fresh masks and over the remaining clients' rows only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from xclp._rng import derive_seed, raw_uint64
from xclp.bus import SERVER, MessageBus, PartyDropout

DEFAULT_FRACTION_BITS = 24


class FixedPointOverflow(ArithmeticError):
    """Fixed-point range precondition violated."""


@dataclass(frozen=True)
class FixedPointCodec:
    fraction_bits: int = DEFAULT_FRACTION_BITS

    def __post_init__(self) -> None:
        if not 0 <= self.fraction_bits < 62:
            raise ValueError("fraction_bits must lie in [0, 62)")

    @property
    def scale(self) -> float:
        return float(1 << self.fraction_bits)

    def bound(self, parties: int) -> float:
        """Largest magnitude that may be summed over ``parties`` inputs without wrapping."""
        return 2.0 ** (63 - self.fraction_bits) / max(1, parties)

    def check_range(self, x: np.ndarray, parties: int) -> None:
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise FixedPointOverflow("non-finite value in fixed-point input")
        peak = float(np.abs(x).max()) if x.size else 0.0
        if peak >= self.bound(parties):
            raise FixedPointOverflow(
                f"|x| = {peak:.3e} exceeds fixed-point bound {self.bound(parties):.3e} for {parties} parties"
            )

    def encode(self, x) -> np.ndarray:
        """``round(x * 2^f) mod 2^64`` (two's complement)."""
        x = np.asarray(x, dtype=np.float64)
        self.check_range(x, 1)
        return np.rint(x * self.scale).astype(np.int64).view(np.uint64)

    def decode(self, u) -> np.ndarray:
        return np.asarray(u, dtype=np.uint64).view(np.int64).astype(np.float64) / self.scale


@dataclass(frozen=True, eq=False)
class MaskedShare:
    matrix: np.ndarray  # uint64, n x C
    owner: str
    zeroed_rows: np.ndarray

    def __post_init__(self) -> None:
        if np.any(self.matrix[self.zeroed_rows]):
            raise ValueError("zeroed rows of a masked share must be 0")

    def to_bytes(self) -> bytes:
        return self.matrix.astype("<u8").tobytes()


def _pair_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a < b else (b, a)


def pairwise_secrets(root: int, participants: Sequence[str]) -> dict[tuple[str, str], int]:
    """Stand-in for a key exchange: one shared secret per unordered pair."""
    return {
        _pair_key(a, b): derive_seed(root, "pair-secret", *_pair_key(a, b))
        for i, a in enumerate(participants)
        for b in participants[i + 1 :]
    }


def derive_pairwise_masks(
    participants: Sequence[str],
    shape: tuple[int, int],
    seeds: Mapping[tuple[str, str], int],
    round_id: str = "rowsums",
) -> dict[str, np.ndarray]:
    """``M^(j) = sum_k sign(j, k) * PRG(s_jk)`` with ``sign = +1`` iff ``j`` precedes ``k``."""
    count = int(np.prod(shape))
    masks = {p: np.zeros(count, dtype=np.uint64) for p in participants}
    pos = {p: i for i, p in enumerate(participants)}
    for i, a in enumerate(participants):
        for b in participants[i + 1 :]:
            key = _pair_key(a, b)
            if key not in seeds:
                raise KeyError(f"missing pairwise secret for {key}")
            stream = raw_uint64(derive_seed(seeds[key], "mask", round_id), count)
            first, second = (a, b) if pos[a] < pos[b] else (b, a)
            masks[first] += stream  # uint64 arithmetic wraps mod 2^64
            masks[second] -= stream
    return {p: m.reshape(shape) for p, m in masks.items()}


@dataclass
class RowSumResult:
    outputs: dict[str, np.ndarray]
    participants: list[str]
    attempts: int
    ring_outputs: dict[str, np.ndarray] = field(default_factory=dict)


def _ring_matrix(data: bytes, shape) -> np.ndarray:
    return np.frombuffer(data, dtype="<u8").astype(np.uint64).reshape(shape)


def secure_row_sums(
    contributions: Mapping[str, np.ndarray],
    row_partition: Mapping[str, np.ndarray],
    bus: MessageBus,
    codec: FixedPointCodec | None = None,
    *,
    seeds: Mapping[tuple[str, str], int] | None = None,
    root_seed: int = 0,
    round_id: str = "rowsums",
    dropouts: Mapping[str, str] | None = None,
) -> RowSumResult:
    """Each client obtains ``(sum_j contributions[j])[R_j]``.

    ``dropouts`` injects failures: ``{"c": "upload"}`` makes client ``c``
    vanish before sending its share (the round restarts without it),
    ``{"c": "download"}`` after the server has aggregated (``c`` gets no
    output, the others are unaffected).
    """
    codec = codec or FixedPointCodec()
    dropouts = dict(dropouts or {})
    participants = [p for p in row_partition if p not in bus.dropped]
    if set(contributions) - set(row_partition):
        raise ValueError("contribution from a client without a row set")
    n, C = next(iter(contributions.values())).shape if contributions else (0, 0)
    all_rows = np.concatenate([np.asarray(r, dtype=np.int64) for r in row_partition.values()]) if row_partition else np.zeros(0, np.int64)
    if not np.array_equal(np.sort(all_rows), np.arange(n)):
        raise ValueError("row_partition must partition [0, n)")
    for cid, z in contributions.items():
        if z.shape != (n, C):
            raise ValueError(f"contribution of {cid} has shape {z.shape}, expected {(n, C)}")
    if seeds is None:
        seeds = pairwise_secrets(root_seed, list(row_partition))

    attempt = 0
    while True:
        attempt += 1
        if not participants:
            raise PartyDropout("all", "no client left for row sums")
        rid = f"{round_id}/{attempt}"
        # rows of clients that are gone are excluded so the server never sees them unmasked
        rows = np.sort(np.concatenate([np.asarray(row_partition[p], dtype=np.int64) for p in participants]))
        local = {p: np.searchsorted(rows, np.asarray(row_partition[p], dtype=np.int64)) for p in participants}
        shape = (rows.size, C)
        for z in contributions.values():
            codec.check_range(z[rows], len(participants))
        masks = derive_pairwise_masks(participants, shape, seeds, rid)

        # clients: obfuscate, zero own rows, upload
        own: dict[str, np.ndarray] = {}
        for p in participants:
            if dropouts.get(p) == "upload":
                bus.drop(p)
                dropouts.pop(p)
                continue
            z = contributions.get(p)
            enc = np.zeros(shape, dtype=np.uint64) if z is None else codec.encode(z[rows])
            tilde = enc + masks[p]
            own[p] = tilde[local[p]]
            share = tilde.copy()
            share[local[p]] = 0
            msg = MaskedShare(share, p, local[p])
            bus.send(rid, p, SERVER, "masked_share", msg.to_bytes(), elements=share.size)

        # server: aggregate; a missing share aborts the attempt
        missing = [p for p in participants if p in bus.dropped]
        total = np.zeros(shape, dtype=np.uint64)
        for p in participants:
            if p in missing:
                continue
            total += _ring_matrix(bus.receive(SERVER, p, "masked_share", rid).payload, shape)
        if missing:
            participants = [p for p in participants if p not in missing]
            continue

        for p in participants:
            if dropouts.get(p) == "download":
                bus.drop(p)
        ring_out: dict[str, np.ndarray] = {}
        outputs: dict[str, np.ndarray] = {}
        for p in participants:
            if p in bus.dropped:
                continue
            block = total[local[p]]
            bus.send(rid, SERVER, p, "rowsum_block", block.astype("<u8").tobytes(), elements=block.size)
            got = _ring_matrix(bus.receive(p, SERVER, "rowsum_block", rid).payload, block.shape)
            ring_out[p] = got + own[p]
            outputs[p] = codec.decode(ring_out[p])
        return RowSumResult(outputs, participants, attempt, ring_out)
