"""End-to-end cross-client label propagation over the simulated bus.

Phases, in order: ``setup`` (clients announce row and label counts),
``hamming`` (codes and the secure distance matrix), ``graph`` (server builds
the graph and sends each client its influence columns), ``rowsums`` (masked
aggregation of ``S_L^(j) Y_L^(j)``) and ``output`` (labels and confidences,
computed locally by each client).

Dropout windows accepted by ``XCLPConfig.dropout_schedule``:

``before_hamming``  client vanishes after setup; as if it never took part
``hamming``         client vanishes after its first cross-client pair
``before_rowsums``  client vanishes once the distances are known
``rowsums``         client vanishes before uploading its masked share
``after_rowsums``   client vanishes before receiving its rows
"""

from __future__ import annotations

import dataclasses
import math
import struct
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from xclp.bus import SERVER, MessageBus, PartyDropout, PartyTranscript
from xclp.data_model import ABSTAIN, Cohort, LabelAssignment
from xclp.graph import SimilarityGraph, build_graph, influence_columns
from xclp.lsh import ProjectionSpec, generate_projection, hash_features
from xclp.ot import make_channel
from xclp.paillier import DEFAULT_KEY_BITS, PHEKeypair
from xclp.secure_hamming import PROTOCOLS, HammingMatrix, compute_hamming_matrix
from xclp.secure_rowsums import FixedPointCodec, pairwise_secrets, secure_row_sums

DROP_WINDOWS = ("before_hamming", "hamming", "before_rowsums", "rowsums", "after_rowsums")
NEGATIVE_SLACK = 1e-9  # solver roundoff tolerated below zero, relative to the row maximum


@dataclass(frozen=True)
class XCLPConfig:
    L: int = 4096
    k: int = 10
    alpha: float = 0.99
    hamming_protocol: str = "ot"
    fraction_bits: int = 24
    seed: int = 0
    dropout_schedule: tuple[tuple[str, str], ...] = ()
    key_bits: int = DEFAULT_KEY_BITS
    ot_channel: str = "simulated"
    concurrent: bool = False
    solver: str = "auto"

    def __post_init__(self) -> None:
        object.__setattr__(self, "dropout_schedule", tuple(tuple(x) for x in self.dropout_schedule))
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.hamming_protocol not in PROTOCOLS:
            raise ValueError(f"hamming_protocol must be one of {PROTOCOLS}")
        if not 0 <= self.seed < 1 << 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        for party, window in self.dropout_schedule:
            if window not in DROP_WINDOWS:
                raise ValueError(f"unknown dropout window {window!r}; expected one of {DROP_WINDOWS}")
        parties = [p for p, _ in self.dropout_schedule]
        if len(set(parties)) != len(parties):
            raise ValueError("a client may appear only once in the dropout schedule")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["dropout_schedule"] = [list(x) for x in self.dropout_schedule]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> XCLPConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# labels and confidences


def _clean_scores(Z) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if not np.all(np.isfinite(Z)):
        raise ValueError("non-finite score")
    peak = np.abs(Z).max(axis=1, keepdims=True) if Z.size else np.zeros((Z.shape[0], 1))
    if np.any(Z < -NEGATIVE_SLACK * np.maximum(peak, 1.0)):
        raise ValueError("negative score entry")
    return np.where(Z < 0, 0.0, Z)


def row_confidences(Z: np.ndarray) -> np.ndarray:
    n, C = Z.shape
    sums = Z.sum(axis=1)
    out = np.zeros(n)
    live = sums > 0
    if C == 1:
        out[live] = 1.0
        return out
    p = Z[live] / sums[live, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    out[live] = 1.0 - (-terms.sum(axis=1)) / math.log(C)
    return np.clip(out, 0.0, 1.0)


def entropy_confidence(score_row) -> float:
    """``1 - H(p) / log C`` for ``p = row / sum(row)``; 0 for a zero row."""
    row = np.asarray(score_row, dtype=np.float64)
    if row.ndim != 1:
        raise ValueError("expected a score vector")
    if np.any(row < 0):
        raise ValueError("negative score entry")
    return float(row_confidences(row[None, :])[0])


def scores_to_assignment(Z) -> LabelAssignment:
    """Argmax labels (lowest class on ties), ABSTAIN for all-zero rows."""
    Z = _clean_scores(Z)
    labels = np.where(Z.any(axis=1), Z.argmax(axis=1), ABSTAIN).astype(np.int64)
    return LabelAssignment(labels, row_confidences(Z))


# ---------------------------------------------------------------------------
# the run


@dataclass(eq=False)
class XCLPResult:
    assignments: dict[str, LabelAssignment]
    scores: dict[str, np.ndarray]
    transcripts: dict[str, PartyTranscript]
    report: dict
    hamming: HammingMatrix | None = None
    graph: SimilarityGraph | None = None
    active: list[str] = field(default_factory=list)  # clients in the graph, in cohort order


def _phase_bytes(bus: MessageBus) -> dict:
    out: dict[str, dict[str, dict[str, int]]] = {}
    for party, t in sorted(bus.transcripts.items()):
        for phase, counts in t.bytes_by_phase().items():
            out.setdefault(phase, {})[party] = counts
    return out


def _accuracy(cohort: Cohort, assignments: Mapping[str, LabelAssignment]) -> tuple[float | None, int]:
    hits = total = 0
    for cid, a in assignments.items():
        c = cohort.client(cid)
        if c.true_labels is None:
            continue
        truth = c.true_labels[c.labeled_count :]
        pred = a.labels[c.labeled_count :]
        known = truth >= 0
        hits += int(np.sum(pred[known] == truth[known]))
        total += int(known.sum())
    return (hits / total if total else None), total


def run_xclp(
    cohort: Cohort,
    config: XCLPConfig,
    *,
    keys: Mapping[str, PHEKeypair] | None = None,
    keep_payloads: bool = False,
) -> XCLPResult:
    """Run the full protocol; returns per-client labels, transcripts and the server report."""
    ids = cohort.client_ids
    windows = dict(config.dropout_schedule)
    unknown = set(windows) - set(ids)
    if unknown:
        raise ValueError(f"dropout schedule names unknown clients {sorted(unknown)}")
    bus = MessageBus(keep_payloads=keep_payloads)
    clock: dict[str, float] = {}
    t = time.perf_counter()

    def lap(phase: str) -> None:
        nonlocal t
        now = time.perf_counter()
        clock[phase] = now - t
        t = now

    # setup: every client announces (n_j, l_j)
    counts: dict[str, tuple[int, int]] = {}
    for c in cohort.clients:
        bus.send("setup", c.client_id, SERVER, "row_counts", struct.pack("<QQ", c.n, c.labeled_count), elements=2)
    for c in cohort.clients:
        counts[c.client_id] = struct.unpack("<QQ", bus.receive(SERVER, c.client_id, "row_counts", "setup").payload)
    lap("setup")

    # phase 1: codes and distances
    bus.mark_phase("hamming")
    for cid, w in windows.items():
        if w == "before_hamming":
            bus.drop(cid)
    projection = generate_projection(ProjectionSpec(config.seed, config.L, cohort.dim))
    codes = [hash_features(c.features, projection, owner=c.client_id) for c in cohort.clients]
    H = compute_hamming_matrix(
        codes,
        config.hamming_protocol,
        bus,
        seed=config.seed,
        keys=keys,
        key_bits=config.key_bits,
        channel=make_channel(config.ot_channel),
        drop_after_pairs={cid: 1 for cid, w in windows.items() if w == "hamming"},
        concurrent=config.concurrent,
    )
    late = [cid for cid, w in windows.items() if w == "hamming" and cid not in bus.dropped]
    if late:
        # a client with no cross pair to run still leaves during the phase
        for cid in late:
            bus.drop(cid)
        present = H.present.copy()
        for cid in late:
            present[cohort.client_slice(cid)] = False
        values = H.values.copy()
        values[~present, :] = -1
        values[:, ~present] = -1
        values.setflags(write=False)
        present.setflags(write=False)
        H = HammingMatrix(values, H.modulus, H.code_length, present)
    active = [cid for cid in ids if cid not in bus.dropped]
    if not active:
        raise PartyDropout("all", "every client dropped before the graph phase")
    lap("hamming")

    # phase 2: graph and influence columns (server)
    bus.mark_phase("graph")
    for cid, w in windows.items():
        if w == "before_rowsums" and cid in active:
            bus.drop(cid)
    sizes = [counts[cid][0] for cid in active]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    n = int(offsets[-1])
    if not config.k < n:
        raise ValueError(f"config invariant violated: k={config.k} must be < n={n}")
    graph = build_graph(H, config.L, config.k)
    rows = {cid: np.arange(offsets[p], offsets[p + 1]) for p, cid in enumerate(active)}
    labeled = {cid: rows[cid][: counts[cid][1]] for cid in active if cid not in bus.dropped}
    influence = influence_columns(graph, labeled, config.alpha, method=config.solver)
    columns: dict[str, np.ndarray] = {}
    for cid, block in influence.blocks.items():
        bus.send("graph", SERVER, cid, "influence_columns", block.astype("<f8").tobytes(), elements=block.size)
        raw = bus.receive(cid, SERVER, "influence_columns", "graph").payload
        columns[cid] = np.frombuffer(raw, dtype="<f8").reshape(n, -1)
    lap("graph")

    # phase 3: local contributions and masked row sums
    bus.mark_phase("rowsums")
    C = cohort.class_count
    contributions = {}
    for cid, S_L in columns.items():
        c = cohort.client(cid)
        Y_L = c.labels[: c.labeled_count].astype(np.float64)
        contributions[cid] = S_L @ Y_L if Y_L.size else np.zeros((n, C))
    stage = {"rowsums": "upload", "after_rowsums": "download"}
    result = secure_row_sums(
        contributions,
        rows,
        bus,
        FixedPointCodec(config.fraction_bits),
        seeds=pairwise_secrets(config.seed, ids),
        dropouts={cid: stage[w] for cid, w in windows.items() if w in stage and cid in active},
    )
    lap("rowsums")

    # clients turn their rows into labels
    bus.mark_phase("output")
    assignments = {cid: scores_to_assignment(z) for cid, z in result.outputs.items()}
    lap("output")

    accuracy, evaluated = _accuracy(cohort, assignments)
    Hr = H.restricted()
    report = {
        "config": config.to_dict(),
        "clients": ids,
        "active": active,
        "dropped": sorted(bus.dropped),
        "n": n,
        "classes": C,
        "hamming": {
            "code_length": config.L,
            "modulus": H.modulus,
            "mean_offdiag": float(Hr[~np.eye(n, dtype=bool)].mean()) if n > 1 else 0.0,
        },
        "graph": graph.stats(),
        "solver": {"method": influence.method, "max_residual": influence.max_residual},
        "rowsum_attempts": result.attempts,
        "bytes": _phase_bytes(bus),
        "accuracy": accuracy,
        "evaluated_rows": evaluated,
        "abstain_count": int(sum(np.sum(a.labels == ABSTAIN) for a in assignments.values())),
        "wall_clock": clock,
    }
    return XCLPResult(
        assignments,
        dict(result.outputs),
        dict(bus.transcripts),
        report,
        hamming=H,
        graph=graph,
        active=active,
    )
