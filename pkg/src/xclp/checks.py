"""Randomized correctness suites behind ``xclp check``.

Each suite draws fresh fixtures from a seed, compares a protocol output with
an independent plaintext computation and reports one line per trial.  With
``inject_fault`` one value is corrupted before the comparison, which must
make the suite fail.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from xclp._rng import derive_seed, generator
from xclp.bus import MessageBus
from xclp.data_model import split_synthetic
from xclp.graph import build_graph
from xclp.lsh import BitCodeMatrix, hamming_matrix
from xclp.oracle import propagate_closed_form, propagate_iterative
from xclp.paillier import TEST_KEY_BITS, generate_keypair
from xclp.protocol import XCLPConfig, run_xclp
from xclp.secure_hamming import compute_hamming_matrix
from xclp.secure_rowsums import FixedPointCodec, secure_row_sums

SUITES = ["hamming", "rowsums", "lsh", "propagation", "oracle"]


@dataclass
class SuiteOutcome:
    trials: int = 0
    failures: int = 0
    details: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.trials > 0 and self.failures == 0

    def record(self, ok: bool, line: str) -> None:
        self.trials += 1
        self.failures += 0 if ok else 1
        self.details.append(f"trial {self.trials - 1}: {'ok' if ok else 'FAIL'} {line}")


def _random_codes(rng: np.random.Generator, L: int, sizes: list[int]) -> list[BitCodeMatrix]:
    return [
        BitCodeMatrix.from_bits(rng.integers(0, 2, size=(m, L)), owner=f"c{j}")
        for j, m in enumerate(sizes)
    ]


def suite_hamming(trials: int, seed: int, inject_fault: bool) -> SuiteOutcome:
    out = SuiteOutcome()
    keys: dict[str, object] = {}
    for t in range(trials):
        rng = generator(derive_seed(seed, "check-hamming", t))
        L = int(rng.choice([8, 64, 1024]))
        m = int(rng.integers(2, 6))
        sizes = [int(s) for s in rng.integers(1, 12, size=m)]
        protocol = ("ot", "phe")[t % 2]
        codes = _random_codes(rng, L, sizes)
        for c in codes:
            if c.owner not in keys:
                keys[c.owner] = generate_keypair(TEST_KEY_BITS, seed=derive_seed(seed, "check-key", c.owner))
        H = compute_hamming_matrix(codes, protocol, MessageBus(), seed=t, keys=keys).values.copy()
        words = np.vstack([c.words for c in codes])
        expected = hamming_matrix(BitCodeMatrix(words, L), BitCodeMatrix(words, L))
        if inject_fault and t == 0:
            H[0, -1] += 1
        bad = int(np.sum(H != expected))
        out.record(bad == 0, f"L={L} n={sum(sizes)} clients={m} protocol={protocol} mismatches={bad}")
    return out


def suite_rowsums(trials: int, seed: int, inject_fault: bool) -> SuiteOutcome:
    out = SuiteOutcome()
    codec = FixedPointCodec()
    for t in range(trials):
        rng = generator(derive_seed(seed, "check-rowsums", t))
        m = int(rng.integers(1, 7))
        n = int(rng.integers(m, 40))
        C = int(rng.integers(1, 6))
        owner = np.sort(np.concatenate([np.arange(m), rng.integers(0, m, size=n - m)]))
        ids = [f"c{j}" for j in range(m)]
        part = {ids[j]: np.flatnonzero(owner == j) for j in range(m)}
        contrib = {cid: rng.random((n, C)) * 10 for cid in ids}
        res = secure_row_sums(contrib, part, MessageBus(), codec, root_seed=t)
        total = sum(contrib.values())
        ring_total = sum(codec.encode(z) for z in contrib.values())
        err = 0.0
        exact = True
        for cid in ids:
            got = res.outputs[cid].copy()
            if inject_fault and t == 0 and cid == ids[0]:
                got[0, 0] += 1.0
            err = max(err, float(np.abs(got - total[part[cid]]).max()))
            exact &= bool(np.array_equal(res.ring_outputs[cid], ring_total[part[cid]]))
        ok = exact and err <= m * 2.0**-codec.fraction_bits
        out.record(ok, f"clients={m} n={n} C={C} ring_exact={exact} max_err={err:.2e}")
    return out


def suite_lsh(trials: int, seed: int, inject_fault: bool) -> SuiteOutcome:
    from xclp.lsh import ProjectionSpec, estimate_cosine, generate_projection, hash_features

    out = SuiteOutcome()
    for t in range(trials):
        rng = generator(derive_seed(seed, "check-lsh", t))
        d = int(rng.integers(2, 64))
        L = 4096
        pairs = 100
        X = rng.standard_normal((2 * pairs, d))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        P = generate_projection(ProjectionSpec(t, L, d))
        codes = hash_features(X, P).bits()
        h = np.sum(codes[0::2] != codes[1::2], axis=1)
        est = estimate_cosine(h, L)
        true = np.sum(X[0::2] * X[1::2], axis=1)
        if inject_fault and t == 0:
            est = -est
        frac = float(np.mean(np.abs(est - true) <= 0.1))
        out.record(frac >= 0.99, f"d={d} L={L} within_0.1={frac:.3f}")
    return out


def suite_propagation(trials: int, seed: int, inject_fault: bool) -> SuiteOutcome:
    out = SuiteOutcome()
    for t in range(trials):
        rng = generator(derive_seed(seed, "check-prop", t))
        n = int(rng.integers(5, 80))
        C = int(rng.integers(2, 5))
        L = 256
        k = int(rng.integers(1, min(10, n - 1) + 1))
        bits = rng.integers(0, 2, size=(n, L))
        code = BitCodeMatrix.from_bits(bits)
        g = build_graph(hamming_matrix(code, code), L, k)
        Y = np.zeros((n, C))
        lab = rng.choice(n, size=max(1, n // 5), replace=False)
        Y[lab, rng.integers(0, C, size=lab.size)] = 1.0
        closed = propagate_closed_form(g.normalized, Y, 0.99).Z
        it = propagate_iterative(g.normalized, Y, 0.99, tol=1e-10).Z
        if inject_fault and t == 0:
            it = it.copy()
            it[0, 0] += 1e-3
        err = float(np.abs(closed - it).max())
        out.record(err <= 1e-8, f"n={n} k={k} C={C} max_diff={err:.2e}")
    return out


def suite_oracle(trials: int, seed: int, inject_fault: bool) -> SuiteOutcome:
    out = SuiteOutcome()
    for t in range(trials):
        rng = generator(derive_seed(seed, "check-oracle", t))
        m = int(rng.integers(2, 5))
        per = int(rng.integers(8, 30))
        C = int(rng.integers(2, 5))
        cohort = split_synthetic(m, per, 8, C, float(rng.uniform(0.05, 0.5)), seed=t, separation=4.0)
        protocol = ("plaintext_debug", "ot", "phe")[t % 3]
        cfg = XCLPConfig(L=128, k=min(5, cohort.n - 1), alpha=0.99, hamming_protocol=protocol, seed=t, key_bits=TEST_KEY_BITS)
        res = run_xclp(cohort, cfg)
        Z = np.vstack([res.scores[c] for c in res.active])
        labels = np.concatenate([res.assignments[c].labels for c in res.active])
        ref = propagate_closed_form(res.graph.normalized, cohort.stacked_labels(), cfg.alpha)
        if inject_fault and t == 0:
            labels = labels.copy()
            labels[0] = (labels[0] + 1) % C
        err = float(np.abs(Z - ref.Z).max())
        same = bool(np.array_equal(labels, ref.labels))
        out.record(same and err <= cohort.n * 2.0**-cfg.fraction_bits, f"n={cohort.n} C={C} protocol={protocol} labels_equal={same} max_err={err:.2e}")
    return out


_SUITES = {
    "hamming": suite_hamming,
    "rowsums": suite_rowsums,
    "lsh": suite_lsh,
    "propagation": suite_propagation,
    "oracle": suite_oracle,
}


def run_suite(name: str, trials: int = 20, seed: int = 0, inject_fault: bool = False) -> SuiteOutcome:
    if name not in _SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {SUITES}")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    return _SUITES[name](trials, seed, inject_fault)
