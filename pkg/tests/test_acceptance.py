"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Expected values come from independent plaintext computations (popcount over
unpacked bits, dense linear solves, direct summation), never from the code
under test.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats

from xclp._rng import derive_seed
from xclp.bus import SERVER, MessageBus
from xclp.data_model import ClientDataset, Cohort, split_synthetic, synthetic_test_set
from xclp.graph import build_graph, graph_from_similarity, influence_columns
from xclp.lsh import BitCodeMatrix, ProjectionSpec, estimate_cosine, generate_projection, hash_features
from xclp.oracle import propagate_closed_form, propagate_iterative
from xclp.ot import DiffieHellmanOT
from xclp.pipeline import RoundConfig, init_model, train_fedavg_xclp, weighted_cross_entropy
from xclp.protocol import XCLPConfig, row_confidences, run_xclp, scores_to_assignment
from xclp.secure_hamming import compute_hamming_matrix
from xclp.secure_rowsums import FixedPointCodec, secure_row_sums

from conftest import keys_for, popcount_oracle


@pytest.fixture
def verdict(capsys):
    def emit(number: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


def _random_partition(rng, n, m):
    cuts = np.sort(rng.choice(np.arange(1, n), m - 1, replace=False))
    return np.diff(np.concatenate([[0], cuts, [n]])).astype(int)


def _client_names(m):
    return [f"client{j:03d}" for j in range(m)]


# ---------------------------------------------------------------------------
# 1. crypto-layer exactness


def test_criterion_1_hamming_exactness(verdict):
    rng = np.random.default_rng(101)
    keys = keys_for(_client_names(10))  # generated before the clock starts
    t0 = time.perf_counter()
    bad = []
    fixtures = 0
    for L in (8, 64, 1024):
        for f in range(100):
            m = int(rng.integers(2, 11))
            n = int(rng.integers(2 * m, 201))
            sizes = _random_partition(rng, n, m)
            bits = rng.integers(0, 2, size=(n, L))
            offs = np.concatenate([[0], np.cumsum(sizes)])
            codes = [
                BitCodeMatrix.from_bits(bits[offs[j] : offs[j + 1]], owner=name)
                for j, name in enumerate(_client_names(m))
            ]
            expected = popcount_oracle(bits, bits)
            for protocol in ("ot", "phe"):
                H = compute_hamming_matrix(codes, protocol, MessageBus(), seed=f, keys=keys)
                if not np.array_equal(H.values, expected):
                    bad.append((L, f, protocol, int(np.sum(H.values != expected))))
            fixtures += 1
    elapsed = time.perf_counter() - t0

    # the real Diffie-Hellman OT channel on a few small fixtures
    dh_bad = 0
    for f in range(3):
        sizes = [2, 3, 2]
        bits = rng.integers(0, 2, size=(7, 64))
        offs = np.concatenate([[0], np.cumsum(sizes)])
        codes = [BitCodeMatrix.from_bits(bits[offs[j] : offs[j + 1]], owner=f"c{j}") for j in range(3)]
        H = compute_hamming_matrix(codes, "ot", MessageBus(), seed=f, channel=DiffieHellmanOT())
        dh_bad += int(np.sum(H.values != popcount_oracle(bits, bits)))

    ok = not bad and dh_bad == 0 and elapsed <= 300
    verdict(1, ok, f"{fixtures} fixtures x {{ot, phe}}, mismatching matrices={len(bad)}, "
                   f"dh-ot mismatches={dh_bad}, runtime={elapsed:.1f}s (limit 300s)")


# ---------------------------------------------------------------------------
# 2. end-to-end oracle equivalence


def _oracle_for(cohort, cfg):
    """Independent plaintext pipeline: hash, popcount, graph, dense solve."""
    P = generate_projection(ProjectionSpec(cfg.seed, cfg.L, cohort.dim))
    bits = hash_features(cohort.stacked_features(), P).bits()
    g = build_graph(popcount_oracle(bits, bits), cfg.L, cfg.k)
    return propagate_closed_form(g.normalized, cohort.stacked_labels(), cfg.alpha)


def test_criterion_2_oracle_equivalence(verdict):
    rng = np.random.default_rng(202)
    protocols = ("plaintext_debug", "ot", "phe")
    t0 = time.perf_counter()
    failures = []
    worst = 0.0
    count = {p: 0 for p in protocols}
    for trial in range(51):
        m = int(rng.integers(2, 7))
        C = int(rng.integers(2, 11))
        protocol = protocols[trial % 3]
        per = int(rng.integers(max(C, 5), (200 if protocol == "phe" else 500) // m + 1))
        cohort = split_synthetic(m, per, int(rng.integers(4, 20)), C, float(rng.uniform(0.05, 0.4)),
                                 "iid" if trial % 2 else "class_skew", seed=trial,
                                 separation=float(rng.uniform(1.5, 5.0)))
        cfg = XCLPConfig(L=int(rng.choice([64, 256])), k=int(rng.integers(2, 11)), alpha=0.99,
                         hamming_protocol=protocol, seed=trial, key_bits=512)
        res = run_xclp(cohort, cfg, keys=keys_for(cohort.client_ids) if protocol == "phe" else None)
        ref = _oracle_for(cohort, cfg)
        Z = np.vstack([res.scores[c] for c in res.active])
        labels = np.concatenate([res.assignments[c].labels for c in res.active])
        err = float(np.abs(Z - ref.Z).max())
        worst = max(worst, err / cohort.n)
        if err > 2.0**-24 * cohort.n or not np.array_equal(labels, ref.labels):
            failures.append((trial, protocol, err, int(np.sum(labels != ref.labels))))
        count[protocol] += 1
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed <= 600
    verdict(2, ok, f"cohorts per backend {count}, failures={failures}, "
                   f"max |dZ|/n={worst:.2e} (limit {2.0**-24:.2e}), runtime={elapsed:.1f}s (limit 600s)")


# ---------------------------------------------------------------------------
# 3. LSH concentration


def test_criterion_3_lsh_concentration(verdict):
    rng = np.random.default_rng(303)
    L, pairs, d = 4096, 1000, 32
    X = rng.standard_normal((2 * pairs, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    # mix in strongly correlated pairs so the whole cosine range is exercised
    mix = rng.uniform(0, 1, size=(pairs, 1))
    X[1::2] = mix * X[0::2] + (1 - mix) * X[1::2]
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    bits = hash_features(X, generate_projection(ProjectionSpec(3, L, d))).bits()
    h = np.sum(bits[0::2] != bits[1::2], axis=1)
    err = np.abs(estimate_cosine(h, L) - np.sum(X[0::2] * X[1::2], axis=1))
    frac = float(np.mean(err <= 0.1))
    verdict(3, frac >= 0.99, f"{frac:.1%} of {pairs} pairs within 0.1 at L={L} (need >= 99%), max error {err.max():.3f}")


# ---------------------------------------------------------------------------
# 4. label-propagation math


def test_criterion_4_propagation_math(verdict):
    rng = np.random.default_rng(404)
    iter_gap = decomp_gap = 0.0
    for f in range(20):
        n = int(rng.integers(5, 201))
        C = int(rng.integers(2, 6))
        X = rng.standard_normal((n, 8))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        g = graph_from_similarity(X @ X.T, int(rng.integers(1, min(10, n - 1) + 1)))
        owners = np.sort(rng.integers(0, 3, size=n))
        Y = np.zeros((n, C))
        lab = np.sort(rng.choice(n, size=max(1, n // 6), replace=False))
        Y[lab, rng.integers(0, C, size=lab.size)] = 1
        closed = propagate_closed_form(g.normalized, Y, 0.99).Z
        it = propagate_iterative(g.normalized, Y, 0.99, tol=1e-10).Z
        iter_gap = max(iter_gap, float(np.abs(closed - it).max()))
        per_client = {f"c{j}": lab[owners[lab] == j] for j in range(3)}
        blocks = influence_columns(g, per_client, 0.99).blocks
        Z = sum(blocks[c] @ Y[idx] for c, idx in per_client.items())
        decomp_gap = max(decomp_gap, float(np.abs(Z - closed).max()))

    a = 0.99
    S = np.linalg.inv(np.eye(2) - a * np.array([[0.0, 1.0], [1.0, 0.0]]))
    expected = 1 / (1 - a * a)
    g2 = graph_from_similarity(np.ones((2, 2)), 1)
    col = influence_columns(g2, {"a": [0]}, a).blocks["a"][:, 0]
    two_node = round(col[0], 4) == round(expected, 4) == 50.2513 and abs(S[0, 0] - col[0]) < 1e-9

    ok = iter_gap <= 1e-8 and decomp_gap <= 1e-8 and two_node
    verdict(4, ok, f"iterative vs closed {iter_gap:.1e}, decomposition {decomp_gap:.1e} (limit 1e-8), "
                   f"two-node S_00={col[0]:.4f} (expected {expected:.4f})")


# ---------------------------------------------------------------------------
# 5. dropout semantics


def _same_outputs(a, b, clients):
    return all(
        np.array_equal(a.scores[c], b.scores[c])
        and np.array_equal(a.assignments[c].labels, b.assignments[c].labels)
        and np.array_equal(a.assignments[c].confidences, b.assignments[c].confidences)
        for c in clients
    )


@pytest.mark.parametrize("protocol", ["ot", "phe"])
def test_criterion_5_dropout_semantics(verdict, protocol):
    cohort = split_synthetic(4, 30, 8, 3, 0.2, seed=5, separation=3.0)
    keys = keys_for(cohort.client_ids) if protocol == "phe" else None
    lines = []
    ok = True
    for x in (cohort.client_ids[1], cohort.client_ids[3]):
        others = [c for c in cohort.client_ids if c != x]

        def run(c, sched=()):
            cfg = XCLPConfig(L=128, k=5, hamming_protocol=protocol, seed=11, key_bits=512, dropout_schedule=sched)
            return run_xclp(c, cfg, keys=keys)

        base = run(cohort)
        never = run(cohort.without(x))
        unlabeled = run(cohort.with_unlabeled(x))
        cases = [
            ("before_hamming", never),
            ("hamming", never),
            ("before_rowsums", unlabeled),
            ("rowsums", unlabeled),
            ("after_rowsums", base),
        ]
        for window, ref in cases:
            got = run(cohort, ((x, window),))
            good = sorted(got.scores) == sorted(others) and _same_outputs(got, ref, others)
            ok &= good
            lines.append(f"{x}@{window}:{'ok' if good else 'DIFF'}")
    verdict(5, ok, f"protocol={protocol} " + " ".join(lines))


# ---------------------------------------------------------------------------
# 6. communication accounting


def _elements(transcripts, kind):
    """Element totals per (sender, recipient) for one message kind, from the senders' logs."""
    out = {}
    for t in transcripts.values():
        for e in t.sent(kind):
            out[(e.sender, e.recipient)] = out.get((e.sender, e.recipient), 0) + e.elements
    return out


@pytest.mark.parametrize("protocol", ["ot", "phe"])
def test_criterion_6_communication(verdict, protocol):
    rng = np.random.default_rng(606)
    base = split_synthetic(4, 10, 6, 3, 0.25, seed=6, separation=3.0)
    keep = [4, 7, 10, 5]  # uneven client sizes
    cohort = Cohort(tuple(
        ClientDataset(c.client_id, c.features[:m], c.labels[:m], min(c.labeled_count, m))
        for c, m in zip(base.clients, keep)
    ), 3)
    L, C = 64, 3
    cfg = XCLPConfig(L=L, k=3, hamming_protocol=protocol, seed=int(rng.integers(100)), key_bits=512)
    res = run_xclp(cohort, cfg, keys=keys_for(cohort.client_ids) if protocol == "phe" else None)
    ids = cohort.client_ids
    n = {c.client_id: c.n for c in cohort.clients}
    lc = {c.client_id: c.labeled_count for c in cohort.clients}
    N = sum(n.values())
    problems = []

    def expect(kind, want):
        got = _elements(res.transcripts, kind)
        if got != want:
            problems.append(f"{kind}: got {got} want {want}")

    pairs = [(a, b) for i, a in enumerate(ids) for b in ids[i + 1 :]]
    if protocol == "ot":
        expect("ot_values", {(a, b): n[a] * n[b] * L for a, b in pairs})
    else:
        expect("phe_ciphertexts", {(a, b): n[a] * L for a, b in pairs})
        expect("phe_results", {(b, a): n[a] * n[b] for a, b in pairs})
    share = {}
    for a, b in pairs:
        share[(a, SERVER)] = share.get((a, SERVER), 0) + n[a] * n[b]
        share[(b, SERVER)] = share.get((b, SERVER), 0) + n[a] * n[b]
    expect("hamming_share", share)
    expect("hamming_local", {(c, SERVER): n[c] * (n[c] - 1) // 2 for c in ids if n[c] > 1})
    expect("influence_columns", {(SERVER, c): N * lc[c] for c in ids if lc[c] > 0})
    expect("masked_share", {(c, SERVER): N * C for c in ids})
    expect("rowsum_block", {(SERVER, c): n[c] * C for c in ids})
    expect("row_counts", {(c, SERVER): 2 for c in ids})
    verdict(6, not problems, f"protocol={protocol} sizes={keep} L={L}: " + ("all element counts match" if not problems else "; ".join(problems)))


# ---------------------------------------------------------------------------
# 7. privacy transcript checks


def test_criterion_7_privacy(verdict):
    cohort = split_synthetic(3, 12, 6, 3, 0.25, seed=7, separation=3.0)
    cfg = XCLPConfig(L=128, k=3, hamming_protocol="ot", seed=3)
    res = run_xclp(cohort, cfg, keep_payloads=True)
    server = res.transcripts[SERVER]
    received = server.received()
    kinds = sorted({e.kind for e in received})
    allowed = {"row_counts", "hamming_share", "hamming_local", "masked_share"}

    P = generate_projection(ProjectionSpec(cfg.seed, cfg.L, cohort.dim))
    code_rows = [hash_features(c.features, P).words[i].tobytes() for c in cohort.clients for i in range(c.n)]
    blob = b"".join(e.payload or b"" for e in received)
    leaked_codes = sum(row in blob for row in code_rows)

    # contributions recomputed in plaintext; no uploaded row may equal its unmasked encoding
    codec = FixedPointCodec(cfg.fraction_bits)
    g = res.graph
    n = g.n
    labeled = cohort.labeled_global_indices()
    blocks = influence_columns(g, labeled, cfg.alpha).blocks
    Y = cohort.stacked_labels()
    unmasked_rows = 0
    for e in server.received("masked_share"):
        share = np.frombuffer(e.payload, dtype="<u8")[: n * cohort.class_count].reshape(n, -1)
        z = blocks[e.sender] @ Y[labeled[e.sender]] if e.sender in blocks else np.zeros_like(share, dtype=float)
        enc = codec.encode(z)
        own = cohort.client_slice(e.sender)
        for r in range(n):
            if own.start <= r < own.stop:
                continue
            unmasked_rows += int(np.array_equal(share[r], enc[r]) and enc[r].any())

    # uniformity of one share entry across 10^4 fresh seeds, chi-square on 16-bit slices
    samples = 10_000
    contrib = {"a": np.array([[0.5], [1.0], [0.0]]), "b": np.array([[2.0], [0.0], [3.0]]), "c": np.zeros((3, 1))}
    part = {"a": np.array([0]), "b": np.array([1]), "c": np.array([2])}
    vals = np.empty(samples, dtype=np.uint64)
    for s in range(samples):
        bus = MessageBus(keep_payloads=True)
        secure_row_sums(contrib, part, bus, root_seed=derive_seed(77, s))
        (e,) = bus.transcript(SERVER).received("masked_share")[:1]
        vals[s] = np.frombuffer(e.payload, dtype="<u8")[1]  # row 1 belongs to b, not a
    pvalues = []
    for shift in (0, 16, 32, 48):
        piece = (vals >> np.uint64(shift)) & np.uint64(0xFFFF)
        for sub in (piece >> np.uint64(8), piece & np.uint64(0xFF)):
            counts = np.bincount(sub.astype(np.int64), minlength=256)
            pvalues.append(float(stats.chisquare(counts).pvalue))
    pmin = min(pvalues)

    ok = set(kinds) <= allowed and leaked_codes == 0 and unmasked_rows == 0 and pmin > 0.001
    verdict(7, ok, f"server message kinds {kinds}; code rows found {leaked_codes}; unmasked rows {unmasked_rows}; "
                   f"chi-square over {samples} samples, min p={pmin:.4f} across {len(pvalues)} byte slices (need > 0.001)")


# ---------------------------------------------------------------------------
# 8. desk-scale SSL experiment


DATA = dict(separation=6.0, noise=1.0, modes=8)


def _train(seed, pl, cohort, test):
    cfg = RoundConfig(T=200, tau=1.0, E=5, lr=0.1, seed=seed, featurizer="random_relu", feature_dim=300,
                      xclp=XCLPConfig(L=1024, k=10, alpha=0.9, hamming_protocol="plaintext_debug"))
    return train_fedavg_xclp(cohort, cfg, pl, test_set=test).history[-1]["accuracy"]


@pytest.mark.slow
def test_criterion_8_ssl_experiment(verdict):
    t0 = time.perf_counter()
    rows = []
    wins = 0
    for seed in range(3):
        cohort = split_synthetic(10, 80, 20, 3, 0.1, seed=seed, **DATA)
        test = synthetic_test_set(20, 3, 3000, seed=seed, **DATA)
        acc = {pl: _train(seed, pl, cohort, test) for pl in ("xclp", "perclient_lp", "none")}
        good = acc["xclp"] - acc["none"] >= 0.05 and acc["xclp"] >= acc["perclient_lp"]
        wins += good
        rows.append(f"seed {seed}: xclp={acc['xclp']:.3f} perclient_lp={acc['perclient_lp']:.3f} none={acc['none']:.3f}")
    elapsed = time.perf_counter() - t0
    ok = wins >= 2 and elapsed <= 900
    verdict(8, ok, f"{wins}/3 seeds meet both conditions; " + "; ".join(rows) + f"; runtime={elapsed:.0f}s (limit 900s)")


# ---------------------------------------------------------------------------
# 9. gradients and weighting


def test_criterion_9_gradients_and_weights(verdict):
    rng = np.random.default_rng(909)
    worst = 0.0
    for _ in range(10):
        m, d, C = int(rng.integers(2, 12)), int(rng.integers(1, 8)), int(rng.integers(2, 6))
        V = rng.standard_normal((m, d))
        y = rng.integers(0, C, size=m)
        w = rng.random(m)
        W = rng.standard_normal((d, C))
        b = rng.standard_normal(C)
        _, gW, gb = weighted_cross_entropy(W, b, V, y, w)
        theta = np.concatenate([W.ravel(), b])
        num = np.zeros_like(theta)
        eps = 1e-6
        for i in range(theta.size):
            tp, tm = theta.copy(), theta.copy()
            tp[i] += eps
            tm[i] -= eps
            lp = weighted_cross_entropy(tp[: d * C].reshape(d, C), tp[d * C :], V, y, w)[0]
            lm = weighted_cross_entropy(tm[: d * C].reshape(d, C), tm[d * C :], V, y, w)[0]
            num[i] = (lp - lm) / (2 * eps)
        ana = np.concatenate([gW.ravel(), gb])
        worst = max(worst, float(np.linalg.norm(num - ana) / max(np.linalg.norm(ana), 1e-12)))

    # omega = 0 rows contribute nothing: gradient equals that of the batch without them
    V = rng.standard_normal((6, 4))
    y = rng.integers(0, 3, size=6)
    W, b = rng.standard_normal((4, 3)), rng.standard_normal(3)
    w = np.array([1, 0, 0.5, 0, 1, 0.0])
    full = weighted_cross_entropy(W, b, V, y, w, batch_size=6)
    keep = w > 0
    sub = weighted_cross_entropy(W, b, V[keep], y[keep], w[keep], batch_size=6)
    zero_row = weighted_cross_entropy(W, b, V[~keep], y[~keep], w[~keep], batch_size=6)
    omega_ok = (np.allclose(full[1], sub[1], rtol=0, atol=1e-15) and not zero_row[1].any() and not zero_row[2].any())

    # confidences: random score matrices plus a real protocol run
    Z = np.abs(rng.standard_normal((500, 4))) * rng.integers(0, 2, size=(500, 1))
    conf = row_confidences(Z)
    cohort = split_synthetic(3, 20, 5, 3, 0.2, seed=9, separation=3.0)
    run_conf = np.concatenate([a.confidences for a in run_xclp(cohort, XCLPConfig(L=64, k=3)).assignments.values()])
    bounded = all(np.all((c >= 0) & (c <= 1)) for c in (conf, run_conf))
    ext = scores_to_assignment(np.array([[1.0, 0, 0], [2.0, 2.0, 2.0], [0, 0, 0]])).confidences
    extremes = ext[0] == 1.0 and math.isclose(ext[1], 0.0, abs_tol=1e-15) and ext[2] == 0.0

    ok = worst <= 1e-5 and omega_ok and bounded and extremes
    verdict(9, ok, f"max finite-difference rel. error {worst:.1e} (limit 1e-5); omega=0 zero gradient: {omega_ok}; "
                   f"confidences in [0,1]: {bounded}; one-hot -> 1, uniform -> 0: {extremes}")


def test_featurizer_is_frozen():
    # the random featurizer is shared and never trained, so every client embeds identically
    m = init_model(5, 3, "random_relu", 16, seed=1)
    assert m.phi is not None and m.relu
