"""Compare the compiled and pure-Python kernels on the same inputs.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Every kernel is run on identical inputs under each available backend; the
outputs are checked for equality before timings are reported.
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from xclp._kernels import backends
from xclp.paillier import TEST_KEY_BITS, generate_keypair


def _best(fn, repeat: int) -> tuple[float, object]:
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(rng: np.random.Generator, keys):
    V = rng.standard_normal((2000, 1024))
    a = rng.integers(0, 1 << 63, size=(400, 64), dtype=np.uint64)
    b = rng.integers(0, 1 << 63, size=(600, 64), dtype=np.uint64)
    A = rng.random((1500, 1500))
    pub, sec = keys.public, keys.secret
    L, m = 64, 40
    plain = np.zeros((L, pub.plain_bytes), dtype=np.uint8)
    plain[:, 0] = rng.integers(0, 2, size=L)
    alphas = pub.random_alphas(L, rng)
    xbits = rng.integers(0, 2, size=(m, L), dtype=np.uint8)
    cts = sec.encrypt_rows(plain, rng)
    rand_cts = pub.encrypt(list(range(m)), rng)
    yield "pack_signs 2000x1024", lambda k: k.pack_signs(V)
    yield "hamming_cross 400x600 L=4096", lambda k: k.hamming_cross(a, b)
    yield "topk_rows 1500x1500 k=10", lambda k: k.topk_rows(A, 10)
    yield "paillier encrypt 64 (public)", lambda k: k.PaillierPublicKernel(pub.n, pub.hs, pub.alpha_bits).encrypt(plain, alphas)
    yield "paillier encrypt 64 (crt)", lambda k: k.PaillierPrivateKernel(sec.p, sec.q, pub.hs, pub.alpha_bits).encrypt(plain, alphas)
    yield f"hamming_eval L={L} m={m}", lambda k: k.PaillierPublicKernel(pub.n, pub.hs, pub.alpha_bits).hamming_eval(cts, xbits, rand_cts)
    yield "decrypt_small 64", lambda k: k.PaillierPrivateKernel(sec.p, sec.q, pub.hs, pub.alpha_bits).decrypt_small(cts)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", default=None)
    args = ap.parse_args(argv)

    impls = backends()
    keys = generate_keypair(TEST_KEY_BITS, seed=7)
    rows = []
    print(f"{'kernel':34s} " + " ".join(f"{name:>10s}" for name in impls) + "   speedup")
    for name, fn in cases(np.random.default_rng(0), keys):
        times = {}
        outs = {}
        for bname, mod in impls.items():
            times[bname], outs[bname] = _best(lambda: fn(mod), args.repeat)
        ref = outs["python"]
        same = all(np.array_equal(np.asarray(o), np.asarray(ref)) for o in outs.values())
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:34s} " + " ".join(f"{times[b] * 1e3:9.2f}ms" for b in impls) + f"   {speed:6.1f}x" + ("" if same else "  MISMATCH"))
        rows.append({"kernel": name, "seconds": times, "speedup": speed, "outputs_equal": same})
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0 if all(r["outputs_equal"] for r in rows) else 1


if __name__ == "__main__":
    raise SystemExit(main())
