"""Command-line entry point: ``xclp propagate | train | check | make-data | replay``.

Every run writes ``manifest.json`` into its output directory before doing
any work; ``xclp replay <manifest>`` repeats the run from it.  The output
directory is ``--out``, else ``$XCLP_OUTPUT_DIR``, else ``./xclp-out``.

Exit codes: 0 success, 1 failed check or runtime error, 2 usage error.
Errors are reported on stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from xclp import __version__
from xclp.data_model import CohortError, load_cohort, save_cohort, split_synthetic, synthetic_test_set
from xclp.protocol import DROP_WINDOWS, XCLPConfig, run_xclp

OUTPUT_ENV = "XCLP_OUTPUT_DIR"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _out_dir(args) -> Path:
    path = Path(args.out or os.environ.get(OUTPUT_ENV) or "xclp-out")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(out: Path, subcommand: str, config: dict, inputs: dict, seed: int) -> None:
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "inputs": inputs,
        "seed": seed,
        "output_dir": str(out.resolve()),
        "version": __version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _parse_drops(items: Sequence[str]) -> tuple[tuple[str, str], ...]:
    out = []
    for item in items or ():
        party, sep, window = item.rpartition(":")
        if not sep or window not in DROP_WINDOWS:
            raise UsageError(f"--drop expects CLIENT:WINDOW with WINDOW in {DROP_WINDOWS}, got {item!r}")
        out.append((party, window))
    return tuple(out)


def _xclp_config(args) -> XCLPConfig:
    base = json.loads(Path(args.config).read_text()) if getattr(args, "config", None) else {}
    base = base.get("xclp", base)
    overrides = {
        "L": args.L,
        "k": args.k,
        "alpha": args.alpha,
        "hamming_protocol": args.protocol,
        "fraction_bits": args.fraction_bits,
        "seed": args.seed,
        "key_bits": args.key_bits,
        "ot_channel": args.ot_channel,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    if getattr(args, "drop", None):
        base["dropout_schedule"] = _parse_drops(args.drop)
    try:
        return XCLPConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------------------
# propagate


def cmd_propagate(args) -> int:
    config = _xclp_config(args)
    out = _out_dir(args)
    _write_manifest(out, "propagate", config.to_dict(), {"data": str(Path(args.data).resolve()), "format": args.format}, config.seed)
    cohort = load_cohort(args.data, args.format)
    result = run_xclp(cohort, config)
    labels_dir = out / "labels"
    labels_dir.mkdir(exist_ok=True)
    for cid, a in result.assignments.items():
        c = cohort.client(cid)
        orig = a.in_original_order(c.order)
        lines = ["row,label,confidence"] + [
            f"{i},{int(orig.labels[i])},{float(orig.confidences[i])!r}" for i in range(c.n)
        ]
        (labels_dir / f"{cid}.csv").write_text("\n".join(lines) + "\n")
    if args.dump_graph and result.graph is not None:
        from xclp.graph import write_edge_list

        write_edge_list(result.graph, out / "graph.edges")
    (out / "report.json").write_text(json.dumps(result.report, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"accuracy": result.report["accuracy"], "abstain_count": result.report["abstain_count"], "output_dir": str(out)}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _load_test(path: str | None, cohort) -> tuple[np.ndarray, np.ndarray] | None:
    if not path:
        return None
    test = load_cohort(path, "csv") if Path(path).is_dir() else None
    if test is None:
        raise UsageError("--test must be a cohort directory")
    X = test.stacked_features()
    y = np.concatenate([c.true_labels if c.true_labels is not None else c.label_vector() for c in test.clients])
    return X, y


def cmd_train(args) -> int:
    from xclp.pipeline import RoundConfig, train_fedavg_xclp

    base = json.loads(Path(args.config).read_text()) if args.config else {}
    overrides = {
        "T": args.rounds, "tau": args.tau, "E": args.epochs, "lr": args.lr, "seed": args.seed,
        "featurizer": args.featurizer, "feature_dim": args.feature_dim,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    xclp = {**RoundConfig().xclp.to_dict(), **base.pop("xclp", {})}
    xover = {"L": args.L, "k": args.k, "alpha": args.alpha, "hamming_protocol": args.protocol, "key_bits": args.key_bits}
    xclp.update({k: v for k, v in xover.items() if v is not None})
    try:
        config = RoundConfig.from_dict({**base, "xclp": XCLPConfig.from_dict(xclp)})
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    out = _out_dir(args)
    _write_manifest(
        out,
        "train",
        {**config.to_dict(), "pseudolabeler": args.pseudolabeler},
        {"data": str(Path(args.data).resolve()), "format": args.format, "test": args.test and str(Path(args.test).resolve())},
        config.seed,
    )
    cohort = load_cohort(args.data, args.format)
    test = _load_test(args.test, cohort)
    metrics_path = out / "metrics.jsonl"
    with open(metrics_path, "w") as fh:
        def emit(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()

        result = train_fedavg_xclp(cohort, config, args.pseudolabeler, test_set=test, on_round=emit)
    (out / "model.json").write_text(json.dumps(result.model.to_dict()) + "\n")
    last = result.history[-1]
    print(json.dumps({"rounds": len(result.history), "accuracy": last["accuracy"], "metrics": str(metrics_path)}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# check


def cmd_check(args) -> int:
    from xclp import checks

    suites = checks.SUITES if args.suite == "all" else [args.suite]
    out = _out_dir(args)
    _write_manifest(out, "check", {"suite": args.suite, "trials": args.trials, "inject_fault": args.inject_fault}, {}, args.seed)
    rows = []
    failed = False
    for name in suites:
        t0 = time.perf_counter()
        outcome = checks.run_suite(name, trials=args.trials, seed=args.seed, inject_fault=args.inject_fault)
        rows.append((name, outcome, time.perf_counter() - t0))
        failed |= not outcome.passed
        if args.verbose:
            for line in outcome.details:
                print(f"  {name}: {line}")
    width = max(len(n) for n, _, _ in rows)
    print(f"{'suite':<{width}}  result  trials  seconds")
    for name, outcome, secs in rows:
        print(f"{name:<{width}}  {'PASS' if outcome.passed else 'FAIL':<6}  {outcome.trials:>6}  {secs:7.2f}")
    summary = {name: {"passed": o.passed, "trials": o.trials, "failures": o.failures, "details": o.details} for name, o, _ in rows}
    (out / "check.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_FAIL if failed else EXIT_OK


# ---------------------------------------------------------------------------
# make-data, replay


def cmd_make_data(args) -> int:
    out = _out_dir(args)
    cfg = {
        "clients": args.clients, "per_client": args.per_client, "dim": args.dim, "classes": args.classes,
        "label_fraction": args.label_fraction, "heterogeneity": args.heterogeneity, "separation": args.separation,
        "noise": args.noise, "test_size": args.test_size,
    }
    _write_manifest(out, "make-data", cfg, {}, args.seed)
    try:
        cohort = split_synthetic(
            args.clients, args.per_client, args.dim, args.classes, args.label_fraction, args.heterogeneity,
            seed=args.seed, separation=args.separation, noise=args.noise,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    save_cohort(cohort, out / "cohort", args.format)
    if args.test_size:
        from xclp.data_model import ClientDataset, Cohort

        X, y = synthetic_test_set(args.dim, args.classes, args.test_size, seed=args.seed, separation=args.separation, noise=args.noise)
        test = Cohort((ClientDataset.from_label_vector("test", X, np.full(y.size, -1), args.classes, true_labels=y),), args.classes)
        save_cohort(test, out / "test", "csv")
    print(json.dumps({"cohort": str(out / "cohort"), "n": cohort.n}))
    return EXIT_OK


def cmd_replay(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    sub = manifest["subcommand"]
    cfg = manifest["config"]
    inputs = manifest["inputs"]
    out = args.out or manifest["output_dir"]
    if sub == "propagate":
        argv = ["propagate", "--data", inputs["data"], "--format", inputs["format"], "--out", out]
        cfg_path = Path(out) / "replay-config.json"
        Path(out).mkdir(parents=True, exist_ok=True)
        cfg_path.write_text(json.dumps(cfg))
        argv += ["--config", str(cfg_path)]
    elif sub == "train":
        cfg = dict(cfg)
        pl = cfg.pop("pseudolabeler")
        cfg_path = Path(out) / "replay-config.json"
        Path(out).mkdir(parents=True, exist_ok=True)
        cfg_path.write_text(json.dumps(cfg))
        argv = ["train", "--data", inputs["data"], "--format", inputs["format"], "--pseudolabeler", pl, "--config", str(cfg_path), "--out", out]
        if inputs.get("test"):
            argv += ["--test", inputs["test"]]
    elif sub == "check":
        argv = ["check", "--suite", cfg["suite"], "--trials", str(cfg["trials"]), "--seed", str(manifest["seed"]), "--out", out]
        if cfg["inject_fault"]:
            argv.append("--inject-fault")
    elif sub == "make-data":
        argv = ["make-data", "--out", out, "--seed", str(manifest["seed"])]
        for key in ("clients", "per_client", "dim", "classes", "label_fraction", "heterogeneity", "separation", "noise", "test_size"):
            argv += [f"--{key.replace('_', '-')}", str(cfg[key])]
    else:
        raise UsageError(f"cannot replay subcommand {sub!r}")
    return main(argv)


# ---------------------------------------------------------------------------
# parser


def _add_xclp_flags(p: argparse.ArgumentParser, protocol_default=None) -> None:
    p.add_argument("--protocol", choices=["ot", "phe", "plaintext_debug"], default=protocol_default)
    p.add_argument("--L", type=int, help="code length")
    p.add_argument("--k", type=int, help="neighbors kept per row")
    p.add_argument("--alpha", type=float)
    p.add_argument("--key-bits", type=int, dest="key_bits", help="Paillier modulus size")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xclp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("propagate", help="run the protocol once on a cohort directory")
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=["csv", "rawmatrix"], default="csv")
    _add_xclp_flags(p)
    p.add_argument("--fraction-bits", type=int, dest="fraction_bits")
    p.add_argument("--seed", type=int)
    p.add_argument("--ot-channel", choices=["simulated", "dh"], dest="ot_channel")
    p.add_argument("--drop", action="append", metavar="CLIENT:WINDOW", help="inject a dropout")
    p.add_argument("--config", help="JSON file with XCLPConfig fields")
    p.add_argument("--dump-graph", action="store_true", dest="dump_graph")
    p.add_argument("--out")
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("train", help="federated training with pseudo-labels")
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=["csv", "rawmatrix"], default="csv")
    p.add_argument("--test", help="cohort directory whose true labels form the test set")
    p.add_argument("--pseudolabeler", choices=["xclp", "perclient_lp", "network", "none"], default="xclp")
    p.add_argument("--rounds", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--featurizer", choices=["identity", "random_projection", "random_relu"])
    p.add_argument("--feature-dim", type=int, dest="feature_dim")
    p.add_argument("--seed", type=int)
    _add_xclp_flags(p)
    p.add_argument("--config", help="JSON file with RoundConfig fields (nested 'xclp' object allowed)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("check", help="run correctness suites on fresh fixtures")
    p.add_argument("--suite", default="all", choices=["all", "hamming", "rowsums", "lsh", "propagation", "oracle"])
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", action="store_true", dest="inject_fault", help="corrupt one value to confirm the suites catch it")
    p.add_argument("--verbose", "-v", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("make-data", help="write a synthetic blob cohort")
    p.add_argument("--clients", type=int, default=10)
    p.add_argument("--per-client", type=int, default=100, dest="per_client")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--label-fraction", type=float, default=0.1, dest="label_fraction")
    p.add_argument("--heterogeneity", choices=["iid", "class_skew"], default="iid")
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--test-size", type=int, default=0, dest="test_size")
    p.add_argument("--format", choices=["csv", "rawmatrix"], default="csv")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("replay", help="rerun from a manifest.json")
    p.add_argument("manifest")
    p.add_argument("--out")
    p.set_defaults(func=cmd_replay)
    return parser


def _error(kind: str, exc: BaseException, code: int) -> int:
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        return _error("usage", exc, EXIT_USAGE)
    except (CohortError, FileNotFoundError) as exc:
        return _error("input", exc, EXIT_FAIL)
    except Exception as exc:  # noqa: BLE001 - surfaced as JSON for callers
        return _error("runtime", exc, EXIT_FAIL)


if __name__ == "__main__":
    sys.exit(main())
