"""Command line interface: ``wavehist {generate,run,experiment,sse}``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time

from .cluster import CommLedger, partition_dataset
from .dataset import SAMPLE_MODES, ZipfConfig, generate_zipf, read_meta
from .experiment import (
    ALGORITHMS,
    RESULT_FIELDS,
    ExperimentConfig,
    ResultRow,
    ideal_top_k,
    read_histogram,
    run_algorithm,
    run_experiment,
    true_frequencies,
    write_histogram,
)
from .wavelet import compute_sse


def cmd_generate(args) -> int:
    meta = generate_zipf(ZipfConfig(args.n, args.u, args.alpha, args.seed, args.record_size), args.out)
    print(f"wrote {meta.n} records (u={meta.u}, record_size={meta.record_size}) to {meta.path}")
    return 0


def cmd_run(args) -> int:
    meta = read_meta(args.data)
    beta = args.beta or max(1, math.ceil(meta.n / 8))
    splits = partition_dataset(meta, beta)
    ledger = CommLedger()
    start = time.perf_counter()
    top = run_algorithm(args.algo, splits, meta.u, args.k, ledger, args.epsilon, args.seed, args.samples_mode)
    elapsed = (time.perf_counter() - start) * 1000.0
    write_histogram(top, args.out)
    if args.ledger:
        ledger.to_csv(args.ledger)
    v = true_frequencies(meta)
    total = ledger.totals(args.algo)
    row = ResultRow(args.algo, 0, args.k, args.epsilon, float("nan"), len(splits), total.pairs, total.bytes,
                    round(elapsed, 3), compute_sse(v, top.reconstruct(meta.u)),
                    compute_sse(v, ideal_top_k(v, args.k).reconstruct(meta.u)))
    print(",".join(RESULT_FIELDS))
    print(",".join(str(x) for x in vars(row).values()))
    return 0


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    if args.out:
        cfg.output = args.out
    rows = run_experiment(cfg)
    if not cfg.output:
        print(",".join(RESULT_FIELDS))
        for r in rows:
            print(",".join(str(x) for x in vars(r).values()))
    else:
        print(f"wrote {len(rows)} rows to {cfg.output}")
    return 0


def cmd_sse(args) -> int:
    meta = read_meta(args.data)
    top = read_histogram(args.histogram)
    v = true_frequencies(meta)
    sse = compute_sse(v, top.reconstruct(meta.u))
    ideal = compute_sse(v, ideal_top_k(v, max(1, len(top.entries))).reconstruct(meta.u))
    print(f"sse={sse!r} sse_ideal={ideal!r} k={len(top.entries)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wavehist", description="Wavelet histograms on a simulated map-reduce cluster.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a Zipfian key dataset")
    g.add_argument("--n", type=int, required=True, help="number of records")
    g.add_argument("--u", type=int, required=True, help="key domain size (padded to a power of two)")
    g.add_argument("--alpha", type=float, default=1.1, help="Zipf skew (default 1.1)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--record-size", type=int, default=4, help="bytes per record, >= 4")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="build a k-term histogram with one algorithm")
    r.add_argument("--algo", choices=ALGORITHMS, required=True)
    r.add_argument("--k", type=int, default=30)
    r.add_argument("--beta", type=int, default=None, help="split size in records (default n/8)")
    r.add_argument("--epsilon", type=float, default=0.02, help="sampling accuracy (sampling algorithms)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--samples-mode", choices=SAMPLE_MODES, default="noreplace")
    r.add_argument("--data", required=True)
    r.add_argument("--out", required=True, help="histogram CSV (index,value)")
    r.add_argument("--ledger", help="optional communication ledger CSV")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("experiment", help="run a config file (JSON or TOML)")
    e.add_argument("--config", required=True)
    e.add_argument("--out", help="override the config's output path")
    e.set_defaults(func=cmd_experiment)

    s = sub.add_parser("sse", help="SSE of a histogram CSV against a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--histogram", required=True)
    s.set_defaults(func=cmd_sse)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
