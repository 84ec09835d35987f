"""Command line entry point: ``banco-ldp {run,check-magnitude,check-noise}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from .harness import ConfigError, ExperimentSpec, emit_results, run_experiment
from .magnitude import (
    K1,
    log_abs_magnitude,
    magnitude_closed_form,
    magnitude_mp_oracle,
    magnitude_quadrature_oracle,
)
from .noise import derive_params, moment_report

log = logging.getLogger("banco_ldp")


def magnitude_grid(nx=20, ny=20, na=5):
    xs = np.linspace(-50.0, 50.0, nx)
    ys = np.geomspace(1e-3, 200.0, ny)
    As = np.geomspace(0.01, K1, na)
    return [(float(x), float(y), float(a)) for x in xs for y in ys for a in As]


def overflow_grid(n=60, seed=0):
    """Random points with ``|x|`` up to 1e4, where the raw closed form overflows."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        x = float(rng.choice([-1.0, 1.0]) * 10 ** rng.uniform(1.0, 4.0))
        y = float(10 ** rng.uniform(-2.0, np.log10(200.0)))
        a = float(10 ** rng.uniform(-3.0, np.log10(K1)))
        out.append((x, y, a))
    return out


def check_magnitude(tol=1e-8, extended_tol=1e-6, extended=True, n_extended=60):
    """Closed form vs quadrature; returns a report dict with a ``passed`` flag."""
    worst = 0.0
    worst_at = None
    for x, y, a in magnitude_grid():
        c = magnitude_closed_form(x, y, a)
        o = magnitude_quadrature_oracle(x, y, a, tol=1e-13)
        err = 0.0 if o == c else abs(c - o) / abs(o)
        if err > worst:
            worst, worst_at = err, (x, y, a)
    report = {"grid_points": 2000, "max_rel_error": worst, "worst_at": worst_at,
              "tolerance": tol, "passed": worst <= tol}
    if extended:
        worst_ext = 0.0
        for x, y, a in overflow_grid(n_extended):
            s, lm = log_abs_magnitude(x, y, a)
            s2, lm2 = magnitude_mp_oracle(x, y, a)
            err = abs(np.expm1(lm - lm2)) if s == s2 else np.inf
            worst_ext = max(worst_ext, float(err))
        report["extended"] = {"points": n_extended, "max_rel_error": worst_ext,
                              "tolerance": extended_tol, "passed": worst_ext <= extended_tol}
        report["passed"] = report["passed"] and report["extended"]["passed"]
    return report


def _cmd_run(args):
    try:
        spec = ExperimentSpec.from_file(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = args.out or spec.output or "."
    start = time.perf_counter()
    result = run_experiment(spec, workers=args.workers, trace=args.trace,
                            record_timing=not args.no_timing)
    log.info("ran %d rows in %.1fs", len(result.rows), time.perf_counter() - start)
    base = os.path.join(out_dir, spec.name)
    emit_results(result.rows, result.summary, "csv", base + ".csv")
    emit_results(result.rows, result.summary, "json", base + ".json", spec=spec, ledger=result.ledger)
    for label, entry in result.summary["optimizers"].items():
        for T, e in entry.items():
            fs = e.get("final_suboptimality")
            if fs:
                print(f"{label:32s} T={T:>8s} subopt={fs['mean']:.4g} +- {fs['std']:.2g} "
                      f"(n={fs['n']}) requests={e['requests']}")
    for label, fit in result.summary["rate_slopes"].items():
        if "slope" in fit:
            print(f"{label:32s} slope={fit['slope']:.3f} r2={fit['r2']:.3f}")
    for c in result.summary["checks"]:
        if not c["passed"]:
            print(f"CHECK FAILED: {c}", file=sys.stderr)
    for t in result.summary["truncated"]:
        print(f"TRUNCATED: {t}", file=sys.stderr)
    print(f"ledger total={result.ledger.request_count} -> {base}.csv, {base}.json")
    return 0 if result.ok else 1


def _cmd_check_magnitude(args):
    report = check_magnitude(args.tol, args.extended_tol, extended=not args.no_extended)
    print(json.dumps(report, indent=2))
    return 0 if report["passed"] else 1


def _cmd_check_noise(args):
    try:
        model = derive_params(args.kind, args.eps, args.d)
    except ValueError as exc:
        print(f"invalid noise parameters: {exc}", file=sys.stderr)
        return 2
    report = moment_report(model, args.n, seed=args.seed)
    print(json.dumps(report, indent=2))
    return 0 if report["passed"] else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="banco-ldp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config")
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--trace", action="store_true",
                     help="trace BANCO runs and verify the regret split and magnitudes")
    run.add_argument("--no-timing", action="store_true",
                     help="write wall_time as 0 so outputs are byte-reproducible")
    run.set_defaults(func=_cmd_run)

    mag = sub.add_parser("check-magnitude", help="closed form vs quadrature oracle")
    mag.add_argument("--tol", type=float, default=1e-8)
    mag.add_argument("--extended-tol", type=float, default=1e-6)
    mag.add_argument("--no-extended", action="store_true", help="skip the mpmath overflow grid")
    mag.set_defaults(func=_cmd_check_magnitude)

    noise = sub.add_parser("check-noise", help="moment and MGF report for a mechanism")
    noise.add_argument("kind", choices=["laplace", "gaussian", "none"])
    noise.add_argument("eps", type=float)
    noise.add_argument("d", type=int)
    noise.add_argument("n", type=int)
    noise.add_argument("--seed", type=int, default=0)
    noise.set_defaults(func=_cmd_check_noise)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
