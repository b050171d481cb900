#!/usr/bin/env python3
"""Benchmark the compiled message-passing kernel against the NumPy fallback.

Runs identical BP solves through both backends on the bundled cases, checks
that they return the same beliefs, and reports median wall times with the
speedup of the compiled kernel.  The pure-Python kernel is always available;
the compiled one is skipped (with a note) when the extension was not built.

Usage:
    python benchmarks/bench_kernels.py [--cases ieee14,ieee300]
        [--missing 0,0.3] [--repeats 7] [--seed 0] [--out bench.csv]
"""

from __future__ import annotations

import argparse
import csv
import math
import statistics
import sys
import time

from gridbp import BpOptions, build_factor_graph, load_case, run_bp
from gridbp.scenarios import make_mask, sample_measurements

DEFAULT_CASES = "ieee14,ieee30,ieee57,ieee118,ieee300"


def available_backends() -> list[str]:
    from gridbp import _kernels

    names = ["python"]
    try:
        _kernels.load_backend("cython")
        names.insert(0, "cython")
    except ImportError:
        pass
    return names


def time_backend(graph, backend: str, opts: BpOptions, repeats: int):
    """(median ms, result) for repeated solves on one backend."""
    times = []
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = run_bp(graph, opts, backend=backend)
        times.append(1e3 * (time.perf_counter() - t0))
    return statistics.median(times), result


def parity(result_a, result_b) -> float:
    """Largest belief mean/variance disagreement between two results."""
    worst = 0.0
    for lid, ga in result_a.beliefs.items():
        gb = result_b.beliefs[lid]
        if math.isinf(ga.variance) and math.isinf(gb.variance):
            continue
        worst = max(worst, abs(ga.mean - gb.mean), abs(ga.variance - gb.variance))
    return worst


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cases", default=DEFAULT_CASES)
    ap.add_argument("--missing", default="0,0.3",
                    help="comma list of missing fractions (default 0,0.3)")
    ap.add_argument("--repeats", type=int, default=7)
    ap.add_argument("--variance", type=float, default=1e-4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="also write the rows to this CSV")
    args = ap.parse_args(argv)

    backends = available_backends()
    if "cython" not in backends:
        print("note: compiled kernel not built; timing the pure-Python kernel only")

    opts = BpOptions()
    rows = []
    header = (f"{'case':<9} {'miss':>5} {'sweeps':>6} "
              + "".join(f"{b + ' ms':>12}" for b in backends)
              + (f"{'speedup':>9}" if len(backends) == 2 else "")
              + f"{'max |diff|':>12}")
    print(header)
    print("-" * len(header))
    for name in [c.strip() for c in args.cases.split(",") if c.strip()]:
        case = load_case(name)
        for fraction in [float(f) for f in args.missing.split(",") if f.strip()]:
            mask = make_mask(case, fraction, "Uniform", args.seed)
            meas = sample_measurements(case, mask, args.variance, args.seed)
            graph = build_factor_graph(case, meas)

            timings = {}
            results = {}
            for backend in backends:
                timings[backend], results[backend] = time_backend(
                    graph, backend, opts, args.repeats
                )
            worst = (
                parity(results[backends[0]], results[backends[1]])
                if len(backends) == 2 else 0.0
            )
            row = {
                "case": name,
                "n_lines": len(case.lines),
                "n_buses": len(case.buses),
                "missing": fraction,
                "sweeps": results[backends[0]].iterations,
                **{f"{b}_ms": timings[b] for b in backends},
                "max_diff": worst,
            }
            if len(backends) == 2:
                row["speedup"] = timings["python"] / timings["cython"]
            rows.append(row)
            line = (f"{name:<9} {fraction:>5.2f} {row['sweeps']:>6d} "
                    + "".join(f"{timings[b]:>12.3f}" for b in backends))
            if len(backends) == 2:
                line += f"{row['speedup']:>8.1f}x"
            line += f"{worst:>12.2e}"
            print(line)

    if args.out:
        fields = list(rows[0])
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            w.writerows(rows)
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
