"""Command-line interface: reproducible estimation, ensemble, partition runs.

Every invocation writes a run directory containing ``config.json`` (the
complete parameter set -- replay it with ``gridbp rerun``), ``manifest.json``
(environment, kernel backend, revision, wall time) and the command's CSV
outputs.  Exit codes are a stable contract for scripting: 0 success, 1 input
error, 2 numerical/convergence failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import re
import sys
import time
from pathlib import Path
from typing import Dict, Optional, Tuple

from .bp_engine import BpNumericalError, BpOptions, run_bp
from .coarse_grain import (
    SearchResult,
    area_flow_covariance,
    partition_search,
    read_partition,
    write_partition,
    write_report_csvs,
)
from .exact_solver import wls_flows
from .experiments import (
    EnsembleSpec,
    run_ensemble,
    timing_benchmark,
    write_ensemble_csvs,
    write_manifest,
    write_timing_csv,
)
from .factor_graph import build_factor_graph
from .grid_model import bundled_case_names, load_case
from .scenarios import (
    STRATEGIES,
    make_mask,
    read_measurements_csv,
    sample_measurements,
)

__all__ = ["main", "parse_fractions", "EXIT_OK", "EXIT_INPUT", "EXIT_NUMERIC"]

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERIC = 2

EXPERIMENT_METRICS = ("observability", "correlations", "rprofile", "depth", "bench")


# ---------------------------------------------------------------------------
# Argument grammar.


def parse_fraction_item(text: str) -> Tuple[float, float]:
    """One missing-fraction item: ``0.3`` or a ``flow/injection`` pair ``0.2/0.5``."""
    parts = str(text).split("/")
    if len(parts) == 1:
        value = float(parts[0])
        return (value, value)
    if len(parts) == 2:
        return (float(parts[0]), float(parts[1]))
    raise ValueError(f"bad fraction {text!r}: expected F or F_FLOW/F_INJ")


def parse_fractions(text: str) -> Tuple[Tuple[float, float], ...]:
    """Fraction list grammar: ``start:stop:step`` (inclusive) or comma items.

    Range endpoints are scalars applied to both kinds; comma items may be
    scalars or ``flow/injection`` pairs, e.g. ``0,0.2/0.5,0.7/0``.
    """
    text = str(text).strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"bad range {text!r}: expected START:STOP:STEP")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ValueError(f"bad range {text!r}: step must be > 0")
        values = []
        k = 0
        while True:
            value = start + k * step
            if value > stop + 1e-9:
                break
            values.append(round(value, 12))
            k += 1
        if not values:
            raise ValueError(f"range {text!r} is empty")
        return tuple((v, v) for v in values)
    items = [item for item in text.split(",") if item.strip()]
    if not items:
        raise ValueError("empty fraction list")
    return tuple(parse_fraction_item(item) for item in items)


def _parse_objective(text: Optional[str]) -> Optional[Dict[str, float]]:
    """``trace=1,balance=0.1`` -> weight dict (None passes the default)."""
    if not text:
        return None
    weights: Dict[str, float] = {}
    for item in text.split(","):
        if "=" not in item:
            raise ValueError(f"bad objective term {item!r}: expected NAME=WEIGHT")
        key, value = item.split("=", 1)
        weights[key.strip()] = float(value)
    return weights


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad flags; our contract reserves 2 for
    numerical failures, so input errors are remapped to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INPUT)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="gridbp",
        description=(
            "Belief-propagation state estimation for power grids: one-shot "
            "estimates, Monte-Carlo observability experiments, and area "
            "partitioning with covariance-aware scores."
        ),
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add_common(p, workers_default: Optional[int] = None):
        p.add_argument("--out", help="run directory (default: runs/<name>-<timestamp>)")
        p.add_argument("--seed", type=int, default=0, help="base RNG seed (default 0)")
        p.add_argument("--variance", type=float, default=1e-4,
                       help="measurement variance in MW^2 (default 1e-4)")
        p.add_argument("--max-iterations", type=int, default=10000,
                       help="BP sweep budget (default 10000)")
        p.add_argument("--damping", type=float, default=0.0,
                       help="message damping in [0,1) (default 0)")
        if workers_default is not None:
            p.add_argument("--workers", type=int, default=workers_default,
                           help=f"parallel workers (default {workers_default})")

    cases_help = f"bundled case name ({', '.join(bundled_case_names()) or 'none found'}) or a CDF file path"

    est = sub.add_parser("estimate", help="one BP state estimate -> per-line CSV")
    est.add_argument("--case", required=True, help=cases_help)
    group = est.add_mutually_exclusive_group()
    group.add_argument("--missing", default="0",
                       help="missing fraction F or F_FLOW/F_INJ (default 0)")
    group.add_argument("--measurements",
                       help="measurement CSV to estimate from (skips synthesis)")
    est.add_argument("--strategy", choices=STRATEGIES, default="Uniform",
                     help="measurement-removal strategy (default Uniform)")
    est.add_argument("--oracle", action="store_true",
                     help="append exact WLS columns and a max-deviation summary")
    add_common(est)

    exp = sub.add_parser("experiment", help="Monte-Carlo ensembles and timing benches")
    exp.add_argument("metric", choices=EXPERIMENT_METRICS,
                     help="what to measure (all ensemble CSVs are written either way)")
    exp.add_argument("--case", help=cases_help)
    exp.add_argument("--cases", help="comma list of cases for the bench metric")
    exp.add_argument("--fractions",
                     help="missing fractions: START:STOP:STEP or comma items (pairs allowed)")
    exp.add_argument("--missing",
                     help="single missing fraction (shortcut for rprofile/depth)")
    exp.add_argument("--samples", type=int, default=5000,
                     help="Monte-Carlo samples per fraction (default 5000)")
    exp.add_argument("--strategy", choices=STRATEGIES, default="Uniform")
    exp.add_argument("--repeats", type=int, default=5,
                     help="bench timing repeats per point (default 5)")
    add_common(exp, workers_default=os.cpu_count() or 1)

    par = sub.add_parser("partition", help="score area partitions / anneal for one")
    par.add_argument("--case", required=True, help=cases_help)
    par.add_argument("--partition", action="append", default=[], metavar="FILE",
                     help="partition file 'bus_id area_label' (repeatable)")
    par.add_argument("--search", type=int, metavar="N_AREAS",
                     help="anneal for a low-trace partition with N_AREAS areas")
    par.add_argument("--steps", type=int, default=500,
                     help="annealing steps (default 500)")
    par.add_argument("--objective", metavar="NAME=W,...",
                     help="search objective weights, e.g. trace=1,balance=0.1")
    add_common(par, workers_default=os.cpu_count() or 1)

    rerun = sub.add_parser("rerun", help="replay a run directory from its config.json")
    rerun.add_argument("run_dir", help="run directory (or config.json path)")
    rerun.add_argument("--out", help="output directory (default: <run_dir>-rerun)")

    return parser


# ---------------------------------------------------------------------------
# Config construction (args -> plain JSON-serializable dict).


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "-", name).strip("-") or "run"


def _config_from_args(args) -> Tuple[dict, Path]:
    if args.command == "estimate":
        config = {
            "command": "estimate",
            "case": args.case,
            "missing": list(parse_fraction_item(args.missing)),
            "strategy": args.strategy,
            "measurements": (
                str(Path(args.measurements).resolve()) if args.measurements else None
            ),
            "oracle": bool(args.oracle),
            "variance": args.variance,
            "seed": args.seed,
            "max_iterations": args.max_iterations,
            "damping": args.damping,
        }
        stem = f"estimate-{_slug(args.case)}-seed{args.seed}"
    elif args.command == "experiment":
        if args.metric == "bench":
            if not args.cases and not args.case:
                raise ValueError("bench needs --cases (comma list) or --case")
            cases = (
                [c.strip() for c in args.cases.split(",") if c.strip()]
                if args.cases
                else [args.case]
            )
            fractions = parse_fractions(args.fractions) if args.fractions else ((0.0, 0.0),)
            config = {
                "command": "experiment",
                "metric": "bench",
                "cases": cases,
                "fractions": [list(f) for f in fractions],
                "repeats": args.repeats,
                "strategy": args.strategy,
                "variance": args.variance,
                "seed": args.seed,
                "max_iterations": args.max_iterations,
                "damping": args.damping,
            }
            stem = "experiment-bench"
        else:
            if not args.case:
                raise ValueError(f"experiment {args.metric} needs --case")
            if args.fractions:
                fractions = parse_fractions(args.fractions)
            elif args.missing:
                fractions = (parse_fraction_item(args.missing),)
            else:
                raise ValueError(
                    f"experiment {args.metric} needs --fractions or --missing"
                )
            config = {
                "command": "experiment",
                "metric": args.metric,
                "case": args.case,
                "fractions": [list(f) for f in fractions],
                "samples": args.samples,
                "strategy": args.strategy,
                "variance": args.variance,
                "seed": args.seed,
                "workers": max(1, args.workers),
                "max_iterations": args.max_iterations,
                "damping": args.damping,
            }
            stem = f"experiment-{args.metric}-{_slug(args.case)}"
    elif args.command == "partition":
        if not args.partition and not args.search:
            raise ValueError("pass --partition FILE (repeatable) and/or --search N_AREAS")
        config = {
            "command": "partition",
            "case": args.case,
            "partitions": [str(Path(p).resolve()) for p in args.partition],
            "search": args.search,
            "steps": args.steps,
            "objective": _parse_objective(args.objective),
            "variance": args.variance,
            "seed": args.seed,
            "workers": max(1, args.workers),
            "max_iterations": args.max_iterations,
            "damping": args.damping,
        }
        stem = f"partition-{_slug(args.case)}"
    else:  # pragma: no cover - argparse enforces the choices
        raise ValueError(f"unknown command {args.command!r}")

    if args.out:
        out_dir = Path(args.out)
    else:
        out_dir = Path("runs") / f"{stem}-{time.strftime('%Y%m%d-%H%M%S')}"
    return config, out_dir


# ---------------------------------------------------------------------------
# Command bodies (driven by plain config dicts so reruns replay exactly).


def _bp_options(config: dict) -> BpOptions:
    return BpOptions(
        max_iterations=config.get("max_iterations", 10000),
        damping=config.get("damping", 0.0),
    )


def _cmd_estimate(config: dict, out_dir: Path) -> int:
    case = load_case(config["case"])
    if config.get("measurements"):
        meas = read_measurements_csv(config["measurements"])
    else:
        mask = make_mask(
            case, tuple(config["missing"]), config["strategy"], config["seed"]
        )
        meas = sample_measurements(case, mask, config["variance"], config["seed"])
    graph = build_factor_graph(case, meas)
    result = run_bp(graph, _bp_options(config))
    oracle = wls_flows(graph) if config.get("oracle") else None

    header = ["line_id", "from_bus", "to_bus", "mean_mw", "variance_mw2",
              "retrievable", "first_finite_sweep"]
    if oracle is not None:
        header += ["wls_mean_mw", "wls_variance_mw2"]
        # The oracle covariance is stored over retrievable lines only.
        cov_pos = {
            lid: i
            for i, lid in enumerate(
                lid for lid, ok in zip(oracle.line_ids, oracle.retrievable_mask) if ok
            )
        }
    with open(out_dir / "estimate.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for ln in case.lines:
            belief = result.beliefs[ln.id]
            first = result.first_finite_iter[ln.id]
            row = [ln.id, ln.from_bus, ln.to_bus, repr(belief.mean),
                   repr(belief.variance), belief.informative,
                   "" if first is None else first]
            if oracle is not None:
                row.append(repr(oracle.mean_of(ln.id)))
                k = cov_pos.get(ln.id)
                row.append(
                    repr(float(oracle.covariance[k, k]))
                    if k is not None and oracle.covariance is not None
                    else ""
                )
            w.writerow(row)

    retrievable = sum(result.beliefs[ln.id].informative for ln in case.lines)
    print(
        f"{case.name}: {retrievable}/{len(case.lines)} lines retrievable, "
        f"{'converged' if result.converged else 'NOT converged'} after "
        f"{result.iterations} sweeps"
    )
    if oracle is not None:
        dev_mean = 0.0
        dev_var = 0.0
        for lid in oracle.line_ids:
            belief = result.beliefs[lid]
            if belief.informative and oracle.retrievable(lid):
                dev_mean = max(dev_mean, abs(belief.mean - oracle.mean_of(lid)))
                if oracle.covariance is not None:
                    k = cov_pos[lid]
                    dev_var = max(
                        dev_var,
                        abs(belief.variance - float(oracle.covariance[k, k])),
                    )
        print(
            f"oracle deviation (retrievable lines): max|mean| {dev_mean:.3e} MW, "
            f"max|variance| {dev_var:.3e} MW^2"
        )
    return EXIT_OK if result.converged else EXIT_NUMERIC


def _cmd_experiment(config: dict, out_dir: Path) -> int:
    if config["metric"] == "bench":
        rows = timing_benchmark(
            config["cases"],
            [tuple(f) for f in config["fractions"]],
            config["repeats"],
            variance=config["variance"],
            seed=config["seed"],
            strategy=config["strategy"],
            bp_options=_bp_options(config),
        )
        write_timing_csv(rows, out_dir / "timing.csv")
        for row in rows:
            flag = "" if row["converged"] else "  [not converged]"
            print(
                f"{row['case']}: f=({row['fraction_flow']:g},"
                f"{row['fraction_injection']:g}) bp {row['bp_ms']:.2f} ms "
                f"({row['bp_iterations']} sweeps), wls {row['wls_ms']:.2f} ms"
                f"{flag}"
            )
        return EXIT_OK

    case = load_case(config["case"])
    spec = EnsembleSpec(
        case=case,
        fractions=tuple(tuple(f) for f in config["fractions"]),
        n_samples=config["samples"],
        strategy=config["strategy"],
        variance=config["variance"],
        base_seed=config["seed"],
        workers=config["workers"],
        bp_options=_bp_options(config),
    )
    result = run_ensemble(spec)
    write_ensemble_csvs(result, out_dir)
    for row in result.rows:
        neff = "-" if row.N_eff is None else f"{row.N_eff:.1f}"
        print(
            f"f=({row.fraction[0]:g},{row.fraction[1]:g}): "
            f"P={row.P_observable:.4f}±{row.P_stderr:.4f} "
            f"p={row.p_retrievable:.4f}±{row.p_stderr:.4f} N_eff={neff}"
        )
    return EXIT_OK


def _write_search_log(result: SearchResult, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "temperature", "bus", "from_area", "to_area",
                    "score_before", "score_after", "best_score"])
        for m in result.accepted_moves:
            w.writerow([m.step, repr(m.temperature), m.bus, m.from_area,
                        m.to_area, repr(m.score_before), repr(m.score_after),
                        repr(m.best_score)])


def _cmd_partition(config: dict, out_dir: Path) -> int:
    case = load_case(config["case"])
    mask = make_mask(case, (0.0, 0.0), "Uniform", config["seed"])
    meas = sample_measurements(case, mask, config["variance"], config["seed"])
    graph = build_factor_graph(case, meas)

    partitions = []
    if config.get("search"):
        result = partition_search(
            case,
            config["search"],
            config.get("objective"),
            config["seed"],
            variance=config["variance"],
            n_steps=config["steps"],
        )
        write_partition(result.partition, out_dir / "partition.txt")
        _write_search_log(result, out_dir / "search_log.csv")
        print(
            f"search: initial {result.initial_score:.6e} -> best "
            f"{result.score:.6e} MW^2 over {result.n_steps} steps "
            f"({len(result.accepted_moves)} accepted moves)"
        )
        partitions.append(result.partition)
    for path in config.get("partitions") or []:
        partitions.append(read_partition(path))

    multi = len(partitions) > 1
    scores = []
    for partition in partitions:
        report = area_flow_covariance(
            graph, partition, case, workers=config.get("workers", 1)
        )
        target = out_dir / _slug(partition.name) if multi else out_dir
        os.makedirs(target, exist_ok=True)
        write_report_csvs(report, target)
        scores.append((partition.name, report.trace))
        print(
            f"partition {partition.name}: {len(partition.areas)} areas, "
            f"trace {report.trace:.6e} MW^2"
        )
    if multi:
        best = min(scores, key=lambda item: item[1])
        with open(out_dir / "scores.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["partition", "trace_mw2", "lowest"])
            for name, trace in scores:
                w.writerow([name, repr(trace), name == best[0]])
        print(f"lowest trace: {best[0]} ({best[1]:.6e} MW^2)")
    return EXIT_OK


_COMMANDS = {
    "estimate": _cmd_estimate,
    "experiment": _cmd_experiment,
    "partition": _cmd_partition,
}


def _run(config: dict, out_dir: Path) -> int:
    started = time.perf_counter()
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.json", "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    code = _COMMANDS[config["command"]](config, out_dir)
    write_manifest(out_dir / "manifest.json", config, time.perf_counter() - started)
    print(f"run directory: {out_dir}")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_INPUT

    try:
        if args.command == "rerun":
            source = Path(args.run_dir)
            config_path = source if source.is_file() else source / "config.json"
            if not config_path.exists():
                raise FileNotFoundError(f"no config.json under {source}")
            with open(config_path) as fh:
                config = json.load(fh)
            if config.get("command") not in _COMMANDS:
                raise ValueError(f"{config_path} does not name a replayable command")
            base = config_path.parent
            out_dir = Path(args.out) if args.out else base.with_name(base.name + "-rerun")
        else:
            config, out_dir = _config_from_args(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    try:
        return _run(config, out_dir)
    except (BpNumericalError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
