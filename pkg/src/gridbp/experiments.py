"""Monte-Carlo ensembles over missing-measurement scenarios.

For each missing fraction, ``run_ensemble`` draws ``n_samples`` scenarios
(mask + noise, sample k seeded with ``base_seed + k``), runs BP on each, and
accumulates every statistic in one pass:

* ``P`` — probability that *all* data items (line flows and bus injections)
  are retrievable, with binomial standard error;
* ``p`` — mean fraction of retrievable data items, with empirical error;
* ``N_eff = ln P / ln p`` — effective degrees of freedom (undefined when
  P or p touches 0 or 1);
* ``C`` and ``M`` — sample correlations between a bus's non-retrievability
  and, respectively, its degree and the fraction of its neighbours with
  missing injection measurements;
* retrieval depth profile ``R(n)`` — how many lines *without* a direct
  measurement have finite belief variance by iteration n (summed over
  samples; the reported curve is R(n)/R(∞) as a ratio of those sums);
* converged belief variance pooled by retrieval depth, reported as ratios
  against the depth-1 pool.

Sample draws depend only on ``base_seed + k``, so results are bit-for-bit
reproducible at ``workers=1`` and independent of how samples are chunked
across processes (aggregation is a fixed-order reduction over chunks).
"""

from __future__ import annotations

import csv
import json
import math
import os
import platform
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import _kernels
from .bp_engine import BpOptions, BpResult, run_bp
from .exact_solver import wls_flows
from .factor_graph import build_factor_graph
from .grid_model import GridCase, load_case
from .scenarios import count_retrievable, make_mask, sample_measurements

__all__ = [
    "EnsembleSpec",
    "FractionStats",
    "EnsembleResult",
    "run_ensemble",
    "observability_probability",
    "retrievability_fraction",
    "effective_dof",
    "correlation_C",
    "correlation_M",
    "variance_ratio_by_depth",
    "timing_benchmark",
    "write_ensemble_csvs",
    "write_timing_csv",
    "write_manifest",
]

_INF = float("inf")

FractionLike = Union[float, Tuple[float, float]]


def _as_pair(fraction: FractionLike) -> Tuple[float, float]:
    if isinstance(fraction, (int, float)):
        return (float(fraction), float(fraction))
    f, i = fraction
    return (float(f), float(i))


@dataclass(frozen=True)
class EnsembleSpec:
    """Everything needed to reproduce one ensemble run."""

    case: GridCase
    fractions: Tuple[FractionLike, ...]
    n_samples: int = 5000
    strategy: str = "Uniform"
    variance: float = 1e-4
    base_seed: int = 0
    workers: int = 1
    bp_options: BpOptions = field(default_factory=BpOptions)

    def __post_init__(self) -> None:
        if self.n_samples <= 0:
            raise ValueError("n_samples must be > 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class FractionStats:
    """All per-fraction ensemble statistics."""

    fraction: Tuple[float, float]
    n_samples: int
    P_observable: float
    P_stderr: float
    p_retrievable: float
    p_stderr: float
    N_eff: Optional[float]
    N_eff_stderr: Optional[float]
    C: float
    C_stderr: float
    M: float
    M_stderr: float
    mc_corr: float
    mc_corr_stderr: float
    R_counts: Dict[int, int]
    R_total: int
    depth_var_mean: Dict[int, float]
    depth_var_count: Dict[int, int]
    mean_iterations: float
    n_nonconverged: int

    @property
    def R_profile(self) -> Dict[int, float]:
        """Cumulative R(n)/R(∞) (ratio of ensemble sums); empty if R(∞)=0."""
        if self.R_total == 0:
            return {}
        out: Dict[int, float] = {}
        acc = 0
        for n in sorted(self.R_counts):
            acc += self.R_counts[n]
            out[n] = acc / self.R_total
        return out

    @property
    def variance_ratio(self) -> Dict[int, float]:
        """Mean converged variance by retrieval depth, relative to depth 1.

        The first synchronous sweep only lands each factor's own measurement
        on its adjacent lines, so it contributes no neighbour information;
        retrieval depth therefore counts sweeps beyond it: a line whose
        belief first turns finite at sweep ``n`` has depth ``n - 1``.  Depth
        0 (finite in the very first sweep, e.g. the lone line of a measured
        degree-1 bus) is reported but the normalising group is depth 1 --
        lines that needed one sweep of propagated neighbour information.
        """
        base = self.depth_var_mean.get(2)
        if base is None or base <= 0.0:
            return {}
        return {n - 1: v / base for n, v in sorted(self.depth_var_mean.items())}


@dataclass(frozen=True)
class EnsembleResult:
    case_name: str
    strategy: str
    variance: float
    base_seed: int
    n_samples: int
    rows: Tuple[FractionStats, ...]

    def row(self, fraction: FractionLike) -> FractionStats:
        want = _as_pair(fraction)
        for r in self.rows:
            if r.fraction == want:
                return r
        raise KeyError(f"no ensemble row for fraction {want}")


# ---------------------------------------------------------------------------
# Per-sample work.  Workers hold the loaded case and scenario parameters in
# module globals (set by the pool initializer) so tasks stay tiny.

_CTX: dict = {}


def _worker_init(case: GridCase, variance: float, strategy: str, opts: BpOptions):
    bus_ids = [b.id for b in case.buses]
    neighbours = {b: [] for b in bus_ids}
    for ln in case.lines:
        neighbours[ln.from_bus].append(ln.to_bus)
        neighbours[ln.to_bus].append(ln.from_bus)
    _CTX.update(
        case=case,
        variance=variance,
        strategy=strategy,
        opts=opts,
        bus_ids=bus_ids,
        degrees=np.array([case.degree(b) for b in bus_ids], float),
        neighbours=neighbours,
        n_lines=len(case.lines),
        n_buses=len(bus_ids),
    )


def _one_sample(fraction: Tuple[float, float], seed: int) -> tuple:
    case: GridCase = _CTX["case"]
    mask = make_mask(case, fraction, _CTX["strategy"], seed)
    meas = sample_measurements(case, mask, _CTX["variance"], seed)
    graph = build_factor_graph(case, meas)
    result = run_bp(graph, _CTX["opts"])

    n_flow_ret, n_inj_ret = count_retrievable(case, meas, result)
    observable = n_flow_ret == _CTX["n_lines"] and n_inj_ret == _CTX["n_buses"]

    degrees = _CTX["degrees"]
    missing_inj = mask.missing_injections
    delta = np.empty(len(degrees))
    m_over_c = np.empty(len(degrees))
    for i, bus_id in enumerate(_CTX["bus_ids"]):
        if bus_id in missing_inj:
            retrievable = all(
                result.beliefs[ln.id].variance < _INF
                for ln in case.incident_lines(bus_id)
            )
        else:
            retrievable = True
        delta[i] = 0.0 if retrievable else 1.0
        m_i = sum(1 for j in _CTX["neighbours"][bus_id] if j in missing_inj)
        m_over_c[i] = m_i / degrees[i]

    nb = float(len(degrees))
    c_stat = float(delta @ degrees) / nb - float(degrees.sum() * delta.sum()) / nb**2
    m_stat = float(delta @ m_over_c) / nb - float(m_over_c.sum() * delta.sum()) / nb**2
    # The footnote statistic: covariance of m_i/c_i with c_i within this
    # sample; its ensemble mean should be consistent with zero.
    mc_corr = (
        float(m_over_c @ degrees) / nb
        - float(m_over_c.sum() * degrees.sum()) / nb**2
    )

    depth_counts: Dict[int, int] = {}
    depth_var_sum: Dict[int, float] = {}
    for ln in case.lines:
        if ln.id in mask.missing_flows:
            first = result.first_finite_iter[ln.id]
            if first is not None:
                depth_counts[first] = depth_counts.get(first, 0) + 1
                depth_var_sum[first] = (
                    depth_var_sum.get(first, 0.0) + result.beliefs[ln.id].variance
                )

    p_fraction = (n_flow_ret + n_inj_ret) / (_CTX["n_lines"] + _CTX["n_buses"])
    return (
        bool(observable),
        p_fraction,
        c_stat,
        m_stat,
        mc_corr,
        depth_counts,
        depth_var_sum,
        result.iterations,
        bool(result.converged),
    )


def _run_chunk(args) -> list:
    fraction, seeds = args
    return [_one_sample(fraction, s) for s in seeds]


def _reduce_fraction(
    fraction: Tuple[float, float], samples: List[tuple]
) -> FractionStats:
    n = len(samples)
    observable = np.array([s[0] for s in samples], float)
    p_vals = np.array([s[1] for s in samples], float)
    c_vals = np.array([s[2] for s in samples], float)
    m_vals = np.array([s[3] for s in samples], float)
    mc_vals = np.array([s[4] for s in samples], float)

    P = float(observable.mean())
    P_err = math.sqrt(P * (1.0 - P) / n)
    p = float(p_vals.mean())
    p_err = float(p_vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0

    if 0.0 < P < 1.0 and 0.0 < p < 1.0:
        n_eff = math.log(P) / math.log(p)
        # First-order propagation through ln P / ln p.
        dP = 1.0 / (P * math.log(p))
        dp = -math.log(P) / (p * math.log(p) ** 2)
        n_eff_err = math.sqrt((dP * P_err) ** 2 + (dp * p_err) ** 2)
    else:
        n_eff = None
        n_eff_err = None

    depth_counts: Dict[int, int] = {}
    depth_var_sum: Dict[int, float] = {}
    for s in samples:
        for d, k in s[5].items():
            depth_counts[d] = depth_counts.get(d, 0) + k
        for d, v in s[6].items():
            depth_var_sum[d] = depth_var_sum.get(d, 0.0) + v
    depth_var_mean = {
        d: depth_var_sum[d] / depth_counts[d] for d in depth_var_sum
    }

    def _mean_err(vals: np.ndarray) -> Tuple[float, float]:
        mu = float(vals.mean())
        err = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return mu, err

    C, C_err = _mean_err(c_vals)
    M, M_err = _mean_err(m_vals)
    mc, mc_err = _mean_err(mc_vals)

    return FractionStats(
        fraction=fraction,
        n_samples=n,
        P_observable=P,
        P_stderr=P_err,
        p_retrievable=p,
        p_stderr=p_err,
        N_eff=n_eff,
        N_eff_stderr=n_eff_err,
        C=C,
        C_stderr=C_err,
        M=M,
        M_stderr=M_err,
        mc_corr=mc,
        mc_corr_stderr=mc_err,
        R_counts=depth_counts,
        R_total=sum(depth_counts.values()),
        depth_var_mean=depth_var_mean,
        depth_var_count=dict(depth_counts),
        mean_iterations=float(np.mean([s[7] for s in samples])),
        n_nonconverged=sum(1 for s in samples if not s[8]),
    )


def run_ensemble(spec: EnsembleSpec) -> EnsembleResult:
    """Run the full Monte-Carlo grid; one pass computes every statistic."""
    fractions = [_as_pair(f) for f in spec.fractions]
    seeds = [spec.base_seed + k for k in range(spec.n_samples)]
    rows: List[FractionStats] = []

    if spec.workers == 1:
        _worker_init(spec.case, spec.variance, spec.strategy, spec.bp_options)
        for fraction in fractions:
            samples = [_one_sample(fraction, s) for s in seeds]
            rows.append(_reduce_fraction(fraction, samples))
    else:
        chunk = max(1, math.ceil(spec.n_samples / (spec.workers * 8)))
        with ProcessPoolExecutor(
            max_workers=spec.workers,
            initializer=_worker_init,
            initargs=(spec.case, spec.variance, spec.strategy, spec.bp_options),
        ) as pool:
            for fraction in fractions:
                tasks = [
                    (fraction, seeds[i : i + chunk])
                    for i in range(0, len(seeds), chunk)
                ]
                samples: List[tuple] = []
                for part in pool.map(_run_chunk, tasks):
                    samples.extend(part)
                rows.append(_reduce_fraction(fraction, samples))

    return EnsembleResult(
        case_name=spec.case.name,
        strategy=spec.strategy,
        variance=spec.variance,
        base_seed=spec.base_seed,
        n_samples=spec.n_samples,
        rows=tuple(rows),
    )


# ---------------------------------------------------------------------------
# Thin per-metric views (each runs the ensemble; share an EnsembleResult and
# read its rows directly when computing several metrics).


def observability_probability(spec: EnsembleSpec):
    """[(fraction pair, P, stderr)] per fraction."""
    result = run_ensemble(spec)
    return [(r.fraction, r.P_observable, r.P_stderr) for r in result.rows]


def retrievability_fraction(spec: EnsembleSpec):
    """[(fraction pair, p, stderr)] per fraction."""
    result = run_ensemble(spec)
    return [(r.fraction, r.p_retrievable, r.p_stderr) for r in result.rows]


def effective_dof(spec: EnsembleSpec):
    """[(fraction pair, N_eff or None, stderr or None)] per fraction."""
    result = run_ensemble(spec)
    return [(r.fraction, r.N_eff, r.N_eff_stderr) for r in result.rows]


def correlation_C(spec: EnsembleSpec):
    """[(fraction pair, C, stderr)] per fraction."""
    result = run_ensemble(spec)
    return [(r.fraction, r.C, r.C_stderr) for r in result.rows]


def correlation_M(spec: EnsembleSpec):
    """[(fraction pair, M, stderr)] per fraction."""
    result = run_ensemble(spec)
    return [(r.fraction, r.M, r.M_stderr) for r in result.rows]


def variance_ratio_by_depth(spec: EnsembleSpec) -> Dict[Tuple[float, float], Dict[int, float]]:
    """Per fraction: retrieval depth → pooled variance ratio vs depth 1.

    See :attr:`FractionStats.variance_ratio` for the depth convention
    (sweeps of neighbour propagation beyond the measurement-landing sweep).
    """
    result = run_ensemble(spec)
    return {r.fraction: r.variance_ratio for r in result.rows}


# ---------------------------------------------------------------------------
# Timing.


def timing_benchmark(
    cases: Sequence[Union[GridCase, str]],
    fractions: Sequence[FractionLike],
    repeats: int = 5,
    *,
    variance: float = 1e-4,
    seed: int = 0,
    strategy: str = "Uniform",
    bp_options: Optional[BpOptions] = None,
) -> List[dict]:
    """Median wall times (ms) of a BP solve vs a WLS solve per case/fraction.

    Both timers cover the solve only (graph and normal-equation assembly are
    shared preprocessing): BP to convergence, WLS through factorization and
    back-substitution.  Non-converged BP runs are flagged and their rows
    excluded from medians.
    """
    opts = bp_options or BpOptions()
    rows: List[dict] = []
    for item in cases:
        case = load_case(item) if isinstance(item, str) else item
        for fraction in fractions:
            pair = _as_pair(fraction)
            mask = make_mask(case, pair, strategy, seed)
            meas = sample_measurements(case, mask, variance, seed)
            graph = build_factor_graph(case, meas)
            packed = _kernels.pack_graph(graph)  # warm any lazy case caches

            bp_times = []
            converged = True
            result: Optional[BpResult] = None
            for _ in range(repeats):
                t0 = time.perf_counter()
                result = run_bp(graph, opts)
                bp_times.append(1e3 * (time.perf_counter() - t0))
                converged = converged and result.converged
            wls_times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                wls_flows(graph, compute_covariance=False)
                wls_times.append(1e3 * (time.perf_counter() - t0))
            rows.append(
                {
                    "case": case.name,
                    "n_lines": len(case.lines),
                    "n_buses": len(case.buses),
                    "fraction_flow": pair[0],
                    "fraction_injection": pair[1],
                    "bp_ms": float(np.median(bp_times)),
                    "wls_ms": float(np.median(wls_times)),
                    "bp_iterations": result.iterations if result else -1,
                    "converged": converged,
                    "kernel": _kernels.BACKEND,
                }
            )
    return rows


# ---------------------------------------------------------------------------
# Persistence.


def write_ensemble_csvs(result: EnsembleResult, directory) -> List[str]:
    """One CSV per metric family; returns the file names written."""
    os.makedirs(directory, exist_ok=True)
    written: List[str] = []

    def _open(name: str):
        path = os.path.join(directory, name)
        written.append(name)
        return open(path, "w", newline="")

    with _open("observability.csv") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["fraction_flow", "fraction_injection", "n_samples",
             "P_observable", "P_stderr", "p_retrievable", "p_stderr",
             "N_eff", "N_eff_stderr"]
        )
        for r in result.rows:
            w.writerow(
                [r.fraction[0], r.fraction[1], r.n_samples,
                 repr(r.P_observable), repr(r.P_stderr),
                 repr(r.p_retrievable), repr(r.p_stderr),
                 "" if r.N_eff is None else repr(r.N_eff),
                 "" if r.N_eff_stderr is None else repr(r.N_eff_stderr)]
            )

    with _open("correlations.csv") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["fraction_flow", "fraction_injection",
             "C", "C_stderr", "M", "M_stderr", "mc_corr", "mc_corr_stderr"]
        )
        for r in result.rows:
            w.writerow(
                [r.fraction[0], r.fraction[1],
                 repr(r.C), repr(r.C_stderr), repr(r.M), repr(r.M_stderr),
                 repr(r.mc_corr), repr(r.mc_corr_stderr)]
            )

    with _open("retrieval_profile.csv") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["fraction_flow", "fraction_injection", "depth",
             "count", "cumulative_ratio"]
        )
        for r in result.rows:
            profile = r.R_profile
            for d in sorted(r.R_counts):
                w.writerow(
                    [r.fraction[0], r.fraction[1], d,
                     r.R_counts[d], repr(profile[d])]
                )

    with _open("variance_by_depth.csv") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["fraction_flow", "fraction_injection", "depth",
             "first_finite_sweep", "count", "mean_variance",
             "ratio_vs_depth1"]
        )
        for r in result.rows:
            ratios = r.variance_ratio
            for n in sorted(r.depth_var_mean):
                d = n - 1
                w.writerow(
                    [r.fraction[0], r.fraction[1], d, n,
                     r.depth_var_count.get(n, 0),
                     repr(r.depth_var_mean[n]),
                     repr(ratios[d]) if d in ratios else ""]
                )
    return written


def write_timing_csv(rows: Sequence[dict], path) -> None:
    fields = ["case", "n_lines", "n_buses", "fraction_flow",
              "fraction_injection", "bp_ms", "wls_ms", "bp_iterations",
              "converged", "kernel"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in fields})


def _git_revision() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            capture_output=True, text=True, timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def write_manifest(path, config: dict, wall_time_s: float) -> None:
    """Persist a run manifest: parameters, environment, revision, wall time."""
    manifest = {
        "config": config,
        "wall_time_s": wall_time_s,
        "kernel_backend": _kernels.BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "git_revision": _git_revision(),
        "created_unix": time.time(),
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
