"""Area partitions, inter-area flow estimates, and covariance-based scoring.

Grouping buses into areas turns the line-level state estimate into a small
set of inter-area transfers: the flow from area Y to area Z is the signed
sum of the belief means of the lines crossing that cut.  Estimation errors
on nearby lines are correlated, so the variance of such a sum is not the
sum of the line variances; this module computes the full covariance matrix
of the area flows via linear response (nudge one direct measurement, watch
every belief mean move) and scores a partition by the trace of that matrix,
lower being better.  A seeded simulated-annealing search over connected
partitions is included.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .bp_engine import BpOptions, BpResult, run_bp
from .exact_solver import exact_covariance
from .factor_graph import FactorGraph
from .grid_model import GridCase

__all__ = [
    "Partition",
    "AreaFlowReport",
    "AcceptedMove",
    "SearchResult",
    "read_partition",
    "write_partition",
    "area_connectivity",
    "area_pairs",
    "boundary_lines",
    "area_flows",
    "linear_response_covariance",
    "area_flow_covariance",
    "partition_score",
    "partition_search",
    "write_report_csvs",
]

_INF = math.inf

#: Linear response amplifies solver error by 1/(2*eps), so the internal BP
#: runs use tolerances well below the default.
LR_BP_OPTIONS = BpOptions(tol_mean=1e-12, tol_var=1e-12)


# ---------------------------------------------------------------------------
# Partitions.


@dataclass(frozen=True)
class Partition:
    """An assignment of every bus to one of >= 2 named areas.

    ``areas`` fixes the label order used for pair enumeration and report
    layout; when omitted it is derived from the first appearance of each
    label in ``area_of``.  Area connectivity is deliberately not enforced
    here (externally supplied partitions are merely checked and warned
    about when used); :func:`partition_search` does enforce it.
    """

    name: str
    area_of: Mapping[int, str]
    areas: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.area_of:
            raise ValueError("partition assigns no buses")
        seen: List[str] = []
        for label in self.area_of.values():
            if label not in seen:
                seen.append(label)
        areas = self.areas or tuple(seen)
        if len(set(areas)) != len(areas):
            raise ValueError(f"duplicate area labels in {areas}")
        unknown = set(seen) - set(areas)
        if unknown:
            raise ValueError(f"buses assigned to undeclared areas {sorted(unknown)}")
        empty = set(areas) - set(seen)
        if empty:
            raise ValueError(f"areas {sorted(empty)} have no buses")
        if len(areas) < 2:
            raise ValueError("a partition needs at least 2 areas")
        object.__setattr__(self, "area_of", dict(self.area_of))
        object.__setattr__(self, "areas", tuple(areas))

    def buses_in(self, label: str) -> Tuple[int, ...]:
        if label not in self.areas:
            raise KeyError(f"unknown area {label!r}")
        return tuple(b for b, a in self.area_of.items() if a == label)

    @property
    def sizes(self) -> Dict[str, int]:
        out = {a: 0 for a in self.areas}
        for label in self.area_of.values():
            out[label] += 1
        return out


def read_partition(path, name: Optional[str] = None) -> Partition:
    """Load a partition from a text file of ``bus_id area_label`` lines.

    Blank lines and ``#`` comments are ignored; an optional ``# areas: ...``
    header pins the area order (otherwise first appearance wins).
    """
    path = Path(path)
    area_of: Dict[int, str] = {}
    areas: Tuple[str, ...] = ()
    for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
        text = raw.strip()
        if text.startswith("#"):
            body = text.lstrip("#").strip()
            if body.lower().startswith("areas:"):
                areas = tuple(body[len("areas:"):].split())
            continue
        if not text:
            continue
        parts = text.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{line_no}: expected 'bus_id area_label', got {raw!r}")
        try:
            bus_id = int(parts[0])
        except ValueError:
            raise ValueError(f"{path}:{line_no}: bad bus id {parts[0]!r}") from None
        if bus_id in area_of:
            raise ValueError(f"{path}:{line_no}: bus {bus_id} assigned twice")
        area_of[bus_id] = parts[1]
    return Partition(name=name or path.stem, area_of=area_of, areas=areas)


def write_partition(partition: Partition, path) -> None:
    """Write a partition in the format read by :func:`read_partition`."""
    rows = [f"# partition {partition.name}", "# areas: " + " ".join(partition.areas)]
    for bus_id in sorted(partition.area_of):
        rows.append(f"{bus_id} {partition.area_of[bus_id]}")
    Path(path).write_text("\n".join(rows) + "\n")


def area_connectivity(partition: Partition, case: GridCase) -> Dict[str, bool]:
    """Whether each area induces a connected subgraph of the case."""
    members: Dict[str, set] = {a: set() for a in partition.areas}
    for bus_id, label in partition.area_of.items():
        members[label].add(bus_id)
    adj = _bus_adjacency(case)
    out: Dict[str, bool] = {}
    for label, buses in members.items():
        out[label] = _is_connected(buses, adj)
    return out


def _bus_adjacency(case: GridCase) -> Dict[int, set]:
    adj: Dict[int, set] = {b.id: set() for b in case.buses}
    for ln in case.lines:
        adj[ln.from_bus].add(ln.to_bus)
        adj[ln.to_bus].add(ln.from_bus)
    return adj


def _is_connected(buses: set, adj: Mapping[int, set]) -> bool:
    if not buses:
        return False
    start = min(buses)
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v in buses and v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(buses)


def _check_partition(partition: Partition, case: GridCase) -> None:
    assigned = set(partition.area_of)
    bus_ids = set(case.bus_ids)
    missing = bus_ids - assigned
    if missing:
        raise ValueError(f"partition {partition.name!r} leaves buses {sorted(missing)} unassigned")
    extra = assigned - bus_ids
    if extra:
        raise ValueError(f"partition {partition.name!r} references unknown buses {sorted(extra)}")
    broken = sorted(a for a, ok in area_connectivity(partition, case).items() if not ok)
    if broken:
        warnings.warn(
            f"partition {partition.name!r}: areas {broken} are not connected subgraphs",
            stacklevel=3,
        )


def area_pairs(partition: Partition) -> Tuple[Tuple[str, str], ...]:
    """All unordered area pairs, in ``partition.areas`` order."""
    labels = partition.areas
    return tuple(
        (labels[i], labels[j])
        for i in range(len(labels))
        for j in range(i + 1, len(labels))
    )


def boundary_lines(
    partition: Partition, case: GridCase
) -> Dict[Tuple[str, str], Tuple[Tuple[int, int], ...]]:
    """Per area pair, the crossing lines as ``(line_id, sign)`` tuples.

    The sign is +1 when the line is oriented out of the pair's first area,
    so the signed sum of line flows is the first-to-second transfer.  Every
    pair appears, boundary-free ones with an empty tuple.
    """
    _check_partition(partition, case)
    pairs = area_pairs(partition)
    rank = {label: k for k, label in enumerate(partition.areas)}
    out: Dict[Tuple[str, str], List[Tuple[int, int]]] = {p: [] for p in pairs}
    for ln in case.lines:
        a = partition.area_of[ln.from_bus]
        b = partition.area_of[ln.to_bus]
        if a == b:
            continue
        if rank[a] < rank[b]:
            out[(a, b)].append((ln.id, +1))
        else:
            out[(b, a)].append((ln.id, -1))
    return {p: tuple(v) for p, v in out.items()}


# ---------------------------------------------------------------------------
# Inter-area flows.


def area_flows(
    bp: BpResult, partition: Partition, case: GridCase
) -> Dict[Tuple[str, str], float]:
    """Signed sums of boundary-line belief means, per area pair, in MW.

    Pairs with no boundary lines report exactly 0.  A pair whose boundary
    contains a line with infinite belief variance (not retrievable) reports
    ``nan`` and triggers a warning; the rest of the map is still returned.
    """
    flows: Dict[Tuple[str, str], float] = {}
    unavailable: List[Tuple[str, str]] = []
    for pair, lines in boundary_lines(partition, case).items():
        total = 0.0
        ok = True
        for line_id, sign in lines:
            belief = bp.beliefs[line_id]
            if not belief.informative:
                ok = False
            else:
                total += sign * belief.mean
        if ok:
            flows[pair] = total
        else:
            flows[pair] = math.nan
            unavailable.append(pair)
    if unavailable:
        warnings.warn(
            "area flow unavailable (non-retrievable boundary line) for pairs "
            f"{unavailable}",
            stacklevel=2,
        )
    return flows


# ---------------------------------------------------------------------------
# Linear-response covariance.


def linear_response_covariance(
    graph: FactorGraph,
    lines: Sequence[int],
    epsilon_scale: float = 1e-3,
    *,
    observe: Optional[Sequence[int]] = None,
    bp_options: Optional[BpOptions] = None,
    workers: int = 1,
) -> np.ndarray:
    """Covariance of line-flow estimates via measurement perturbations.

    Nudging the direct measurement ``z_j`` of line ``j`` and recording how
    every converged belief mean responds yields the estimate covariance
    ``cov(x_i, x_j) = sigma_j^2 * d<x_i>/dz_j``, evaluated with a central
    difference at ``eps = epsilon_scale * sigma_j``.  Belief means are
    linear in the measurements, so the only error is solver tolerance;
    :data:`LR_BP_OPTIONS` (the default) tightens convergence accordingly.

    Returns a ``len(observe) x len(lines)`` matrix of ``cov(observe[i],
    lines[j])``; ``observe`` defaults to ``lines``, giving the square
    covariance of ``lines`` in order.  The perturbed runs are independent
    and are distributed over ``workers`` processes when ``workers > 1``.

    Raises ``KeyError`` for unknown line ids, ``ValueError`` when a
    perturbed line has no finite-variance direct measurement (nothing to
    nudge), and ``RuntimeError`` when any perturbed run fails to converge.
    """
    if not epsilon_scale > 0.0:
        raise ValueError(f"epsilon_scale must be > 0, got {epsilon_scale!r}")
    perturbed = [int(lid) for lid in lines]
    observed = perturbed if observe is None else [int(lid) for lid in observe]
    var_index = {lid: k for k, lid in enumerate(graph.variables)}
    for lid in perturbed + observed:
        if lid not in var_index:
            raise KeyError(f"unknown line id {lid}")
    for lid in perturbed:
        if graph.factors[var_index[lid]].variance == _INF:
            raise ValueError(
                f"line {lid} has no direct flow measurement to perturb"
            )
    opts = LR_BP_OPTIONS if bp_options is None else bp_options

    cov = np.empty((len(observed), len(perturbed)))
    if workers <= 1 or len(perturbed) <= 1:
        for j, lid in enumerate(perturbed):
            cov[:, j] = _response_column(
                graph, var_index[lid], observed, epsilon_scale, opts
            )
    else:
        with ProcessPoolExecutor(
            max_workers=min(workers, len(perturbed)),
            initializer=_lr_init,
            initargs=(graph, observed, epsilon_scale, opts),
        ) as pool:
            columns = pool.map(
                _lr_column, [var_index[lid] for lid in perturbed]
            )
            for j, col in enumerate(columns):
                cov[:, j] = col
    return cov


def _response_column(
    graph: FactorGraph,
    factor_index: int,
    observed: Sequence[int],
    epsilon_scale: float,
    opts: BpOptions,
) -> np.ndarray:
    factor = graph.factors[factor_index]
    eps = epsilon_scale * math.sqrt(factor.variance)
    means = []
    for delta in (+eps, -eps):
        shifted = replace(factor, z=factor.z + delta)
        factors = (
            graph.factors[:factor_index]
            + (shifted,)
            + graph.factors[factor_index + 1:]
        )
        result = run_bp(replace(graph, factors=factors), opts)
        if not result.converged:
            raise RuntimeError(
                f"linear-response run for line {factor.line_id} did not "
                f"converge within {opts.max_iterations} iterations"
            )
        means.append(np.array([result.beliefs[lid].mean for lid in observed]))
    return factor.variance * (means[0] - means[1]) / (2.0 * eps)


_LR_CTX: dict = {}


def _lr_init(graph, observed, epsilon_scale, opts) -> None:
    _LR_CTX.update(
        graph=graph, observed=observed, epsilon_scale=epsilon_scale, opts=opts
    )


def _lr_column(factor_index: int) -> np.ndarray:
    return _response_column(
        _LR_CTX["graph"],
        factor_index,
        _LR_CTX["observed"],
        _LR_CTX["epsilon_scale"],
        _LR_CTX["opts"],
    )


# ---------------------------------------------------------------------------
# Area-flow covariance report.


@dataclass(frozen=True)
class AreaFlowReport:
    """Inter-area flows with their full covariance, for one partition.

    ``pairs`` lists the canonical (first-area, second-area) label pairs in
    ``partition.areas`` order; ``covariance`` is indexed that way.  Pairs
    without boundary lines carry flow 0 and a zero covariance row/column.
    """

    partition: Partition
    pairs: Tuple[Tuple[str, str], ...]
    flows: Mapping[Tuple[str, str], float]
    covariance: np.ndarray
    boundary_lines: Mapping[Tuple[str, str], Tuple[Tuple[int, int], ...]]

    @property
    def trace(self) -> float:
        """Sum of area-flow variances (MW^2); the partition score."""
        return float(np.trace(self.covariance))

    def flow(self, first: str, second: str) -> float:
        """Transfer from ``first`` to ``second`` in MW (antisymmetric)."""
        if (first, second) in self.flows:
            return self.flows[(first, second)]
        if (second, first) in self.flows:
            return -self.flows[(second, first)]
        raise KeyError(f"no area pair {(first, second)!r}")

    def pair_index(self, first: str, second: str) -> int:
        """Row/column of the canonical pair in ``covariance``."""
        if (first, second) in self.flows:
            return self.pairs.index((first, second))
        if (second, first) in self.flows:
            return self.pairs.index((second, first))
        raise KeyError(f"no area pair {(first, second)!r}")


def area_flow_covariance(
    graph: FactorGraph,
    partition: Partition,
    case: GridCase,
    *,
    epsilon_scale: float = 1e-3,
    bp_options: Optional[BpOptions] = None,
    workers: int = 1,
) -> AreaFlowReport:
    """Estimate all inter-area flows and their covariance matrix.

    Line-level covariances come from :func:`linear_response_covariance`
    for directly measured boundary lines; for a boundary line with no
    direct measurement (nothing to nudge) the entries among such lines
    fall back to :func:`exact_solver.exact_covariance`, which raises if
    the line is not retrievable at all.  Aggregation then applies the
    boundary signs: ``Cov(F_p, F_q) = sum_{l in p} sum_{l' in q} s_l s_l'
    cov(x_l, x_l')``.
    """
    boundary = boundary_lines(partition, case)
    pairs = tuple(boundary)
    ordered: List[int] = []
    for pair in pairs:
        for line_id, _sign in boundary[pair]:
            if line_id not in ordered:
                ordered.append(line_id)
    n_lines = len(ordered)
    opts = LR_BP_OPTIONS if bp_options is None else bp_options

    line_cov = np.zeros((n_lines, n_lines))
    if n_lines:
        var_index = {lid: k for k, lid in enumerate(graph.variables)}
        measured = [
            lid for lid in ordered if graph.factors[var_index[lid]].variance < _INF
        ]
        unmeasured = [
            lid for lid in ordered if graph.factors[var_index[lid]].variance == _INF
        ]
        pos = {lid: k for k, lid in enumerate(ordered)}
        if measured:
            block = linear_response_covariance(
                graph,
                measured,
                epsilon_scale,
                observe=ordered,
                bp_options=opts,
                workers=workers,
            )
            for j, lid in enumerate(measured):
                line_cov[:, pos[lid]] = block[:, j]
            for lid_u in unmeasured:
                for lid_m in measured:
                    line_cov[pos[lid_m], pos[lid_u]] = line_cov[pos[lid_u], pos[lid_m]]
        if unmeasured:
            exact = exact_covariance(graph, unmeasured)
            for a, lid_a in enumerate(unmeasured):
                for b, lid_b in enumerate(unmeasured):
                    line_cov[pos[lid_a], pos[lid_b]] = exact[a, b]
        line_cov = (line_cov + line_cov.T) / 2.0

    signs = np.zeros((len(pairs), n_lines))
    for pi, pair in enumerate(pairs):
        for line_id, sign in boundary[pair]:
            signs[pi, ordered.index(line_id)] = sign
    covariance = signs @ line_cov @ signs.T
    covariance = (covariance + covariance.T) / 2.0

    flows = area_flows(run_bp(graph, opts), partition, case)
    return AreaFlowReport(
        partition=partition,
        pairs=pairs,
        flows=flows,
        covariance=covariance,
        boundary_lines=boundary,
    )


def partition_score(report: AreaFlowReport) -> float:
    """Trace of the area-flow covariance in MW^2; lower is better."""
    return report.trace


# ---------------------------------------------------------------------------
# Partition search (simulated annealing).


@dataclass(frozen=True)
class AcceptedMove:
    """One accepted annealing move: bus reassignment and score bookkeeping."""

    step: int
    temperature: float
    bus: int
    from_area: str
    to_area: str
    score_before: float
    score_after: float
    best_score: float


@dataclass(frozen=True)
class SearchResult:
    """Best-seen partition from :func:`partition_search` plus its audit log."""

    partition: Partition
    score: float
    initial_score: float
    accepted_moves: Tuple[AcceptedMove, ...]
    n_steps: int
    seed: int

    @property
    def score_trace(self) -> Tuple[float, ...]:
        return tuple(m.score_after for m in self.accepted_moves)


#: Objective terms recognised by :func:`partition_search`: the area-flow
#: covariance trace (MW^2) and a dimensionless size-imbalance penalty
#: (population std over mean).
OBJECTIVE_TERMS = ("trace", "balance")


def partition_search(
    case: GridCase,
    n_areas: int,
    objective_weights: Optional[Mapping[str, float]] = None,
    seed: int = 0,
    *,
    variance: float = 1e-4,
    n_steps: int = 500,
    initial_temperature: Optional[float] = None,
    cooling: float = 0.97,
    name: Optional[str] = None,
) -> SearchResult:
    """Anneal over connected ``n_areas`` partitions, minimising the score.

    The state space is bus-to-area assignments where every area stays a
    connected subgraph; moves reassign one boundary bus to a neighbouring
    area (rejected outright when they would empty or disconnect the donor
    area), accepted by the Metropolis rule under geometric cooling.  The
    covariance feeding the trace objective assumes a fully measured grid
    at ``variance`` -- estimate covariances do not depend on the measured
    values, so it is computed once from the exact solver and re-aggregated
    per candidate, making a move evaluation O(boundary^2).

    Returns the best partition seen with an audit log of accepted moves;
    a fixed seed reproduces the trajectory exactly.  Raises ``ValueError``
    when no connected ``n_areas`` partition exists (more areas than buses,
    or fewer areas than grid components).
    """
    if n_areas < 2:
        raise ValueError("n_areas must be >= 2")
    weights = dict(objective_weights) if objective_weights else {"trace": 1.0}
    unknown = set(weights) - set(OBJECTIVE_TERMS)
    if unknown:
        raise ValueError(
            f"unknown objective terms {sorted(unknown)}; expected {OBJECTIVE_TERMS}"
        )
    if not (0.0 < cooling <= 1.0):
        raise ValueError(f"cooling must be in (0, 1], got {cooling!r}")

    rng = np.random.default_rng(seed)
    adj = _bus_adjacency(case)
    area_of = _random_connected_assignment(case, n_areas, rng, adj)
    labels = tuple(f"A{k + 1}" for k in range(n_areas))

    line_cov = _full_line_covariance(case, variance)
    line_index = {lid: k for k, lid in enumerate(ln.id for ln in case.lines)}

    def score_of(assignment: Dict[int, str]) -> float:
        total = 0.0
        if weights.get("trace"):
            total += weights["trace"] * _assignment_trace(
                assignment, case, line_cov, line_index
            )
        if weights.get("balance"):
            sizes = np.zeros(n_areas)
            rank = {a: k for k, a in enumerate(labels)}
            for label in assignment.values():
                sizes[rank[label]] += 1
            total += weights["balance"] * float(sizes.std() / sizes.mean())
        return total

    current = dict(area_of)
    current_score = score_of(current)
    initial_score = current_score
    best = dict(current)
    best_score = current_score

    temperature = (
        initial_temperature
        if initial_temperature is not None
        else max(0.1 * abs(current_score), 1e-12)
    )
    accepted: List[AcceptedMove] = []
    bus_ids = list(case.bus_ids)

    for step in range(n_steps):
        move = _propose_move(current, bus_ids, adj, rng)
        if move is not None:
            bus, target = move
            donor = current[bus]
            donor_buses = {b for b, a in current.items() if a == donor}
            donor_buses.discard(bus)
            if donor_buses and _is_connected(donor_buses, adj):
                current[bus] = target
                candidate_score = score_of(current)
                delta = candidate_score - current_score
                if delta <= 0.0 or rng.random() < math.exp(-delta / temperature):
                    accepted.append(
                        AcceptedMove(
                            step=step,
                            temperature=temperature,
                            bus=bus,
                            from_area=donor,
                            to_area=target,
                            score_before=current_score,
                            score_after=candidate_score,
                            best_score=min(best_score, candidate_score),
                        )
                    )
                    current_score = candidate_score
                    if candidate_score < best_score:
                        best_score = candidate_score
                        best = dict(current)
                else:
                    current[bus] = donor
        temperature *= cooling

    partition = Partition(
        name=name or f"{case.name}-annealed-{n_areas}areas-seed{seed}",
        area_of={b: best[b] for b in sorted(best)},
        areas=labels,
    )
    return SearchResult(
        partition=partition,
        score=best_score,
        initial_score=initial_score,
        accepted_moves=tuple(accepted),
        n_steps=n_steps,
        seed=seed,
    )


def _random_connected_assignment(
    case: GridCase, n_areas: int, rng: np.random.Generator, adj: Mapping[int, set]
) -> Dict[int, str]:
    """Seeded region growing: connected areas covering every bus."""
    components = case.components
    if n_areas > len(case.buses):
        raise ValueError(
            f"cannot split {len(case.buses)} buses into {n_areas} areas"
        )
    if n_areas < len(components):
        raise ValueError(
            f"{case.name!r} has {len(components)} components; every area must "
            f"be connected, so n_areas must be at least that"
        )
    labels = [f"A{k + 1}" for k in range(n_areas)]
    seeds: List[int] = []
    taken: set = set()
    for comp in components:
        pick = int(rng.choice(sorted(comp)))
        seeds.append(pick)
        taken.add(pick)
    remaining = sorted(set(case.bus_ids) - taken)
    extra = n_areas - len(seeds)
    if extra:
        for pick in rng.choice(remaining, size=extra, replace=False):
            seeds.append(int(pick))
            taken.add(int(pick))

    assignment: Dict[int, str] = {}
    frontier: Dict[str, List[int]] = {}
    for label, bus in zip(labels, seeds):
        assignment[bus] = label
        frontier[label] = [bus]
    unassigned = set(case.bus_ids) - set(assignment)
    while unassigned:
        live = [a for a in labels if frontier[a]]
        if not live:  # pragma: no cover - components all seeded above
            raise ValueError("region growing stalled; grid has isolated buses")
        label = str(rng.choice(live))
        bus = frontier[label][int(rng.integers(len(frontier[label])))]
        candidates = sorted(v for v in adj[bus] if v in unassigned)
        if not candidates:
            frontier[label].remove(bus)
            continue
        claimed = int(rng.choice(candidates))
        assignment[claimed] = label
        frontier[label].append(claimed)
        unassigned.discard(claimed)
    return assignment


def _propose_move(
    assignment: Mapping[int, str],
    bus_ids: Sequence[int],
    adj: Mapping[int, set],
    rng: np.random.Generator,
) -> Optional[Tuple[int, str]]:
    """A random (boundary bus, neighbouring area) reassignment, if any."""
    order = rng.permutation(len(bus_ids))
    for k in order:
        bus = bus_ids[int(k)]
        here = assignment[bus]
        neighbour_areas = sorted({assignment[v] for v in adj[bus]} - {here})
        if neighbour_areas:
            return bus, str(rng.choice(neighbour_areas))
    return None


def _full_line_covariance(case: GridCase, variance: float) -> np.ndarray:
    """Exact estimate covariance of all line flows under full measurement."""
    from .factor_graph import build_factor_graph
    from .scenarios import MeasurementSet

    meas = MeasurementSet(
        flow={ln.id: (float(ln.flow_true), variance) for ln in case.lines},
        injection={b.id: (float(b.injection_true), variance) for b in case.buses},
    )
    graph = build_factor_graph(case, meas)
    return exact_covariance(graph, [ln.id for ln in case.lines])


def _assignment_trace(
    assignment: Mapping[int, str],
    case: GridCase,
    line_cov: np.ndarray,
    line_index: Mapping[int, int],
) -> float:
    """Sum over area pairs of Var(signed boundary-flow sum)."""
    cuts: Dict[Tuple[str, str], Tuple[List[int], List[float]]] = {}
    for ln in case.lines:
        a = assignment[ln.from_bus]
        b = assignment[ln.to_bus]
        if a == b:
            continue
        key, sign = ((a, b), 1.0) if a < b else ((b, a), -1.0)
        cols, sgns = cuts.setdefault(key, ([], []))
        cols.append(line_index[ln.id])
        sgns.append(sign)
    total = 0.0
    for cols, sgns in cuts.values():
        sub = line_cov[np.ix_(cols, cols)]
        vec = np.asarray(sgns)
        total += float(vec @ sub @ vec)
    return total


# ---------------------------------------------------------------------------
# Persistence.


def write_report_csvs(report: AreaFlowReport, directory) -> List[str]:
    """Write ``area_flows.csv`` and ``area_covariance.csv``; returns names."""
    os.makedirs(directory, exist_ok=True)
    written = []

    path = os.path.join(directory, "area_flows.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["from_area", "to_area", "flow_mw", "variance_mw2",
                    "n_boundary_lines", "boundary"])
        for k, pair in enumerate(report.pairs):
            lines = report.boundary_lines[pair]
            w.writerow([
                pair[0], pair[1],
                repr(report.flows[pair]),
                repr(float(report.covariance[k, k])),
                len(lines),
                " ".join(f"{sign * line_id:+d}" for line_id, sign in lines),
            ])
    written.append("area_flows.csv")

    path = os.path.join(directory, "area_covariance.csv")
    labels = [f"{a}->{b}" for a, b in report.pairs]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pair"] + labels)
        for k, label in enumerate(labels):
            w.writerow([label] + [repr(float(v)) for v in report.covariance[k]])
        w.writerow(["trace"] + [repr(report.trace)] + [""] * (len(labels) - 1))
    written.append("area_covariance.csv")
    return written
