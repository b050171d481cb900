"""Measurement scenarios: noise draws, missing-data masks, retrievability.

A scenario assigns one flow measurement per line and one injection
measurement per bus.  Missing measurements are represented by infinite
variance (never by absence), so downstream factor graphs always cover the
whole grid.  Masks are produced by three placement strategies:

* ``Uniform`` — both flow and injection masks drawn uniformly at random;
* ``LeastConnected`` — injection measurements removed deterministically in
  ascending bus-degree order (ties by bus id), flows still uniform;
* ``MinSumMoverC`` — injection measurements removed greedily so that each
  removal minimally increases Σ_i m_i/c_i, where m_i counts missing
  injections among the neighbours of bus i and c_i is its degree.  Removing
  the measurement at bus j raises the objective by Σ_{i∈N(j)} 1/c_i
  regardless of the current mask, so the greedy order is the ascending
  order of that static cost (ties by bus id); flows remain uniform.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Mapping, Tuple, Union

import numpy as np

from .bp_engine import BpResult
from .grid_model import GridCase

__all__ = [
    "STRATEGIES",
    "MeasurementSet",
    "MissingMask",
    "make_mask",
    "sample_measurements",
    "injection_retrievable",
    "count_retrievable",
    "write_measurements_csv",
    "read_measurements_csv",
]

STRATEGIES = ("Uniform", "LeastConnected", "MinSumMoverC")

_INF = float("inf")

Entry = Tuple[float, float]  # (z, variance)


@dataclass(frozen=True)
class MeasurementSet:
    """One complete (possibly partially missing) measurement assignment.

    Every line id and bus id has an entry; a missing measurement carries
    variance inf (and z = 0.0, which is never used).  ``seed`` records the
    noise seed the set was drawn with (-1 when unknown, e.g. after reading
    from a CSV without provenance).
    """

    flow: Mapping[int, Entry]
    injection: Mapping[int, Entry]
    seed: int = -1

    def __post_init__(self) -> None:
        for name, entries in (("flow", self.flow), ("injection", self.injection)):
            for key, (z, variance) in entries.items():
                if not variance > 0.0:
                    raise ValueError(
                        f"{name} measurement {key} has non-positive variance"
                    )
                if math.isfinite(variance) and not math.isfinite(z):
                    raise ValueError(f"{name} measurement {key} has non-finite value")


@dataclass(frozen=True)
class MissingMask:
    """Which measurements a scenario removes, and how it was built.

    ``fractions`` is (flow fraction, injection fraction); realized set sizes
    are the half-up roundings of fraction × population, recorded in
    ``counts`` alongside.
    """

    missing_flows: FrozenSet[int]
    missing_injections: FrozenSet[int]
    strategy: str
    fractions: Tuple[float, float]
    counts: Tuple[int, int] = field(default=(0, 0))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _normalize_strategy(strategy: str) -> str:
    wanted = strategy.replace("_", "").replace("-", "").lower()
    for name in STRATEGIES:
        if name.lower() == wanted:
            return name
    raise ValueError(f"unknown mask strategy {strategy!r}; expected one of {STRATEGIES}")


def make_mask(
    case: GridCase,
    fractions: Union[float, Tuple[float, float]],
    strategy: str = "Uniform",
    seed: int = 0,
) -> MissingMask:
    """Choose which measurements are missing.

    ``fractions`` is either a single number (equal flow and injection
    fractions) or an explicit ``(flow_fraction, injection_fraction)`` pair.
    The result is a pure function of (case, fractions, strategy, seed).
    """
    if isinstance(fractions, (int, float)):
        fractions = (float(fractions), float(fractions))
    f_flow, f_inj = (float(fractions[0]), float(fractions[1]))
    for f in (f_flow, f_inj):
        if not 0.0 <= f <= 1.0:
            raise ValueError(f"fraction {f} outside [0, 1]")
    strategy = _normalize_strategy(strategy)

    line_ids = np.array([ln.id for ln in case.lines])
    bus_ids = np.array([b.id for b in case.buses])
    n_flow = _round_half_up(f_flow * len(line_ids))
    n_inj = _round_half_up(f_inj * len(bus_ids))
    rng = np.random.default_rng(seed)

    flows = frozenset(
        int(i) for i in rng.choice(line_ids, size=n_flow, replace=False)
    )

    if strategy == "Uniform":
        injections = frozenset(
            int(i) for i in rng.choice(bus_ids, size=n_inj, replace=False)
        )
    elif strategy == "LeastConnected":
        order = sorted(case.buses, key=lambda b: (case.degree(b.id), b.id))
        injections = frozenset(b.id for b in order[:n_inj])
    else:  # MinSumMoverC
        degree = {b.id: case.degree(b.id) for b in case.buses}
        neighbours: Dict[int, list] = {b.id: [] for b in case.buses}
        for ln in case.lines:
            neighbours[ln.from_bus].append(ln.to_bus)
            neighbours[ln.to_bus].append(ln.from_bus)
        cost = {
            b.id: sum(1.0 / degree[j] for j in neighbours[b.id])
            for b in case.buses
        }
        order = sorted(case.buses, key=lambda b: (cost[b.id], b.id))
        injections = frozenset(b.id for b in order[:n_inj])

    return MissingMask(
        missing_flows=flows,
        missing_injections=injections,
        strategy=strategy,
        fractions=(f_flow, f_inj),
        counts=(n_flow, n_inj),
    )


def sample_measurements(
    case: GridCase,
    mask: MissingMask,
    variance: float = 1e-4,
    seed: int = 0,
) -> MeasurementSet:
    """Draw z = truth + N(0, variance) for every present measurement.

    Requires true flows/injections on the case (``derive_dc_state``).
    Missing entries get variance inf and consume no randomness, so the draw
    for any present measurement depends only on the seed and on which
    measurements precede it (lines in case order, then buses).
    """
    if not variance > 0.0:
        raise ValueError("variance must be > 0")
    sigma = math.sqrt(variance)
    rng = np.random.default_rng(seed)
    flow: Dict[int, Entry] = {}
    for ln in case.lines:
        if ln.id in mask.missing_flows:
            flow[ln.id] = (0.0, _INF)
        else:
            if ln.flow_true is None:
                raise ValueError(f"line {ln.id} has no true flow; derive the DC state first")
            flow[ln.id] = (ln.flow_true + sigma * rng.standard_normal(), variance)
    injection: Dict[int, Entry] = {}
    for b in case.buses:
        if b.id in mask.missing_injections:
            injection[b.id] = (0.0, _INF)
        else:
            if b.injection_true is None:
                raise ValueError(f"bus {b.id} has no true injection; derive the DC state first")
            injection[b.id] = (b.injection_true + sigma * rng.standard_normal(), variance)
    return MeasurementSet(flow=flow, injection=injection, seed=seed)


def injection_retrievable(
    bus_id: int,
    meas: MeasurementSet,
    bp: BpResult,
    case: GridCase,
) -> bool:
    """Whether the injection datum at a bus can be recovered.

    True when the bus has a direct (finite-variance) injection measurement,
    or when every flow on its incident lines is retrievable (finite belief
    variance).
    """
    if math.isfinite(meas.injection[bus_id][1]):
        return True
    return all(
        bp.beliefs[ln.id].variance < _INF for ln in case.incident_lines(bus_id)
    )


def count_retrievable(
    case: GridCase, meas: MeasurementSet, bp: BpResult
) -> Tuple[int, int]:
    """(retrievable flow count, retrievable injection count) for one sample."""
    n_flow = sum(1 for ln in case.lines if bp.beliefs[ln.id].variance < _INF)
    n_inj = sum(
        1 for b in case.buses if injection_retrievable(b.id, meas, bp, case)
    )
    return n_flow, n_inj


def write_measurements_csv(meas: MeasurementSet, path) -> None:
    """Persist a measurement set (``kind,id,z,variance``; inf = missing)."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={meas.seed}\n")
        writer = csv.writer(fh)
        writer.writerow(["kind", "id", "z", "variance"])
        for line_id, (z, variance) in sorted(meas.flow.items()):
            writer.writerow(["flow", line_id, repr(z), repr(variance)])
        for bus_id, (z, variance) in sorted(meas.injection.items()):
            writer.writerow(["injection", bus_id, repr(z), repr(variance)])


def read_measurements_csv(path) -> MeasurementSet:
    """Inverse of :func:`write_measurements_csv` (exact round-trip)."""
    seed = -1
    flow: Dict[int, Entry] = {}
    injection: Dict[int, Entry] = {}
    with open(path, newline="") as fh:
        first = fh.readline()
        if first.startswith("# seed="):
            seed = int(first[len("# seed="):].strip())
        else:
            fh.seek(0)
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["kind", "id", "z", "variance"]:
            raise ValueError(f"unexpected measurement CSV header {header!r}")
        for row in reader:
            if not row:
                continue
            kind, ident, z, variance = row
            entry = (float(z), float(variance))
            if kind == "flow":
                flow[int(ident)] = entry
            elif kind == "injection":
                injection[int(ident)] = entry
            else:
                raise ValueError(f"unexpected measurement kind {kind!r}")
    return MeasurementSet(flow=flow, injection=injection, seed=seed)
