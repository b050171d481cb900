"""Gaussian algebra over extended reals and the flows-only factor graph.

Messages and beliefs are one-dimensional Gaussians whose variance lives in
``(0, +inf]``.  A variance of exactly ``+inf`` means "no information" (the
mean is conventionally 0), so retrievability is a crisp predicate: a variable
is retrievable iff its belief variance is finite.

The factor graph has one variable per line (its flow, oriented from_bus ->
to_bus) and two factor kinds: a direct flow measurement per line and a net
injection measurement per bus.  Injection variables are integrated out
exactly, leaving the sign structure (+1 for lines leaving the bus, -1 for
lines entering) inside the injection factors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Union

from .grid_model import GridCase

__all__ = [
    "Gaussian1D",
    "UNINFORMATIVE",
    "gaussian_product",
    "gaussian_sum_message",
    "FlowMeas",
    "InjMeas",
    "FactorGraph",
    "build_factor_graph",
    "export_debug_text",
]

_INF = math.inf


class Gaussian1D(NamedTuple):
    """A 1-D Gaussian; ``variance`` in ``(0, +inf]``, mean 0 when variance is inf."""

    mean: float
    variance: float

    @property
    def informative(self) -> bool:
        return self.variance < _INF


#: The identity element of ``gaussian_product``: carries no information.
UNINFORMATIVE = Gaussian1D(0.0, _INF)


def gaussian_product(msgs: Iterable[Gaussian1D]) -> Gaussian1D:
    """Product of Gaussian messages (precision-additive; empty product is flat).

    ``1/v = sum(1/v_k)`` and ``mu = v * sum(mu_k / v_k)`` with ``1/inf = 0``.
    """
    precision = 0.0
    weighted_mean = 0.0
    for m in msgs:
        v = m.variance
        if v < _INF:
            precision += 1.0 / v
            weighted_mean += m.mean / v
    if precision == 0.0:
        return UNINFORMATIVE
    return Gaussian1D(weighted_mean / precision, 1.0 / precision)


@dataclass(frozen=True)
class FlowMeas:
    """Direct measurement of one line flow; degree-1 factor."""

    line_id: int
    z: float
    variance: float


@dataclass(frozen=True)
class InjMeas:
    """Net-injection measurement at a bus.

    ``signs`` maps each incident line id to +1 if the line leaves the bus
    and -1 if it enters; the measured quantity is ``sum(s_l * x_l)``.
    """

    bus_id: int
    signs: Mapping[int, int]
    z: float
    variance: float


FactorNode = Union[FlowMeas, InjMeas]


def gaussian_sum_message(
    factor: InjMeas,
    target_line: int,
    incoming: Mapping[int, Gaussian1D],
) -> Gaussian1D:
    """Message from an injection factor to one of its lines.

    With ``s`` the sign of the target line, the message is
    ``N(s * (z - sum_{j != target} s_j mu_j), sigma^2 + sum_{j != target} v_j)``;
    an infinite variance anywhere (including the factor's own) makes the
    output uninformative.
    """
    if not isinstance(factor, InjMeas):
        raise TypeError("gaussian_sum_message requires an injection factor")
    if target_line not in factor.signs:
        raise ValueError(
            f"line {target_line} is not adjacent to the injection factor "
            f"at bus {factor.bus_id}"
        )
    if factor.variance == _INF:
        return UNINFORMATIVE
    mean_sum = 0.0
    var_sum = factor.variance
    for line_id, sign in factor.signs.items():
        if line_id == target_line:
            continue
        try:
            msg = incoming[line_id]
        except KeyError:
            raise ValueError(
                f"missing incoming message for line {line_id} at the "
                f"injection factor of bus {factor.bus_id}"
            ) from None
        if msg.variance == _INF:
            return UNINFORMATIVE
        mean_sum += sign * msg.mean
        var_sum += msg.variance
    s = factor.signs[target_line]
    return Gaussian1D(s * (factor.z - mean_sum), var_sum)


@dataclass(frozen=True)
class FactorGraph:
    """Bipartite graph of line-flow variables and measurement factors.

    ``variables`` lists line ids in case order; ``factors`` holds one
    FlowMeas per line followed by one InjMeas per bus (missing measurements
    carry variance inf).  ``var_to_factors``/``factor_to_vars`` give the
    adjacency in both directions (factor side indexed by position in
    ``factors``).
    """

    variables: tuple[int, ...]
    factors: tuple[FactorNode, ...]
    var_to_factors: Mapping[int, tuple[int, ...]]
    factor_to_vars: Mapping[int, tuple[int, ...]]

    def flow_factor(self, line_id: int) -> FlowMeas:
        return self.factors[self.variables.index(line_id)]

    @property
    def injection_factors(self) -> tuple[InjMeas, ...]:
        return tuple(f for f in self.factors if isinstance(f, InjMeas))


def build_factor_graph(case: GridCase, meas) -> FactorGraph:
    """Assemble the flows-only factor graph for a case and a measurement set.

    Every line gets a FlowMeas factor and every bus an InjMeas factor; a
    missing measurement is represented with variance inf rather than pruned,
    so iteration-depth accounting sees the full graph.  Measurement entries
    referencing unknown lines or buses, or failing to cover the case, raise
    ``ValueError``.
    """
    line_ids = tuple(ln.id for ln in case.lines)
    bus_ids = tuple(b.id for b in case.buses)
    flow_entries = dict(meas.flow)
    inj_entries = dict(meas.injection)

    unknown_lines = set(flow_entries) - set(line_ids)
    if unknown_lines:
        raise ValueError(f"measurements reference unknown lines {sorted(unknown_lines)}")
    unknown_buses = set(inj_entries) - set(bus_ids)
    if unknown_buses:
        raise ValueError(f"measurements reference unknown buses {sorted(unknown_buses)}")
    missing_lines = set(line_ids) - set(flow_entries)
    if missing_lines:
        raise ValueError(
            f"measurement set lacks flow entries for lines {sorted(missing_lines)}"
        )
    missing_buses = set(bus_ids) - set(inj_entries)
    if missing_buses:
        raise ValueError(
            f"measurement set lacks injection entries for buses {sorted(missing_buses)}"
        )

    factors: list[FactorNode] = []
    var_to_factors: dict[int, list[int]] = {lid: [] for lid in line_ids}
    factor_to_vars: dict[int, tuple[int, ...]] = {}

    for lid in line_ids:
        z, variance = flow_entries[lid]
        _check_variance(variance, f"flow measurement on line {lid}")
        idx = len(factors)
        factors.append(FlowMeas(lid, 0.0 if z is None else float(z), variance))
        var_to_factors[lid].append(idx)
        factor_to_vars[idx] = (lid,)

    for bus_id in bus_ids:
        z, variance = inj_entries[bus_id]
        _check_variance(variance, f"injection measurement at bus {bus_id}")
        signs = {}
        for ln in case.incident_lines(bus_id):
            signs[ln.id] = 1 if ln.from_bus == bus_id else -1
        idx = len(factors)
        factors.append(
            InjMeas(bus_id, signs, 0.0 if z is None else float(z), variance)
        )
        for lid in signs:
            var_to_factors[lid].append(idx)
        factor_to_vars[idx] = tuple(signs)

    return FactorGraph(
        variables=line_ids,
        factors=tuple(factors),
        var_to_factors={k: tuple(v) for k, v in var_to_factors.items()},
        factor_to_vars=factor_to_vars,
    )


def _check_variance(variance: float, what: str) -> None:
    if not (variance > 0):
        raise ValueError(f"{what} has non-positive variance {variance!r}")


def export_debug_text(graph: FactorGraph) -> str:
    """Line-oriented dump (``VAR id`` / ``FAC kind ids z var``) for fixtures."""
    rows = [f"VAR {lid}" for lid in graph.variables]
    for f in graph.factors:
        if isinstance(f, FlowMeas):
            rows.append(f"FAC flow {f.line_id} {f.z!r} {f.variance!r}")
        else:
            ids = ",".join(f"{lid}:{s:+d}" for lid, s in sorted(f.signs.items()))
            rows.append(f"FAC inj {f.bus_id} {ids or '-'} {f.z!r} {f.variance!r}")
    return "\n".join(rows) + "\n"
