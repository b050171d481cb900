"""Grid cases: IEEE Common Data Format import, DC ground truth, topology.

A :class:`GridCase` is an immutable snapshot of a transmission grid: buses
with solved phase angles and oriented lines with susceptances.  The DC ground
truth (line flows in MW and net bus injections) is derived from the angles,
not read from the file, so generation/load columns in the source data are
informational only.

Parallel circuits between the same bus pair are merged into a single line by
summing susceptances; the merge is recorded in ``GridCase.provenance``.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

__all__ = [
    "Bus",
    "Line",
    "GridCase",
    "CdfParseError",
    "TopologyError",
    "import_cdf",
    "derive_dc_state",
    "topology_stats",
    "save_snapshot",
    "load_snapshot",
    "bundled_case_names",
    "load_case",
]

#: Relative injection imbalance (vs. base MVA) above which a warning is issued.
IMBALANCE_WARN_REL = 1e-6


class CdfParseError(ValueError):
    """A malformed record in an IEEE Common Data Format file."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class TopologyError(ValueError):
    """Inconsistent grid topology (dangling endpoints, self-loops, ...)."""


@dataclass(frozen=True)
class Bus:
    """A network node.

    ``angle`` is the solved phase angle in radians; ``injection_true`` is the
    derived net injection in MW (``None`` until :func:`derive_dc_state` runs).
    """

    id: int
    angle: float
    injection_true: float | None = None


@dataclass(frozen=True)
class Line:
    """An oriented transmission line; positive flow runs from_bus -> to_bus.

    ``susceptance`` is per-unit (1/reactance, parallel circuits summed);
    ``flow_true`` is the derived DC flow in MW (``None`` until
    :func:`derive_dc_state` runs).
    """

    id: int
    from_bus: int
    to_bus: int
    susceptance: float
    flow_true: float | None = None


@dataclass(frozen=True)
class GridCase:
    """An immutable grid case; safe to share across threads and processes."""

    name: str
    base_mva: float
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    provenance: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise TopologyError(f"duplicate bus ids in case {self.name!r}")
        bus_set = set(ids)
        seen_pairs = set()
        for ln in self.lines:
            if ln.from_bus == ln.to_bus:
                raise TopologyError(f"line {ln.id} is a self-loop")
            if ln.from_bus not in bus_set or ln.to_bus not in bus_set:
                raise TopologyError(
                    f"line {ln.id} references missing bus "
                    f"{ln.from_bus if ln.from_bus not in bus_set else ln.to_bus}"
                )
            if not (ln.susceptance > 0):
                raise TopologyError(
                    f"line {ln.id} has non-positive susceptance"
                )
            pair = frozenset((ln.from_bus, ln.to_bus))
            if pair in seen_pairs:
                raise TopologyError(
                    f"unmerged parallel line {ln.id} "
                    f"({ln.from_bus}-{ln.to_bus})"
                )
            seen_pairs.add(pair)
        for b in self.buses:
            if not math.isfinite(b.angle):
                raise TopologyError(f"bus {b.id} has non-finite angle")

    @property
    def bus_ids(self) -> tuple[int, ...]:
        return tuple(b.id for b in self.buses)

    @property
    def components(self) -> tuple[frozenset, ...]:
        """Connected components as frozensets of bus ids."""
        adj: dict[int, set] = {b.id: set() for b in self.buses}
        for ln in self.lines:
            adj[ln.from_bus].add(ln.to_bus)
            adj[ln.to_bus].add(ln.from_bus)
        seen: set[int] = set()
        comps = []
        for start in sorted(adj):
            if start in seen:
                continue
            stack = [start]
            comp = set()
            while stack:
                u = stack.pop()
                if u in seen:
                    continue
                seen.add(u)
                comp.add(u)
                stack.extend(adj[u] - seen)
            comps.append(frozenset(comp))
        return tuple(comps)

    @property
    def loop_count(self) -> int:
        return len(self.lines) - len(self.buses) + len(self.components)

    def line_by_id(self, line_id: int) -> Line:
        try:
            return self._line_index[line_id]
        except AttributeError:
            index = {ln.id: ln for ln in self.lines}
            object.__setattr__(self, "_line_index", index)
            return index[line_id]

    def bus_by_id(self, bus_id: int) -> Bus:
        try:
            return self._bus_index[bus_id]
        except AttributeError:
            index = {b.id: b for b in self.buses}
            object.__setattr__(self, "_bus_index", index)
            return index[bus_id]

    def incident_lines(self, bus_id: int) -> tuple[Line, ...]:
        try:
            inc = self._incidence
        except AttributeError:
            inc = {b.id: [] for b in self.buses}
            for ln in self.lines:
                inc[ln.from_bus].append(ln)
                inc[ln.to_bus].append(ln)
            inc = {k: tuple(v) for k, v in inc.items()}
            object.__setattr__(self, "_incidence", inc)
        return inc[bus_id]

    def degree(self, bus_id: int) -> int:
        return len(self.incident_lines(bus_id))


def _parse_field(path, line_no, text, conv, what):
    try:
        return conv(text.strip())
    except ValueError:
        raise CdfParseError(
            path, line_no, f"cannot parse {what} from field {text!r}"
        ) from None


def import_cdf(path) -> GridCase:
    """Load a grid case from IEEE Common Data Format fixed-column text.

    Bus records provide ids and solved angles (converted to radians); branch
    records provide endpoints and reactances.  Parallel circuits are merged by
    summing susceptances (recorded under ``provenance['parallel_groups']``).
    Records with zero reactance are rejected; negative reactances (equivalent
    branches of multi-winding transformers) contribute ``1/|x|`` and are
    counted in ``provenance['negative_reactance_records']``.
    """
    path = Path(path)
    text_lines = path.read_text().splitlines()
    if not text_lines:
        raise CdfParseError(path, 1, "empty file")

    base_mva = _parse_field(path, 1, text_lines[0][31:37], float, "base MVA")

    section = None
    buses: list[Bus] = []
    bus_ids: set[int] = set()
    branch_records: list[tuple[int, int, float, int]] = []

    for line_no, raw in enumerate(text_lines[1:], start=2):
        stripped = raw.strip()
        upper = stripped.upper()
        if upper.startswith("BUS DATA FOLLOWS"):
            section = "bus"
            continue
        if upper.startswith("BRANCH DATA FOLLOWS"):
            section = "branch"
            continue
        if stripped.startswith("-999") or stripped.startswith("-99") \
                or stripped.startswith("-9"):
            section = None
            continue
        if upper.startswith("END OF DATA"):
            break
        if section is None or not stripped:
            continue
        if section == "bus":
            bus_id = _parse_field(path, line_no, raw[0:4], int, "bus id")
            angle_deg = _parse_field(
                path, line_no, raw[33:40], float, "bus angle"
            )
            if bus_id in bus_ids:
                raise CdfParseError(path, line_no, f"duplicate bus {bus_id}")
            bus_ids.add(bus_id)
            buses.append(Bus(id=bus_id, angle=math.radians(angle_deg)))
        elif section == "branch":
            f = _parse_field(path, line_no, raw[0:4], int, "from bus")
            t = _parse_field(path, line_no, raw[5:9], int, "to bus")
            x = _parse_field(path, line_no, raw[29:40], float, "reactance")
            if f == t:
                raise TopologyError(
                    f"{path}:{line_no}: branch {f}-{t} is a self-loop"
                )
            if f not in bus_ids or t not in bus_ids:
                raise TopologyError(
                    f"{path}:{line_no}: branch {f}-{t} references a bus "
                    "not in the bus section"
                )
            if x == 0.0:
                raise CdfParseError(
                    path, line_no,
                    f"branch {f}-{t} has zero reactance; "
                    "cannot form a susceptance",
                )
            branch_records.append((f, t, x, line_no))

    if not buses:
        raise CdfParseError(path, len(text_lines), "no bus records found")
    if not branch_records:
        raise CdfParseError(path, len(text_lines), "no branch records found")

    # Merge parallel circuits: group by unordered pair, keep the first
    # record's orientation, sum susceptances.
    groups: dict[frozenset, list[tuple[int, int, float]]] = {}
    order: list[frozenset] = []
    negative = 0
    for f, t, x, _line_no in branch_records:
        if x < 0:
            negative += 1
        key = frozenset((f, t))
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append((f, t, x))

    lines: list[Line] = []
    parallel_groups = []
    for line_id, key in enumerate(order, start=1):
        records = groups[key]
        f, t, _ = records[0]
        susceptance = sum(1.0 / abs(x) for _, _, x in records)
        if len(records) > 1:
            parallel_groups.append((f, t, len(records)))
        lines.append(
            Line(id=line_id, from_bus=f, to_bus=t, susceptance=susceptance)
        )

    provenance = {
        "source": str(path),
        "format": "ieee-cdf",
        "raw_branch_records": len(branch_records),
        "parallel_groups": tuple(parallel_groups),
        "negative_reactance_records": negative,
    }
    return GridCase(
        name=path.stem,
        base_mva=base_mva,
        buses=tuple(buses),
        lines=tuple(lines),
        provenance=provenance,
    )


def derive_dc_state(case: GridCase) -> GridCase:
    """Fill in DC ground truth: line flows and net bus injections (MW).

    ``flow = base_mva * susceptance * (angle_from - angle_to)`` and the
    injection at each bus is the signed sum of incident flows (outgoing
    positive).  Total injection should vanish by construction; an imbalance
    above ``1e-6 * base_mva`` raises a warning, never an error.
    """
    angle = {b.id: b.angle for b in case.buses}
    lines = tuple(
        replace(
            ln,
            flow_true=case.base_mva
            * ln.susceptance
            * (angle[ln.from_bus] - angle[ln.to_bus]),
        )
        for ln in case.lines
    )
    injection = {b.id: 0.0 for b in case.buses}
    for ln in lines:
        injection[ln.from_bus] += ln.flow_true
        injection[ln.to_bus] -= ln.flow_true
    total = sum(injection.values())
    if abs(total) > IMBALANCE_WARN_REL * case.base_mva:
        warnings.warn(
            f"case {case.name!r}: total injection imbalance {total:.3e} MW",
            stacklevel=2,
        )
    buses = tuple(replace(b, injection_true=injection[b.id]) for b in case.buses)
    return GridCase(
        name=case.name,
        base_mva=case.base_mva,
        buses=buses,
        lines=lines,
        provenance=dict(case.provenance),
    )


def topology_stats(case: GridCase) -> dict:
    """Degree histogram, independent-loop count and component count."""
    histogram: dict[int, int] = {}
    for b in case.buses:
        d = case.degree(b.id)
        histogram[d] = histogram.get(d, 0) + 1
    return {
        "degree_histogram": dict(sorted(histogram.items())),
        "loop_count": case.loop_count,
        "component_count": len(case.components),
    }


_SNAPSHOT_HEADER = "# gridbp case snapshot v1"


def _fmt_opt(value: float | None) -> str:
    return "NA" if value is None else repr(value)


def _parse_opt(text: str) -> float | None:
    return None if text == "NA" else float(text)


def save_snapshot(case: GridCase, path) -> None:
    """Write a structured-text snapshot that round-trips exactly.

    Format: a header line, then ``name``, ``base_mva``, one ``bus`` record
    per bus (``bus <id> <angle> <injection|NA>``) and one ``line`` record per
    line (``line <id> <from> <to> <susceptance> <flow|NA>``).  Floats are
    written with ``repr`` so that re-importing reproduces the case bit for
    bit.
    """
    rows = [_SNAPSHOT_HEADER, f"name {case.name}", f"base_mva {case.base_mva!r}"]
    for b in case.buses:
        rows.append(f"bus {b.id} {b.angle!r} {_fmt_opt(b.injection_true)}")
    for ln in case.lines:
        rows.append(
            f"line {ln.id} {ln.from_bus} {ln.to_bus} "
            f"{ln.susceptance!r} {_fmt_opt(ln.flow_true)}"
        )
    Path(path).write_text("\n".join(rows) + "\n")


def load_snapshot(path) -> GridCase:
    """Load a case written by :func:`save_snapshot`."""
    path = Path(path)
    rows = path.read_text().splitlines()
    if not rows or rows[0] != _SNAPSHOT_HEADER:
        raise CdfParseError(path, 1, "not a gridbp case snapshot")
    name = None
    base_mva = None
    buses: list[Bus] = []
    lines: list[Line] = []
    for line_no, row in enumerate(rows[1:], start=2):
        if not row.strip():
            continue
        parts = row.split()
        kind = parts[0]
        try:
            if kind == "name":
                name = parts[1]
            elif kind == "base_mva":
                base_mva = float(parts[1])
            elif kind == "bus":
                buses.append(
                    Bus(int(parts[1]), float(parts[2]), _parse_opt(parts[3]))
                )
            elif kind == "line":
                lines.append(
                    Line(
                        int(parts[1]),
                        int(parts[2]),
                        int(parts[3]),
                        float(parts[4]),
                        _parse_opt(parts[5]),
                    )
                )
            else:
                raise CdfParseError(path, line_no, f"unknown record {kind!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, CdfParseError):
                raise
            raise CdfParseError(path, line_no, f"malformed record: {row!r}") from None
    if name is None or base_mva is None:
        raise CdfParseError(path, len(rows), "missing name or base_mva record")
    return GridCase(
        name=name,
        base_mva=base_mva,
        buses=tuple(buses),
        lines=tuple(lines),
        provenance={"source": str(path), "format": "snapshot"},
    )


def _data_dir() -> Path:
    env = os.environ.get("GRIDBP_CASE_DIR")
    if env:
        return Path(env)
    return Path(__file__).resolve().parent / "data"


def bundled_case_names() -> tuple[str, ...]:
    """Names accepted by :func:`load_case` (stems of bundled case files)."""
    return tuple(sorted(p.stem for p in _data_dir().glob("*.cdf")))


def load_case(name_or_path, derive: bool = True) -> GridCase:
    """Load a case by bundled name (e.g. ``ieee118``) or by file path.

    The case directory defaults to the packaged data and can be overridden
    with the ``GRIDBP_CASE_DIR`` environment variable.  With ``derive`` the
    DC ground truth is filled in.
    """
    p = Path(name_or_path)
    if not p.suffix and not p.exists():
        p = _data_dir() / f"{name_or_path}.cdf"
    if not p.exists():
        raise FileNotFoundError(
            f"case {name_or_path!r} not found (looked at {p}); "
            f"bundled cases: {', '.join(bundled_case_names())}"
        )
    if p.suffix == ".snap":
        case = load_snapshot(p)
    else:
        case = import_cdf(p)
    return derive_dc_state(case) if derive else case
