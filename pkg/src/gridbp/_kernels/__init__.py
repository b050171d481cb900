"""Message-sweep kernels: compiled core with a NumPy fallback.

The synchronous sweep over the whole factor graph is the hot loop of every
Monte-Carlo experiment, so it is implemented twice with one contract:

* ``gridbp._kernels._sweep`` — Cython, built at install time;
* ``gridbp._kernels._sweep_py`` — vectorized NumPy, always available.

The compiled kernel is selected at import when present; set
``GRIDBP_PURE_PYTHON=1`` to force the fallback.  Both expose

``run_sweeps(packed, max_iterations, tol_mean, tol_var, damping,
record_trace) -> (bel_mean, bel_var, converged, iterations, first_finite,
trace)``

where ``packed`` is produced by :func:`pack_graph`.  Means are 0 and
precisions 0 for uninformative quantities; ``first_finite`` is -1 for
variables whose belief variance never became finite; ``trace`` is an
``(iterations, 3)`` array of per-sweep ``(sum_delta_mean, sum_delta_var,
finite_count)`` rows or ``None``.  A non-finite message raises
``ArithmeticError(message, iteration)``.
"""

from __future__ import annotations

import os
from typing import NamedTuple

import numpy as np

from ..factor_graph import FactorGraph, FlowMeas, InjMeas

__all__ = ["PackedGraph", "pack_graph", "run_sweeps", "BACKEND", "load_backend"]


class PackedGraph(NamedTuple):
    """Array form of a factor graph, laid out for the sweep kernels.

    Injection-factor edges are stored factor-major (CSR): factor ``a`` owns
    edges ``fac_ptr[a]:fac_ptr[a+1]``.  Every line has exactly two injection
    edges (one per endpoint), listed in ``line_edges``; ``edge_sibling`` maps
    an edge to the other edge of the same line.
    """

    line_ids: tuple[int, ...]
    flow_z: np.ndarray  # (L,) float64
    flow_var: np.ndarray  # (L,) float64, inf = missing
    fac_bus: tuple[int, ...]
    fac_z: np.ndarray  # (F,) float64
    fac_var: np.ndarray  # (F,) float64, inf = missing
    fac_ptr: np.ndarray  # (F+1,) int32
    edge_line: np.ndarray  # (E,) int32, variable index per edge
    edge_sign: np.ndarray  # (E,) float64, +1 / -1
    edge_fac: np.ndarray  # (E,) int32
    edge_sibling: np.ndarray  # (E,) int32
    line_edges: np.ndarray  # (L, 2) int32


def pack_graph(graph: FactorGraph) -> PackedGraph:
    """Lower a :class:`FactorGraph` to the array layout used by the kernels."""
    line_ids = graph.variables
    index = {lid: i for i, lid in enumerate(line_ids)}
    n_lines = len(line_ids)

    flow_z = np.zeros(n_lines)
    flow_var = np.full(n_lines, np.inf)
    inj_factors = []
    for f in graph.factors:
        if isinstance(f, FlowMeas):
            flow_z[index[f.line_id]] = f.z
            flow_var[index[f.line_id]] = f.variance
        elif f.signs:  # an isolated bus has no edges to sweep
            inj_factors.append(f)

    fac_bus = []
    fac_z = np.zeros(len(inj_factors))
    fac_var = np.zeros(len(inj_factors))
    fac_ptr = np.zeros(len(inj_factors) + 1, np.int32)
    edge_line: list[int] = []
    edge_sign: list[float] = []
    edge_fac: list[int] = []
    for a, f in enumerate(inj_factors):
        fac_bus.append(f.bus_id)
        fac_z[a] = f.z
        fac_var[a] = f.variance
        for lid, s in f.signs.items():
            edge_line.append(index[lid])
            edge_sign.append(float(s))
            edge_fac.append(a)
        fac_ptr[a + 1] = len(edge_line)

    edge_line_arr = np.asarray(edge_line, np.int32)
    line_edges = np.full((n_lines, 2), -1, np.int32)
    for e, li in enumerate(edge_line_arr):
        slot = 0 if line_edges[li, 0] < 0 else 1
        if line_edges[li, slot] >= 0:
            raise ValueError(f"line {line_ids[li]} has more than two injection edges")
        line_edges[li, slot] = e
    if (line_edges < 0).any():
        bad = [line_ids[i] for i in np.where((line_edges < 0).any(axis=1))[0]]
        raise ValueError(f"lines {bad} lack two injection edges")
    edge_sibling = np.empty(len(edge_line), np.int32)
    for a, b in line_edges:
        edge_sibling[a] = b
        edge_sibling[b] = a

    return PackedGraph(
        line_ids=line_ids,
        flow_z=flow_z,
        flow_var=flow_var,
        fac_bus=tuple(fac_bus),
        fac_z=fac_z,
        fac_var=fac_var,
        fac_ptr=fac_ptr,
        edge_line=edge_line_arr,
        edge_sign=np.asarray(edge_sign),
        edge_fac=np.asarray(edge_fac, np.int32),
        edge_sibling=edge_sibling,
        line_edges=line_edges,
    )


def load_backend(name: str):
    """Return the ``run_sweeps`` callable of a named backend."""
    if name == "cython":
        from . import _sweep

        return _sweep.run_sweeps
    if name == "python":
        from . import _sweep_py

        return _sweep_py.run_sweeps
    raise ValueError(f"unknown kernel backend {name!r}")


if os.environ.get("GRIDBP_PURE_PYTHON", "").strip() not in ("", "0"):
    BACKEND = "python"
    run_sweeps = load_backend("python")
else:
    try:
        run_sweeps = load_backend("cython")
        BACKEND = "cython"
    except ImportError:
        run_sweeps = load_backend("python")
        BACKEND = "python"
