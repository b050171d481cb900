"""Synchronous Gaussian belief propagation on flow factor graphs.

The engine runs a flooding schedule: each iteration first sends every
variable-to-factor message (computed from the previous sweep's
factor-to-variable messages), then every factor-to-variable message.  All
messages start with infinite variance, so a variable's own flow measurement
first reaches its neighbours on sweep two.  Beliefs are re-formed after every
sweep and convergence is declared when both the summed absolute mean change
and the summed absolute variance change fall below their tolerances.

A variable is *retrievable* exactly when its belief variance is finite; the
iteration at which that first happens is recorded per line, which is what the
iteration-depth retrieval profiles are built from.

The per-sweep arithmetic lives in :mod:`gridbp._kernels`, which provides a
compiled extension and a NumPy fallback with identical semantics.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from . import _kernels
from .factor_graph import FactorGraph, Gaussian1D

__all__ = [
    "BpOptions",
    "BpResult",
    "BpNumericalError",
    "run_bp",
    "retrieval_profile",
    "write_trace_csv",
]


class BpNumericalError(ArithmeticError):
    """A message became NaN during a sweep (e.g. inf - inf in factor space)."""

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return f"{self.args[0]} (iteration {self.iteration})"


@dataclass(frozen=True)
class BpOptions:
    """Knobs for the sweep loop.

    ``tol_mean`` is in MW, ``tol_var`` in MW²; both bound the *sum* of
    absolute belief changes across all variables.  ``damping`` blends each
    new factor-to-variable message with the previous sweep's (0 = pure
    synchronous updates, which converged in every network studied here).
    ``record_trace`` keeps per-iteration convergence diagnostics.
    """

    max_iterations: int = 10000
    tol_mean: float = 1e-10
    tol_var: float = 1e-10
    damping: float = 0.0
    record_trace: bool = False

    def __post_init__(self) -> None:
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if not (self.tol_mean > 0.0 and self.tol_var > 0.0):
            raise ValueError("tolerances must be > 0")
        if not (0.0 <= self.damping < 1.0):
            raise ValueError("damping must be in [0, 1)")


@dataclass(frozen=True)
class BpResult:
    """Converged (or truncated) beliefs plus retrievability depths.

    ``first_finite_iter[l]`` is the first sweep whose belief on line ``l``
    had finite variance, or ``None`` if it never did.  ``trace`` is an
    ``(iterations, 3)`` array of ``(sum_delta_mean, sum_delta_var,
    finite_count)`` rows when tracing was requested, else ``None``.
    """

    beliefs: Dict[int, Gaussian1D]
    converged: bool
    iterations: int
    first_finite_iter: Dict[int, Optional[int]]
    trace: Optional[np.ndarray] = field(default=None, repr=False, compare=False)


def run_bp(
    graph: FactorGraph,
    opts: Optional[BpOptions] = None,
    *,
    backend: Optional[str] = None,
) -> BpResult:
    """Run synchronous BP to convergence (or ``max_iterations``).

    ``backend`` forces a specific kernel ("cython" or "python"); by default
    the compiled kernel is used when available.  Exceeding ``max_iterations``
    returns ``converged=False``; a NaN in any message raises
    :class:`BpNumericalError` carrying the offending iteration.
    """
    if opts is None:
        opts = BpOptions()
    packed = _kernels.pack_graph(graph)
    kernel = _kernels.load_backend(backend) if backend else _kernels.run_sweeps
    try:
        bel_mean, bel_var, converged, iterations, first_finite, trace = kernel(
            packed,
            opts.max_iterations,
            opts.tol_mean,
            opts.tol_var,
            opts.damping,
            opts.record_trace,
        )
    except BpNumericalError:
        raise
    except ArithmeticError as exc:
        message = str(exc.args[0]) if exc.args else "numerical failure"
        iteration = int(exc.args[1]) if len(exc.args) > 1 else -1
        raise BpNumericalError(message, iteration) from exc

    beliefs: Dict[int, Gaussian1D] = {}
    first: Dict[int, Optional[int]] = {}
    for idx, line_id in enumerate(packed.line_ids):
        beliefs[int(line_id)] = Gaussian1D(float(bel_mean[idx]), float(bel_var[idx]))
        n = int(first_finite[idx])
        first[int(line_id)] = n if n >= 0 else None
    return BpResult(
        beliefs=beliefs,
        converged=bool(converged),
        iterations=int(iterations),
        first_finite_iter=first,
        trace=trace,
    )


def retrieval_profile(result: BpResult, meas: "MeasurementSet") -> Dict[int, int]:
    """Cumulative count of indirectly retrieved variables per iteration depth.

    Only lines *without* a direct flow measurement are counted (those with
    one are trivially known after a single sweep).  The value at depth ``n``
    is the number of such lines whose belief variance first became finite at
    some iteration ≤ n, so the profile is nondecreasing and its last value is
    the total number of retrieved unmeasured lines.
    """
    missing_lines = [
        line_id
        for line_id, (_, variance) in sorted(meas.flow.items())
        if variance == float("inf")
    ]
    depths = sorted(
        result.first_finite_iter[line_id]
        for line_id in missing_lines
        if result.first_finite_iter.get(line_id) is not None
    )
    profile: Dict[int, int] = {}
    for count, n in enumerate(depths, start=1):
        profile[n] = count
    # Make cumulative over every depth that appears (dict insertion order is
    # ascending in n; duplicates collapse onto the largest count).
    return profile


def write_trace_csv(result: BpResult, path) -> None:
    """Dump the per-iteration convergence trace for debugging.

    Columns: iteration, sum_delta_mean, sum_delta_var, finite_count.
    Requires the run to have used ``record_trace=True``.
    """
    if result.trace is None:
        raise ValueError("run_bp was not asked to record a trace")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "sum_delta_mean", "sum_delta_var", "finite_count"])
        for i, (dmean, dvar, finite) in enumerate(result.trace, start=1):
            writer.writerow([i, repr(float(dmean)), repr(float(dvar)), int(finite)])
