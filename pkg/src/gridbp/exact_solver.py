"""Weighted-least-squares oracles for flow estimation.

Two formulations are provided:

* :func:`wls_flows` works in the same state space as the BP engine (one
  variable per line flow) and minimizes the measurement-weighted quadratic
  objective directly.  It is the reference oracle for BP means, for
  retrievability (observability) and for exact posterior covariances.
* :func:`wls_angles` works in bus-angle space — the classical network
  formulation, where flows are derived from an angle state and the loop
  constraints are automatic — and reports the implied line flows.

Both return a :class:`WlsSolution`.  The precision matrix is factorized
sparsely when it has full rank; otherwise a dense symmetric eigendecomposition
identifies the observable subspace, and means/covariances are reported only
on retrievable variables (NaN elsewhere).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .factor_graph import FactorGraph, FlowMeas, InjMeas
from .grid_model import GridCase

__all__ = [
    "WlsSolution",
    "wls_flows",
    "wls_angles",
    "exact_covariance",
    "total_squared_error",
]

# Eigenvalues (or LU pivots) below this fraction of the largest are treated
# as rank deficiency; a variable is retrievable when its null-space mass is
# at most NULL_MASS_TOL.
RANK_TOL = 1e-10
NULL_MASS_TOL = 1e-8


@dataclass(frozen=True)
class WlsSolution:
    """Posterior summary of a weighted-least-squares solve.

    ``means`` is aligned with ``line_ids`` and holds NaN for variables
    outside the observable subspace; ``covariance`` is the posterior
    covariance restricted to the retrievable variables, in ``line_ids``
    order (``None`` when not requested).  ``residual`` is the minimized
    objective Σ (f_a(x̂) − z_a)² / (2σ_a²) over present measurements.
    """

    means: np.ndarray
    covariance: Optional[np.ndarray]
    retrievable_mask: np.ndarray
    residual: float
    line_ids: Tuple[int, ...] = field(default=())

    def mean_of(self, line_id: int) -> float:
        return float(self.means[self.line_ids.index(line_id)])

    def retrievable(self, line_id: int) -> bool:
        return bool(self.retrievable_mask[self.line_ids.index(line_id)])


def _factor_rows(graph: FactorGraph):
    """Yield (column indices, coefficients, z, variance) per finite factor."""
    col = {line_id: i for i, line_id in enumerate(graph.variables)}
    for factor in graph.factors:
        if not np.isfinite(factor.variance):
            continue
        if isinstance(factor, FlowMeas):
            yield (col[factor.line_id],), (1.0,), factor.z, factor.variance
        elif isinstance(factor, InjMeas):
            items = sorted(factor.signs.items())
            yield (
                tuple(col[l] for l, _ in items),
                tuple(float(s) for _, s in items),
                factor.z,
                factor.variance,
            )
        else:  # pragma: no cover - graph construction forbids this
            raise TypeError(f"unknown factor type {type(factor)!r}")


def _design(graph: FactorGraph):
    """Sparse design matrix A, weights 1/σ², and measurement vector z."""
    rows, cols, vals, zs, variances = [], [], [], [], []
    for r, (cidx, coeff, z, var) in enumerate(_factor_rows(graph)):
        for c, a in zip(cidx, coeff):
            rows.append(r)
            cols.append(c)
            vals.append(a)
        zs.append(z)
        variances.append(var)
    n = len(graph.variables)
    m = len(zs)
    a = sp.csr_matrix((vals, (rows, cols)), shape=(m, n))
    return a, np.asarray(variances, float), np.asarray(zs, float)


def _empty_solution(line_ids: Tuple[int, ...], want_cov: bool) -> WlsSolution:
    n = len(line_ids)
    return WlsSolution(
        means=np.full(n, np.nan),
        covariance=np.empty((0, 0)) if want_cov else None,
        retrievable_mask=np.zeros(n, bool),
        residual=0.0,
        line_ids=line_ids,
    )


def _solve_information(
    precision: sp.spmatrix,
    h: np.ndarray,
    *,
    want_cov: bool,
):
    """Solve P x = h with rank awareness.

    Returns ``(means, covariance_or_None, retrievable_mask)`` where means are
    NaN outside the observable subspace and the covariance (when requested)
    is the inverse of P restricted to retrievable coordinates.  The sparse LU
    fast path handles the full-rank case; rank deficiency falls back to a
    dense symmetric eigendecomposition.
    """
    n = precision.shape[0]
    if n == 0:
        return np.empty(0), (np.empty((0, 0)) if want_cov else None), np.zeros(0, bool)

    pc = precision.tocsc()
    if pc.nnz:
        try:
            lu = splu(pc)
            diag = np.abs(lu.U.diagonal())
            if diag.min() >= RANK_TOL * max(diag.max(), 1.0):
                means = lu.solve(h)
                cov = lu.solve(np.eye(n)) if want_cov else None
                if cov is not None:
                    cov = 0.5 * (cov + cov.T)
                return means, cov, np.ones(n, bool)
        except RuntimeError:
            pass  # structurally or numerically singular; use the dense path

    dense = pc.toarray()
    dense = 0.5 * (dense + dense.T)
    eigval, eigvec = scipy.linalg.eigh(dense)
    scale = max(float(eigval.max(initial=0.0)), 0.0)
    keep = eigval > RANK_TOL * scale if scale > 0.0 else np.zeros(n, bool)
    null_mass = np.sum(eigvec[:, ~keep] ** 2, axis=1)
    mask = null_mass <= NULL_MASS_TOL

    vr = eigvec[:, keep]
    inv_l = 1.0 / eigval[keep]
    means = vr @ (inv_l * (vr.T @ h))
    means = np.where(mask, means, np.nan)
    cov = None
    if want_cov:
        k = int(np.count_nonzero(mask))
        if k:
            vr_m = vr[mask]
            cov = (vr_m * inv_l) @ vr_m.T
            cov = 0.5 * (cov + cov.T)
        else:
            cov = np.empty((0, 0))
    return means, cov, mask


def wls_flows(graph: FactorGraph, *, compute_covariance: bool = True) -> WlsSolution:
    """Exact minimum of Σ (f_a(x) − z_a)²/(2σ_a²) over line-flow variables.

    The observable (retrievable) subspace is identified by rank-revealing
    factorization; means and, when requested, the posterior covariance are
    reported on it.  With no finite-variance measurement at all, the mask is
    empty and no exception is raised.
    """
    line_ids = tuple(graph.variables)
    a, variances, zs = _design(graph)
    if zs.size == 0:
        return _empty_solution(line_ids, compute_covariance)
    w = 1.0 / variances
    aw = a.T.multiply(w)  # n x m
    precision = (aw @ a).tocsc()
    h = aw @ zs
    means, cov, mask = _solve_information(
        precision, h, want_cov=compute_covariance
    )
    x = np.where(mask, means, 0.0)
    r = a @ x - zs
    # Residuals against measurements touching unobservable variables are not
    # meaningful; the objective restricted to the observable block is what
    # the solver actually minimized.
    touched = (np.abs(a) @ (~mask).astype(float)) != 0.0
    residual = float(np.sum(np.where(touched, 0.0, r * r * w / 2.0)))
    return WlsSolution(
        means=means,
        covariance=cov,
        retrievable_mask=mask,
        residual=residual,
        line_ids=line_ids,
    )


def _angle_design(case: GridCase, meas):
    """Angle-space design matrix over finite measurements plus flow map.

    Returns ``(a, variances, z, g)`` where ``a`` maps bus angles to measured
    quantities and ``g`` maps bus angles to all line flows (MW).
    """
    bus_index = {b.id: i for i, b in enumerate(case.buses)}
    nb = len(case.buses)
    nl = len(case.lines)
    g = sp.lil_matrix((nl, nb))
    for r, ln in enumerate(case.lines):
        k = case.base_mva * ln.susceptance
        g[r, bus_index[ln.from_bus]] = k
        g[r, bus_index[ln.to_bus]] = -k
    g = g.tocsr()

    rows = []
    variances = []
    zs = []
    line_row = {ln.id: i for i, ln in enumerate(case.lines)}
    for line_id, (z, var) in sorted(meas.flow.items()):
        if np.isfinite(var):
            rows.append(g.getrow(line_row[line_id]))
            variances.append(var)
            zs.append(z)
    incident = {b.id: [] for b in case.buses}
    for ln in case.lines:
        incident[ln.from_bus].append((ln, 1.0))
        incident[ln.to_bus].append((ln, -1.0))
    for bus_id, (z, var) in sorted(meas.injection.items()):
        if np.isfinite(var):
            row = sp.lil_matrix((1, nb))
            for ln, sign in incident[bus_id]:
                k = sign * case.base_mva * ln.susceptance
                row[0, bus_index[ln.from_bus]] += k
                row[0, bus_index[ln.to_bus]] -= k
            rows.append(row.tocsr())
            variances.append(var)
            zs.append(z)
    if rows:
        a = sp.vstack(rows, format="csr")
    else:
        a = sp.csr_matrix((0, nb))
    return a, np.asarray(variances, float), np.asarray(zs, float), g


def wls_angles(case: GridCase, meas, *, compute_covariance: bool = True) -> WlsSolution:
    """Classical state estimation: bus angles as state, flows derived.

    One reference angle per connected component (its lowest-numbered bus) is
    pinned to zero; reported flows are independent of that gauge choice.  An
    unobservable system degrades gracefully: the solve is rank-revealing and
    flows with any null-space component are masked out.
    """
    line_ids = tuple(ln.id for ln in case.lines)
    a, variances, zs, g = _angle_design(case, meas)
    nb = len(case.buses)
    bus_index = {b.id: i for i, b in enumerate(case.buses)}
    slack_cols = [bus_index[min(comp)] for comp in case.components]
    keep_cols = np.setdiff1d(np.arange(nb), slack_cols)

    if zs.size == 0:
        return _empty_solution(line_ids, compute_covariance)

    a_red = a[:, keep_cols]
    g_red = g.tocsr()[:, keep_cols]
    w = 1.0 / variances
    aw = a_red.T.multiply(w)
    precision = (aw @ a_red).tocsc()
    h = aw @ zs
    theta_red, cov_theta, theta_mask = _solve_information(
        precision, h, want_cov=compute_covariance
    )

    g_dense = g_red.toarray()
    # A flow is retrievable when its functional has no null-space component,
    # i.e. it only reads retrievable angle coordinates ... in the eigenbasis.
    # Reuse the mask logic: coordinates flagged non-retrievable carry NaN, so
    # any flow touching one inherits NaN unless the functional's weight on
    # the null space vanishes.  Compute via the same eigen split.
    dense_p = precision.toarray()
    dense_p = 0.5 * (dense_p + dense_p.T)
    eigval, eigvec = scipy.linalg.eigh(dense_p)
    scale = max(float(eigval.max(initial=0.0)), 0.0)
    keep = eigval > RANK_TOL * scale if scale > 0.0 else np.zeros(len(keep_cols), bool)
    null_vec = eigvec[:, ~keep]  # (n_red, n_null)
    if null_vec.shape[1]:
        row_norm = np.maximum(np.abs(g_dense).sum(axis=1), 1.0)
        flow_null = np.abs(g_dense @ null_vec).max(axis=1) / row_norm
        flow_mask = flow_null <= NULL_MASS_TOL
    else:
        flow_mask = np.ones(len(line_ids), bool)

    theta_full = np.where(theta_mask, theta_red, 0.0)
    flows = g_dense @ theta_full
    flows = np.where(flow_mask, flows, np.nan)

    cov = None
    if compute_covariance:
        if cov_theta is not None and cov_theta.size and theta_mask.all():
            gm = g_dense[flow_mask]
            cov = gm @ cov_theta @ gm.T
            cov = 0.5 * (cov + cov.T)
        elif cov_theta is not None:
            # Covariance restricted to retrievable angles only supports
            # flows whose functionals live entirely inside that block.
            vr = eigvec[:, keep]
            inv_l = 1.0 / eigval[keep]
            gm = g_dense[flow_mask] @ vr
            cov = (gm * inv_l) @ gm.T
            cov = 0.5 * (cov + cov.T)
        else:
            cov = np.empty((0, 0))

    x = np.where(theta_mask, theta_red, 0.0)
    r = a_red @ x - zs
    touched = (np.abs(a_red) @ (~theta_mask).astype(float)) != 0.0
    residual = float(np.sum(np.where(touched, 0.0, r * r * w / 2.0)))
    return WlsSolution(
        means=flows,
        covariance=cov,
        retrievable_mask=flow_mask,
        residual=residual,
        line_ids=line_ids,
    )


def exact_covariance(graph: FactorGraph, subset: Sequence[int]) -> np.ndarray:
    """Posterior covariance submatrix for the given line ids.

    The result depends only on the measurement *variances* and the topology,
    never on the measured values — calling with different z draws gives a
    bitwise-identical matrix.  Any non-retrievable subset member is an error
    naming the offending line.
    """
    solution = wls_flows(graph, compute_covariance=True)
    for line_id in subset:
        if line_id not in solution.line_ids:
            raise KeyError(f"line {line_id} not in graph")
        if not solution.retrievable(line_id):
            raise ValueError(f"line {line_id} is not retrievable")
    retrievable_ids = [
        line_id
        for line_id, ok in zip(solution.line_ids, solution.retrievable_mask)
        if ok
    ]
    pos = {line_id: i for i, line_id in enumerate(retrievable_ids)}
    idx = np.array([pos[line_id] for line_id in subset], int)
    return solution.covariance[np.ix_(idx, idx)]


def total_squared_error(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Σ (estimate − truth)² over entries where the estimate is finite."""
    est = np.asarray(estimate, float)
    tru = np.asarray(truth, float)
    ok = np.isfinite(est)
    d = est[ok] - tru[ok]
    return float(d @ d)
