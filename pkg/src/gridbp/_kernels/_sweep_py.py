"""Pure-NumPy synchronous sweep kernel (fallback backend).

Messages are held in natural parameters: precision ``p = 1/variance`` (0 for
an uninformative message) and ``h = mean * p``.  This keeps infinite
variances out of the arithmetic entirely: information only ever adds.
"""

from __future__ import annotations

import numpy as np


def run_sweeps(packed, max_iterations, tol_mean, tol_var, damping, record_trace):
    flow_var = packed.flow_var
    informative_flow = np.isfinite(flow_var)
    flow_prec = np.where(informative_flow, 1.0 / flow_var, 0.0)
    flow_h = np.where(informative_flow, packed.flow_z / flow_var, 0.0)

    fac_var = packed.fac_var
    fac_z = packed.fac_z
    fac_inf = ~np.isfinite(fac_var)
    fac_ptr = packed.fac_ptr
    starts = fac_ptr[:-1]
    edge_line = packed.edge_line
    edge_sign = packed.edge_sign
    edge_fac = packed.edge_fac
    sibling = packed.edge_sibling
    le = packed.line_edges
    n_lines = flow_var.shape[0]
    n_edges = edge_line.shape[0]

    f2v_prec = np.zeros(n_edges)
    f2v_h = np.zeros(n_edges)
    bel_mean = np.zeros(n_lines)
    bel_var = np.full(n_lines, np.inf)
    first_finite = np.full(n_lines, -1, np.int64)
    trace = np.empty((max_iterations, 3)) if record_trace else None

    converged = False
    iterations = 0
    for it in range(1, max_iterations + 1):
        iterations = it
        # Variables to factors: each line's message to one endpoint factor is
        # the product of its flow prior (first delivered at sweep 2, since
        # factor messages start uninformative) and the other endpoint's
        # previous message.
        if it == 1:
            n2f_prec = f2v_prec[sibling]
            n2f_h = f2v_h[sibling]
        else:
            n2f_prec = flow_prec[edge_line] + f2v_prec[sibling]
            n2f_h = flow_h[edge_line] + f2v_h[sibling]

        # Factors to variables.
        informative = n2f_prec > 0.0
        safe_prec = np.where(informative, n2f_prec, 1.0)
        v_in = np.where(informative, 1.0 / safe_prec, 0.0)
        sm_in = np.where(informative, edge_sign * n2f_h / safe_prec, 0.0)
        inf_in = (~informative).astype(np.int64)

        sum_v = np.add.reduceat(v_in, starts)
        sum_sm = np.add.reduceat(sm_in, starts)
        sum_inf = np.add.reduceat(inf_in, starts)

        others_inf = sum_inf[edge_fac] - inf_in
        out_informative = (others_inf == 0) & ~fac_inf[edge_fac]
        var_out = fac_var[edge_fac] + sum_v[edge_fac] - v_in
        mean_out = edge_sign * (fac_z[edge_fac] - (sum_sm[edge_fac] - sm_in))
        safe_var = np.where(out_informative, var_out, 1.0)
        new_prec = np.where(out_informative, 1.0 / safe_var, 0.0)
        new_h = np.where(out_informative, mean_out / safe_var, 0.0)

        if damping > 0.0:
            old_mean = np.where(f2v_prec > 0.0, f2v_h / np.where(f2v_prec > 0.0, f2v_prec, 1.0), 0.0)
            new_mean = np.where(new_prec > 0.0, new_h / np.where(new_prec > 0.0, new_prec, 1.0), 0.0)
            blended_prec = (1.0 - damping) * new_prec + damping * f2v_prec
            blended_mean = (1.0 - damping) * new_mean + damping * old_mean
            f2v_prec = blended_prec
            f2v_h = blended_mean * blended_prec
        else:
            f2v_prec = new_prec
            f2v_h = new_h

        # Beliefs: flow prior times both endpoint messages.
        bp = flow_prec + f2v_prec[le[:, 0]] + f2v_prec[le[:, 1]]
        bh = flow_h + f2v_h[le[:, 0]] + f2v_h[le[:, 1]]
        if np.isnan(bp).any() or np.isnan(bh).any():
            raise ArithmeticError("non-finite message", it)
        finite = bp > 0.0
        new_var = np.where(finite, 1.0 / np.where(finite, bp, 1.0), np.inf)
        new_mean = np.where(finite, bh / np.where(finite, bp, 1.0), 0.0)

        # inf - inf would be NaN; a pair of infinite variances counts as no
        # change, while an inf/finite pair keeps the sum at inf (not yet
        # converged).
        both_inf = np.isinf(new_var) & np.isinf(bel_var)
        dvar = float(
            np.sum(
                np.abs(
                    np.where(both_inf, 0.0, new_var)
                    - np.where(both_inf, 0.0, bel_var)
                )
            )
        )
        dmean = float(np.sum(np.abs(new_mean - bel_mean)))
        bel_var = new_var
        bel_mean = new_mean
        first_finite[finite & (first_finite < 0)] = it
        if record_trace:
            trace[it - 1] = (dmean, dvar, float(np.count_nonzero(finite)))
        if dmean < tol_mean and dvar < tol_var:
            converged = True
            break

    return (
        bel_mean,
        bel_var,
        converged,
        iterations,
        first_finite,
        trace[:iterations].copy() if record_trace else None,
    )
