# cython: boundscheck=False, wraparound=False, nonecheck=False
# cython: cdivision=True, initializedcheck=False, language_level=3
"""Compiled synchronous sweep kernel.

Same contract as the NumPy fallback (see the package docstring in
``gridbp._kernels``): messages in natural parameters (precision, h), one
variables-to-factors and one factors-to-variables pass per iteration,
convergence tested on the belief deltas.
"""

import numpy as np

from libc.math cimport INFINITY, fabs, isnan


def run_sweeps(packed, int max_iterations, double tol_mean, double tol_var,
               double damping, bint record_trace):
    cdef double[::1] flow_z = packed.flow_z
    cdef double[::1] flow_var = packed.flow_var
    cdef double[::1] fac_z = packed.fac_z
    cdef double[::1] fac_var = packed.fac_var
    cdef int[::1] fac_ptr = packed.fac_ptr
    cdef int[::1] edge_line = packed.edge_line
    cdef double[::1] edge_sign = packed.edge_sign
    cdef int[::1] edge_sibling = packed.edge_sibling
    cdef int[:, ::1] line_edges = packed.line_edges

    cdef Py_ssize_t n_lines = flow_var.shape[0]
    cdef Py_ssize_t n_edges = edge_line.shape[0]
    cdef Py_ssize_t n_facs = fac_z.shape[0]

    flow_prec_arr = np.zeros(n_lines)
    flow_h_arr = np.zeros(n_lines)
    cdef double[::1] flow_prec = flow_prec_arr
    cdef double[::1] flow_h = flow_h_arr
    cdef Py_ssize_t i
    for i in range(n_lines):
        if flow_var[i] < INFINITY:
            flow_prec[i] = 1.0 / flow_var[i]
            flow_h[i] = flow_z[i] / flow_var[i]

    f2v_prec_arr = np.zeros(n_edges)
    f2v_h_arr = np.zeros(n_edges)
    f2v_prec_new_arr = np.zeros(n_edges)
    f2v_h_new_arr = np.zeros(n_edges)
    n2f_prec_arr = np.zeros(n_edges)
    n2f_h_arr = np.zeros(n_edges)
    v_buf_arr = np.zeros(n_edges)
    sm_buf_arr = np.zeros(n_edges)
    cdef double[::1] f2v_prec = f2v_prec_arr
    cdef double[::1] f2v_h = f2v_h_arr
    cdef double[::1] f2v_prec_new = f2v_prec_new_arr
    cdef double[::1] f2v_h_new = f2v_h_new_arr
    cdef double[::1] n2f_prec = n2f_prec_arr
    cdef double[::1] n2f_h = n2f_h_arr
    cdef double[::1] v_buf = v_buf_arr
    cdef double[::1] sm_buf = sm_buf_arr

    bel_mean_arr = np.zeros(n_lines)
    bel_var_arr = np.full(n_lines, np.inf)
    first_finite_arr = np.full(n_lines, -1, np.int64)
    cdef double[::1] bel_mean = bel_mean_arr
    cdef double[::1] bel_var = bel_var_arr
    cdef long long[::1] first_finite = first_finite_arr

    trace_arr = np.empty((max_iterations if record_trace else 0, 3))
    cdef double[:, ::1] trace = trace_arr

    cdef bint converged = False
    cdef int it = 0
    cdef Py_ssize_t e, a, l, start, end
    cdef int inf_cnt, others_inf, finite_count
    cdef double p, h, v, sv, sm, fv, fz, var_out, mean_out
    cdef double v_self, m_self, out_p, out_h
    cdef double old_mean, new_mean_msg, bl_p, bl_m
    cdef double nv, nm, dmean, dvar
    cdef bint include_prior

    while it < max_iterations:
        it += 1
        include_prior = it > 1

        # Variables to factors: flow prior (from sweep 2 on) times the
        # sibling endpoint's previous message.
        for e in range(n_edges):
            l = edge_line[e]
            if include_prior:
                n2f_prec[e] = flow_prec[l] + f2v_prec[edge_sibling[e]]
                n2f_h[e] = flow_h[l] + f2v_h[edge_sibling[e]]
            else:
                n2f_prec[e] = f2v_prec[edge_sibling[e]]
                n2f_h[e] = f2v_h[edge_sibling[e]]

        # Factors to variables.
        for a in range(n_facs):
            start = fac_ptr[a]
            end = fac_ptr[a + 1]
            inf_cnt = 0
            sv = 0.0
            sm = 0.0
            for e in range(start, end):
                p = n2f_prec[e]
                if p > 0.0:
                    v = 1.0 / p
                    v_buf[e] = v
                    sm_buf[e] = edge_sign[e] * (n2f_h[e] / p)
                    sv += v
                    sm += sm_buf[e]
                else:
                    v_buf[e] = INFINITY
                    sm_buf[e] = 0.0
                    inf_cnt += 1
            fv = fac_var[a]
            fz = fac_z[a]
            for e in range(start, end):
                if fv == INFINITY:
                    out_p = 0.0
                    out_h = 0.0
                else:
                    if v_buf[e] < INFINITY:
                        others_inf = inf_cnt
                        v_self = v_buf[e]
                        m_self = sm_buf[e]
                    else:
                        others_inf = inf_cnt - 1
                        v_self = 0.0
                        m_self = 0.0
                    if others_inf > 0:
                        out_p = 0.0
                        out_h = 0.0
                    else:
                        var_out = fv + (sv - v_self)
                        mean_out = edge_sign[e] * (fz - (sm - m_self))
                        out_p = 1.0 / var_out
                        out_h = mean_out / var_out
                f2v_prec_new[e] = out_p
                f2v_h_new[e] = out_h

        if damping > 0.0:
            for e in range(n_edges):
                old_mean = f2v_h[e] / f2v_prec[e] if f2v_prec[e] > 0.0 else 0.0
                new_mean_msg = (
                    f2v_h_new[e] / f2v_prec_new[e]
                    if f2v_prec_new[e] > 0.0 else 0.0
                )
                bl_p = (1.0 - damping) * f2v_prec_new[e] + damping * f2v_prec[e]
                bl_m = (1.0 - damping) * new_mean_msg + damping * old_mean
                f2v_prec[e] = bl_p
                f2v_h[e] = bl_m * bl_p
        else:
            f2v_prec, f2v_prec_new = f2v_prec_new, f2v_prec
            f2v_h, f2v_h_new = f2v_h_new, f2v_h

        # Beliefs, convergence deltas, retrieval depths.
        dmean = 0.0
        dvar = 0.0
        finite_count = 0
        for l in range(n_lines):
            p = flow_prec[l] + f2v_prec[line_edges[l, 0]] + f2v_prec[line_edges[l, 1]]
            h = flow_h[l] + f2v_h[line_edges[l, 0]] + f2v_h[line_edges[l, 1]]
            if isnan(p) or isnan(h):
                raise ArithmeticError("non-finite message", it)
            if p > 0.0:
                nv = 1.0 / p
                nm = h / p
                finite_count += 1
                if first_finite[l] < 0:
                    first_finite[l] = it
            else:
                nv = INFINITY
                nm = 0.0
            if not (nv == INFINITY and bel_var[l] == INFINITY):
                dvar += fabs(nv - bel_var[l])
            dmean += fabs(nm - bel_mean[l])
            bel_var[l] = nv
            bel_mean[l] = nm
        if record_trace:
            trace[it - 1, 0] = dmean
            trace[it - 1, 1] = dvar
            trace[it - 1, 2] = finite_count
        if dmean < tol_mean and dvar < tol_var:
            converged = True
            break

    return (
        bel_mean_arr,
        bel_var_arr,
        bool(converged),
        it,
        first_finite_arr,
        trace_arr[:it].copy() if record_trace else None,
    )
