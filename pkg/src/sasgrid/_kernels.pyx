# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: node labelling, the dense DC solve, and ``settle``.

Mirrors ``sasgrid._fallback``; ``sasgrid.kernels`` picks one at import time.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

DEF TOL = 1e-9

# settle() return codes
cdef enum:
    C_SETTLED = 0
    C_ISLANDING = 1
    C_UNSERVED = 2
    C_SINGULAR = 3

SETTLED = C_SETTLED
ISLANDING = C_ISLANDING
UNSERVED = C_UNSERVED
SINGULAR = C_SINGULAR


class KernelSingular(Exception):
    pass


cdef inline Py_ssize_t _find(Py_ssize_t[::1] parent, Py_ssize_t a) noexcept nogil:
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


cdef void _label(Py_ssize_t n, const int[::1] frm, const int[::1] to,
                 Py_ssize_t[::1] parent) noexcept nogil:
    cdef Py_ssize_t i, a, b
    for i in range(n):
        parent[i] = i
    for i in range(frm.shape[0]):
        if frm[i] < 0 or to[i] < 0:
            continue
        a = _find(parent, frm[i])
        b = _find(parent, to[i])
        # smaller root wins so labels are the component's lowest node
        if a < b:
            parent[b] = a
        elif b < a:
            parent[a] = b
    for i in range(n):
        parent[i] = _find(parent, i)


def label_nodes(Py_ssize_t n_nodes, const int[::1] frm, const int[::1] to):
    """Component label (lowest member node) for every node."""
    out = np.empty(n_nodes, dtype=np.intp)
    cdef Py_ssize_t[::1] parent = out
    _label(n_nodes, frm, to, parent)
    return out


cdef int _solve(Py_ssize_t n, const int[::1] frm, const int[::1] to,
                const double[::1] inv_x, const double[::1] inj,
                const unsigned char[::1] gen_node, Py_ssize_t[::1] lab,
                Py_ssize_t[::1] slack, double[:, ::1] m, double[::1] rhs,
                double[::1] bal, double[::1] flow) noexcept nogil:
    """Dense solve with one slack per island; returns 0 or SINGULAR."""
    cdef Py_ssize_t nl = frm.shape[0]
    cdef Py_ssize_t i, j, k, p, a, b
    cdef double y, piv, f, tmp, scale

    _label(n, frm, to, lab)
    for i in range(n):
        slack[i] = -1
    for i in range(n):
        if gen_node[i] and slack[lab[i]] < 0:
            slack[lab[i]] = i
    for i in range(n):
        if slack[lab[i]] < 0:
            slack[lab[i]] = lab[i]

    for i in range(n):
        for j in range(n):
            m[i, j] = 0.0
    for k in range(nl):
        a = frm[k]
        b = to[k]
        if a < 0 or b < 0:
            continue
        y = inv_x[k]
        m[a, a] += y
        m[b, b] += y
        m[a, b] -= y
        m[b, a] -= y

    scale = 0.0
    for i in range(n):
        if m[i, i] > scale:
            scale = m[i, i]
    if scale == 0.0:
        scale = 1.0

    # slack absorbs the island imbalance
    for i in range(n):
        bal[i] = inj[i]
    for i in range(n):
        if slack[lab[i]] == i:
            bal[i] = 0.0
    for i in range(n):
        if slack[lab[i]] != i:
            bal[slack[lab[i]]] -= inj[i]

    for i in range(n):
        if slack[lab[i]] == i:
            for j in range(n):
                m[i, j] = 0.0
            m[i, i] = 1.0
            rhs[i] = 0.0
        else:
            rhs[i] = inj[i]

    # Gaussian elimination with partial pivoting
    for k in range(n):
        p = k
        piv = fabs(m[k, k])
        for i in range(k + 1, n):
            if fabs(m[i, k]) > piv:
                piv = fabs(m[i, k])
                p = i
        if piv <= 1e-13 * scale:
            return C_SINGULAR
        if p != k:
            for j in range(k, n):
                tmp = m[k, j]
                m[k, j] = m[p, j]
                m[p, j] = tmp
            tmp = rhs[k]
            rhs[k] = rhs[p]
            rhs[p] = tmp
        for i in range(k + 1, n):
            f = m[i, k]
            if f == 0.0:
                continue
            f = f / m[k, k]
            for j in range(k + 1, n):
                m[i, j] -= f * m[k, j]
            rhs[i] -= f * rhs[k]
    for k in range(n - 1, -1, -1):
        tmp = rhs[k]
        for j in range(k + 1, n):
            tmp -= m[k, j] * rhs[j]
        rhs[k] = tmp / m[k, k]

    for k in range(nl):
        a = frm[k]
        b = to[k]
        if a < 0 or b < 0:
            flow[k] = 0.0
        else:
            flow[k] = (rhs[a] - rhs[b]) * inv_x[k]
    return 0


def dc_solve(Py_ssize_t n_nodes, const int[::1] frm, const int[::1] to,
             const double[::1] inv_x, const double[::1] inj,
             const unsigned char[::1] gen_node):
    """Solve B theta = P with one slack per island.

    Returns ``(theta, flow, balanced, label)``: angles, per-line flows
    (zero on lines with a negative endpoint), injections after each slack
    absorbed its island's imbalance, and node labels.
    """
    lab = np.empty(n_nodes, dtype=np.intp)
    slack = np.empty(n_nodes, dtype=np.intp)
    m = np.empty((n_nodes, n_nodes), dtype=np.float64)
    theta = np.empty(n_nodes, dtype=np.float64)
    bal = np.empty(n_nodes, dtype=np.float64)
    flow = np.empty(frm.shape[0], dtype=np.float64)
    if _solve(n_nodes, frm, to, inv_x, inj, gen_node, lab, slack, m, theta, bal, flow):
        raise KernelSingular("singular susceptance matrix")
    return theta, flow, bal, lab


cdef bint _waterfill(double target, Py_ssize_t[::1] idx, Py_ssize_t cnt,
                     const double[::1] offset, const double[::1] weight,
                     const double[::1] lo, const double[::1] hi,
                     double[::1] p, unsigned char[::1] free) noexcept nogil:
    """p[idx] = clip(offset + weight * lam) summing to target; False if impossible."""
    cdef Py_ssize_t it, j, g
    cdef double rem, wsum, osum, lam, total
    cdef bint moved
    for j in range(cnt):
        free[idx[j]] = 1
    for it in range(cnt + 1):
        rem = target
        wsum = 0.0
        osum = 0.0
        for j in range(cnt):
            g = idx[j]
            if free[g]:
                wsum += weight[g]
                osum += offset[g]
            else:
                rem -= p[g]
        if wsum <= 0.0:
            break
        lam = (rem - osum) / wsum
        for j in range(cnt):
            g = idx[j]
            if free[g]:
                p[g] = offset[g] + weight[g] * lam
        moved = False
        for j in range(cnt):
            g = idx[j]
            if free[g]:
                if p[g] > hi[g] + TOL:
                    p[g] = hi[g]
                    free[g] = 0
                    moved = True
                elif p[g] < lo[g] - TOL:
                    p[g] = lo[g]
                    free[g] = 0
                    moved = True
        if not moved:
            break
        for j in range(cnt):
            if free[idx[j]]:
                break
        else:
            break
    total = 0.0
    for j in range(cnt):
        total += p[idx[j]]
    return fabs(total - target) <= 1e-6 * (fabs(target) if fabs(target) > 1.0 else 1.0)


def settle(const cnp.int64_t[::1] slot_sub, Py_ssize_t n_nodes, Py_ssize_t n_line,
           signed char[::1] bus_of, unsigned char[::1] connected,
           cnp.int64_t[::1] line_cd, cnp.int64_t[::1] counter,
           const double[::1] inv_x, const double[::1] limit,
           const double[::1] p_min, const double[::1] p_max,
           const unsigned char[::1] renew, const double[::1] delta,
           const double[::1] avail, const double[::1] load_p, double base_mva,
           cnp.int64_t overload_steps, cnp.int64_t recovery_steps,
           double[::1] gen_p, double[::1] flow, double[::1] rho,
           unsigned char[::1] tripped, bint allow_islands=False):
    """Dispatch, solve and run overload protection until nothing trips.

    ``counter`` holds the counters before this step on entry and the
    updated ones on return.  Tripped lines are disconnected in place.
    Unless ``allow_islands``, elements spread over more than one electrical
    component count as islanding.  Returns SETTLED, ISLANDING, UNSERVED or
    SINGULAR.
    """
    cdef Py_ssize_t n_gen = p_min.shape[0], n_load = load_p.shape[0]
    cdef Py_ssize_t n_slots = slot_sub.shape[0]
    cdef Py_ssize_t e0 = 2 * n_line
    cdef Py_ssize_t i, g, l, k, r, cnt
    cdef double cut, net, lo_sum, hi_sum, ra, scale
    cdef int code
    cdef bint any_trip

    frm_a = np.empty(n_line, dtype=np.intc)
    to_a = np.empty(n_line, dtype=np.intc)
    cdef int[::1] frm = frm_a
    cdef int[::1] to = to_a
    node_a = np.empty(n_slots, dtype=np.intp)
    cdef Py_ssize_t[::1] node = node_a
    has_a = np.empty(n_nodes, dtype=np.uint8)
    cdef unsigned char[::1] has_line = has_a
    gflag_a = np.empty(n_nodes, dtype=np.uint8)
    cdef unsigned char[::1] gflag = gflag_a
    lab_a = np.empty(n_nodes, dtype=np.intp)
    cdef Py_ssize_t[::1] lab = lab_a
    slack_a = np.empty(n_nodes, dtype=np.intp)
    cdef Py_ssize_t[::1] slack = slack_a
    m_a = np.empty((n_nodes, n_nodes), dtype=np.float64)
    cdef double[:, ::1] m = m_a
    theta_a = np.empty(n_nodes, dtype=np.float64)
    cdef double[::1] theta = theta_a
    bal_a = np.empty(n_nodes, dtype=np.float64)
    cdef double[::1] bal = bal_a
    inj_a = np.empty(n_nodes, dtype=np.float64)
    cdef double[::1] inj = inj_a
    demand_a = np.empty(n_nodes, dtype=np.float64)
    cdef double[::1] demand = demand_a
    ren_a = np.empty(n_nodes, dtype=np.float64)
    cdef double[::1] ren_sum = ren_a
    seen_a = np.empty(n_nodes, dtype=np.uint8)
    cdef unsigned char[::1] seen = seen_a
    idx_a = np.empty(max(n_gen, 1), dtype=np.intp)
    cdef Py_ssize_t[::1] idx = idx_a
    free_a = np.empty(max(n_gen, 1), dtype=np.uint8)
    cdef unsigned char[::1] free = free_a
    pre_a = np.array(counter, dtype=np.int64)
    cdef cnp.int64_t[::1] pre = pre_a

    for k in range(n_line):
        tripped[k] = 0
    while True:
        for i in range(n_slots):
            if bus_of[i] == 0:
                node[i] = -1
            else:
                node[i] = 2 * slot_sub[i] + bus_of[i] - 1
        for i in range(n_nodes):
            has_line[i] = 0
            gflag[i] = 0
            seen[i] = 0
            demand[i] = 0.0
            ren_sum[i] = 0.0
            inj[i] = 0.0
        for k in range(n_line):
            frm[k] = <int>node[2 * k]
            to[k] = <int>node[2 * k + 1]
            if frm[k] >= 0:
                has_line[frm[k]] = 1
            if to[k] >= 0:
                has_line[to[k]] = 1
        for i in range(e0, n_slots):
            if node[i] < 0 or not has_line[node[i]]:
                return C_ISLANDING
        _label(n_nodes, frm, to, lab)
        if not allow_islands:
            for i in range(e0 + 1, n_slots):
                if lab[node[i]] != lab[node[e0]]:
                    return C_ISLANDING

        # per-island balance
        for l in range(n_load):
            r = lab[node[e0 + n_gen + l]]
            demand[r] += load_p[l]
            seen[r] = 1
        for g in range(n_gen):
            r = lab[node[e0 + g]]
            seen[r] = 1
            gen_p[g] = 0.0
            if renew[g]:
                ren_sum[r] += avail[g]
        for r in range(n_nodes):
            if not seen[r]:
                continue
            cnt = 0
            lo_sum = 0.0
            hi_sum = 0.0
            for g in range(n_gen):
                if not renew[g] and lab[node[e0 + g]] == r:
                    idx[cnt] = g
                    cnt += 1
                    lo_sum += p_min[g]
                    hi_sum += p_max[g]
            net = demand[r] - ren_sum[r]
            if net > hi_sum + TOL:
                return C_UNSERVED
            if net < lo_sum:
                cut = lo_sum - net
                if cut > ren_sum[r] + TOL:
                    return C_UNSERVED
                ra = (ren_sum[r] - cut) / ren_sum[r] if ren_sum[r] > 0.0 else 0.0
                net = lo_sum
            else:
                ra = 1.0
            for g in range(n_gen):
                if renew[g] and lab[node[e0 + g]] == r:
                    gen_p[g] = avail[g] * ra
            if cnt > 0:
                if not _waterfill(net, idx, cnt, delta, p_max, p_min, p_max, gen_p, free):
                    return C_UNSERVED

        for g in range(n_gen):
            inj[node[e0 + g]] += gen_p[g]
            gflag[node[e0 + g]] = 1
        for l in range(n_load):
            inj[node[e0 + n_gen + l]] -= load_p[l]
        for i in range(n_nodes):
            inj[i] = inj[i] / base_mva
        code = _solve(n_nodes, frm, to, inv_x, inj, gflag, lab, slack, m, theta, bal, flow)
        if code:
            return code

        any_trip = False
        for k in range(n_line):
            if connected[k]:
                rho[k] = fabs(flow[k]) / limit[k]
            else:
                rho[k] = 0.0
            if rho[k] > 1.0:
                counter[k] = pre[k] + 1
            else:
                counter[k] = 0
            if counter[k] >= overload_steps:
                any_trip = True
        if not any_trip:
            return C_SETTLED
        for k in range(n_line):
            if counter[k] >= overload_steps:
                bus_of[2 * k] = 0
                bus_of[2 * k + 1] = 0
                connected[k] = 0
                line_cd[k] = recovery_steps
                pre[k] = 0
                counter[k] = 0
                tripped[k] = 1
